"""Shared builders for randomized test instances."""

from __future__ import annotations

import numpy as np

from ctxgames.game import GameSpec, JointProfile, LossVector, MixedStrategy
from ctxgames.metrics import RoundRecord


def random_simplex(rng, num_actions: int) -> MixedStrategy:
    cuts = np.sort(rng.random(num_actions - 1))
    return MixedStrategy(np.diff(np.concatenate([[0.0], cuts, [1.0]])))


def random_profile(rng, num_players: int, num_actions: int) -> JointProfile:
    return JointProfile(tuple(random_simplex(rng, num_actions) for _ in range(num_players)))


def random_spec(rng, num_players: int, num_actions: int, dim: int,
                num_contexts: int, margin: float = 0.9) -> GameSpec:
    features = rng.uniform(-1.0, 1.0, size=(num_players, num_actions**num_players, dim))
    contexts = rng.uniform(-1.0, 1.0, size=(num_contexts, dim))
    peak = np.abs(features @ contexts.T).max()
    features *= margin / peak
    return GameSpec(num_players, num_actions, dim, features, contexts)


def hand_trace(entries) -> list:
    """Build a trace from (realized_context, per-player strategy rows,
    per-player loss rows) triples; predictions default to the realization."""
    trace = []
    for t, (z, strat_rows, loss_rows) in enumerate(entries):
        strategies = JointProfile(tuple(MixedStrategy(np.asarray(row, dtype=float))
                                        for row in strat_rows))
        losses = tuple(LossVector(np.asarray(row, dtype=float)) for row in loss_rows)
        trace.append(RoundRecord(
            round_index=t,
            realized_context=z,
            predictions=tuple(z for _ in strat_rows),
            strategies=strategies,
            losses=losses,
        ))
    return trace


def random_trace(rng, num_players: int, num_actions: int, num_contexts: int,
                 horizon: int) -> list:
    entries = []
    for _ in range(horizon):
        z = int(rng.integers(num_contexts))
        strat_rows = [random_simplex(rng, num_actions).probs for _ in range(num_players)]
        loss_rows = [rng.uniform(-1.0, 1.0, size=num_actions) for _ in range(num_players)]
        entries.append((z, strat_rows, loss_rows))
    return hand_trace(entries)
