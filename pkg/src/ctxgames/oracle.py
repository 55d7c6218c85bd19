"""Brute-force reference implementations for cross-checking the fast paths.

Everything here recomputes quantities from first principles with plain
loops and its own index arithmetic. None of it calls into the game,
learning, or metrics modules; the only shared surface is the data types.
Slow on purpose, and fenced to small instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class OracleLimitError(ValueError):
    """Raised when an input is too large for exhaustive checking."""


@dataclass(frozen=True)
class SmallInstanceLimit:
    max_joint_actions: int = 4096
    max_rounds: int = 512


DEFAULT_LIMIT = SmallInstanceLimit()


def brute_expected_cost(spec, player, profile, context, limit=DEFAULT_LIMIT) -> float:
    """Expected cost by a plain sum over every joint action.

    Each term multiplies the per-player probabilities together by hand and
    looks the feature row up through manually computed lexicographic
    indices (player 0 most significant).
    """
    J = spec.num_players
    K = spec.num_actions
    if K**J > limit.max_joint_actions:
        raise OracleLimitError(f"{K**J} joint actions exceeds limit {limit.max_joint_actions}")
    z = spec.contexts[context]
    total = 0.0
    for joint in itertools.product(range(K), repeat=J):
        prob = 1.0
        for j, a in enumerate(joint):
            prob *= float(profile[j].probs[a])
        index = 0
        for a in joint:
            index = index * K + a
        cost = 0.0
        for i in range(spec.feature_dim):
            cost += float(spec.features[player, index, i]) * float(z[i])
        total += prob * cost
    return total


def simplex_grid(num_actions: int, resolution: float):
    """All probability vectors with entries that are multiples of
    `resolution` (stars and bars over n = round(1/resolution) units)."""
    n = int(round(1.0 / resolution))
    for cuts in itertools.combinations(range(n + num_actions - 1), num_actions - 1):
        counts = []
        prev = -1
        for c in cuts:
            counts.append(c - prev - 1)
            prev = c
        counts.append(n + num_actions - 2 - prev)
        yield np.array(counts, dtype=np.float64) / n


def grid_comparator(trace, player, context, resolution, limit=DEFAULT_LIMIT):
    """Best mixed strategy for one context's subsequence by exhaustive
    simplex-grid search. Returns (strategy vector, summed loss value)."""
    if len(trace) > limit.max_rounds:
        raise OracleLimitError(f"{len(trace)} rounds exceeds limit {limit.max_rounds}")
    if resolution < 0.01:
        raise OracleLimitError(f"resolution {resolution} below supported 0.01")
    records = [r for r in trace if r.realized_context == context]
    if records:
        K = records[0].losses[player].num_actions
        if K > 4:
            raise OracleLimitError(f"grid search supports K <= 4, got {K}")
        summed = np.zeros(K)
        for r in records:
            summed = summed + r.losses[player].values
    else:
        K = trace[0].losses[player].num_actions if trace else 2
        summed = np.zeros(K)

    best_w = None
    best_value = np.inf
    for w in simplex_grid(K, resolution):
        value = float(np.dot(w, summed))
        if value < best_value:
            best_value = value
            best_w = w
    return best_w, best_value


def exhaustive_cce_gap(trace, limit=DEFAULT_LIMIT) -> float:
    """Largest average gain any player could get by committing to a single
    action, enumerated round by round and deviation by deviation."""
    if len(trace) > limit.max_rounds:
        raise OracleLimitError(f"{len(trace)} rounds exceeds limit {limit.max_rounds}")
    if not trace:
        raise OracleLimitError("empty trace")
    J = len(trace[0].strategies)
    T = len(trace)
    gap = -np.inf
    for j in range(J):
        K = trace[0].losses[j].num_actions
        for k in range(K):
            total = 0.0
            for r in trace:
                played = 0.0
                for a in range(K):
                    played += float(r.strategies[j].probs[a]) * float(r.losses[j].values[a])
                total += played - float(r.losses[j].values[k])
            gap = max(gap, total / T)
    return float(gap)
