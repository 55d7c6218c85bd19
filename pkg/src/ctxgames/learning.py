"""Per-context optimistic hedge learners with prediction-based routing.

Each player keeps one learner per context. A round routes *play* through
the learner of the predicted context and routes the *update* through the
learner of the realized context; every other learner is left untouched
(iso-grpo routing). Learner state is the cumulative loss plus a one-step
optimism hint, so the played distribution is

    probs[k]  proportional to  exp(-eta * (cum_loss[k] + hint[k]))

computed in log space. The hint is the last loss observed within the same
context (zero before the first update), which makes the update an
optimistic multiplicative-weights step whose stability cost is driven by
consecutive within-context loss differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import COST_BOUND_TOL, GameSpec, JointProfile, LossVector, MixedStrategy
from .game import loss_vector as game_loss_vector


@dataclass(frozen=True)
class ContextLearnerState:
    """Snapshot of one (player, context) learner."""

    cumulative_loss: np.ndarray
    optimism_hint: np.ndarray
    updates_applied: int


@dataclass(frozen=True)
class LearnerBank:
    """All (player, context) learner states for one run, plus the shared
    step size. Immutable: updates return a new bank."""

    eta: float
    cum_loss: np.ndarray = field(repr=False)  # (J, m, K)
    hint: np.ndarray = field(repr=False)      # (J, m, K)
    updates: np.ndarray = field(repr=False)   # (J, m) int64

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        for name in ("cum_loss", "hint", "updates"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.cum_loss.shape != self.hint.shape or self.cum_loss.shape[:2] != self.updates.shape:
            raise ValueError("inconsistent bank array shapes")

    @staticmethod
    def fresh(num_players: int, num_contexts: int, num_actions: int, eta: float) -> "LearnerBank":
        return LearnerBank(
            eta=eta,
            cum_loss=np.zeros((num_players, num_contexts, num_actions)),
            hint=np.zeros((num_players, num_contexts, num_actions)),
            updates=np.zeros((num_players, num_contexts), dtype=np.int64),
        )

    @property
    def num_players(self) -> int:
        return self.cum_loss.shape[0]

    @property
    def num_contexts(self) -> int:
        return self.cum_loss.shape[1]

    @property
    def num_actions(self) -> int:
        return self.cum_loss.shape[2]

    def state(self, player: int, context: int) -> ContextLearnerState:
        self._check_indices(player, context)
        return ContextLearnerState(
            cumulative_loss=self.cum_loss[player, context].copy(),
            optimism_hint=self.hint[player, context].copy(),
            updates_applied=int(self.updates[player, context]),
        )

    def _check_indices(self, player: int, context: int) -> None:
        if not 0 <= player < self.num_players:
            raise IndexError(f"player {player} out of range [0, {self.num_players})")
        if not 0 <= context < self.num_contexts:
            raise IndexError(f"context {context} out of range [0, {self.num_contexts})")

    def to_snapshot(self) -> dict:
        """JSON-ready snapshot; floats round-trip exactly through repr."""
        return {
            "eta": self.eta,
            "states": [
                [
                    {
                        "cumulative_loss": list(self.cum_loss[j, z]),
                        "hint": list(self.hint[j, z]),
                        "updates": int(self.updates[j, z]),
                    }
                    for z in range(self.num_contexts)
                ]
                for j in range(self.num_players)
            ],
        }

    @staticmethod
    def from_snapshot(data: dict) -> "LearnerBank":
        states = data["states"]
        J = len(states)
        m = len(states[0])
        K = len(states[0][0]["cumulative_loss"])
        cum = np.empty((J, m, K))
        hint = np.empty((J, m, K))
        updates = np.empty((J, m), dtype=np.int64)
        for j in range(J):
            for z in range(m):
                cell = states[j][z]
                cum[j, z] = cell["cumulative_loss"]
                hint[j, z] = cell["hint"]
                updates[j, z] = cell["updates"]
        return LearnerBank(eta=float(data["eta"]), cum_loss=cum, hint=hint, updates=updates)


def current_distribution(bank: LearnerBank, player: int, context: int) -> MixedStrategy:
    """Optimistic-hedge distribution of one learner, in log space with
    max-subtraction so arbitrarily long horizons cannot overflow."""
    bank._check_indices(player, context)
    logits = -bank.eta * (bank.cum_loss[player, context] + bank.hint[player, context])
    logits = logits - logits.max()
    weights = np.exp(logits)
    return MixedStrategy(weights / weights.sum())


def apply_update(bank: LearnerBank, player: int, realized_context: int, loss: LossVector) -> LearnerBank:
    """Feed one loss vector to the realized context's learner.

    Adds the loss into that learner's cumulative loss, resets its optimism
    hint to the just-observed loss, and bumps its update count. Every other
    (player, context) state is carried over bit-identically.
    """
    bank._check_indices(player, realized_context)
    values = loss.values
    if values.shape[0] != bank.num_actions:
        raise ValueError(f"loss has {values.shape[0]} entries, bank expects {bank.num_actions}")
    if np.any(np.abs(values) > 1.0 + COST_BOUND_TOL):
        raise ValueError(f"loss entries outside [-1, 1]: {values}")

    cum = bank.cum_loss.copy()
    hint = bank.hint.copy()
    updates = bank.updates.copy()
    cum[player, realized_context] += values
    hint[player, realized_context] = values
    updates[player, realized_context] += 1
    return LearnerBank(eta=bank.eta, cum_loss=cum, hint=hint, updates=updates)


def iso_grpo_round(bank: LearnerBank, predictions, realized_context: int, spec: GameSpec):
    """One simultaneous round of routed play and updates for all players.

    Every player j plays the current distribution of the learner indexed
    by its *predicted* context (all reads against the pre-round bank),
    then the realized per-action losses are computed exactly from the
    opponents' just-selected strategies at the *realized* context, and all
    updates land in the realized context's learners.

    Returns (JointProfile, list[LossVector], updated bank).
    """
    J = spec.num_players
    if len(predictions) != J:
        raise ValueError(f"expected {J} predictions, got {len(predictions)}")
    if bank.num_players != J or bank.num_actions != spec.num_actions:
        raise ValueError("bank shape does not match game")

    strategies = [current_distribution(bank, j, predictions[j]) for j in range(J)]
    profile = JointProfile(tuple(strategies))

    losses = []
    for j in range(J):
        opponents = [strategies[i] for i in range(J) if i != j]
        losses.append(game_loss_vector(spec, j, opponents, realized_context))

    cum = bank.cum_loss.copy()
    hint = bank.hint.copy()
    updates = bank.updates.copy()
    for j in range(J):
        cum[j, realized_context] += losses[j].values
        hint[j, realized_context] = losses[j].values
        updates[j, realized_context] += 1
    new_bank = LearnerBank(eta=bank.eta, cum_loss=cum, hint=hint, updates=updates)
    return profile, losses, new_bank
