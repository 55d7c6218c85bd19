"""Context prediction, misprediction accounting, and context processes.

Predictors supply each player's per-round context guess. The noisy kind
corrupts the realized context with probability p, always to a uniformly
random *different* context, so p is exactly the per-round mistake
probability. Randomness is counter-based (Philox keyed by seed/player,
counter = round), which makes every draw a pure function of
(seed, player, round) regardless of execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

PREDICTOR_KINDS = ("oracle", "noisy", "scripted", "majority")
CONTEXT_PROCESS_KINDS = ("cycle", "markov", "script")


class PredictionError(ValueError):
    """Raised on invalid predictor or context-process configuration."""


def _round_rng(seed: int, player_key: int, round_index: int) -> np.random.Generator:
    key = (seed & _MASK64) | ((player_key & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=round_index << 128))


@dataclass(frozen=True)
class PredictorConfig:
    """How one player's predictions are produced.

    kind: oracle | noisy | scripted | majority. Majority (the most
    frequent realized context so far, ties to the lowest index) is the
    stand-in for a learned online predictor.
    p: corruption probability (noisy only).
    sequence: per-round context indices (scripted only).
    seed: stream seed (noisy only).
    shared_stream: noisy players draw from one shared stream instead of
        independent per-player streams.
    """

    kind: str
    p: float = 0.0
    sequence: tuple = ()
    seed: int = 0
    shared_stream: bool = False

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise PredictionError(f"unknown predictor kind {self.kind!r}")
        if self.kind == "noisy" and not 0.0 <= self.p <= 1.0:
            raise PredictionError(f"noise probability must be in [0, 1], got {self.p}")
        object.__setattr__(self, "sequence", tuple(int(v) for v in self.sequence))

    def validate(self, num_contexts: int, horizon: int) -> None:
        """Checks that need the game/run shape."""
        if self.kind == "noisy" and self.p > 0.0 and num_contexts < 2:
            raise PredictionError(
                "noisy predictor with p > 0 needs at least 2 contexts"
            )
        if self.kind == "scripted":
            if len(self.sequence) < horizon:
                raise PredictionError(
                    f"scripted sequence has {len(self.sequence)} entries, horizon is {horizon}"
                )
            for t, v in enumerate(self.sequence[:horizon]):
                if not 0 <= v < num_contexts:
                    raise PredictionError(f"scripted sequence[{t}] = {v} out of range")


def predict(config: PredictorConfig, player: int, round_index: int,
            realized_context: int, history, num_contexts: int) -> int:
    """Player's context prediction for one round.

    `history` holds the realized contexts of rounds 0..round_index-1 only;
    the realized_context argument is consulted by the oracle and noisy
    kinds alone (they corrupt the truth), never by scripted or majority.
    """
    if config.kind == "oracle":
        return realized_context
    if config.kind == "noisy":
        if config.p == 0.0:
            return realized_context
        if num_contexts < 2:
            raise PredictionError("noisy predictor with p > 0 needs at least 2 contexts")
        player_key = 0 if config.shared_stream else player + 1
        rng = _round_rng(config.seed, player_key, round_index)
        if rng.random() >= config.p:
            return realized_context
        other = int(rng.integers(num_contexts - 1))
        return other if other < realized_context else other + 1
    if config.kind == "scripted":
        return config.sequence[round_index]
    if config.kind == "majority":
        if round_index == 0 or not len(history):
            return 0
        counts = np.bincount(np.asarray(history[:round_index], dtype=np.int64))
        return int(np.argmax(counts))  # argmax ties break to lowest index
    raise PredictionError(f"unknown predictor kind {config.kind!r}")


class MistakeLedger:
    """Per-round, per-player misprediction flags and counts.

    Single writer: each (round, player) cell is written exactly once.
    """

    def __init__(self, horizon: int, num_players: int):
        self.horizon = horizon
        self.num_players = num_players
        self.per_round_flags = np.zeros((horizon, num_players), dtype=bool)
        self.per_player_mistakes = np.zeros(num_players, dtype=np.int64)
        self._written = np.zeros((horizon, num_players), dtype=bool)


def record_and_count(ledger: MistakeLedger, round_index: int, player: int,
                     predicted: int, realized: int) -> MistakeLedger:
    """Record one prediction outcome; rejects double writes."""
    if not 0 <= round_index < ledger.horizon:
        raise PredictionError(f"round {round_index} outside horizon {ledger.horizon}")
    if not 0 <= player < ledger.num_players:
        raise PredictionError(f"player {player} out of range")
    if ledger._written[round_index, player]:
        raise PredictionError(f"cell (round {round_index}, player {player}) already written")
    ledger._written[round_index, player] = True
    flag = predicted != realized
    ledger.per_round_flags[round_index, player] = flag
    if flag:
        ledger.per_player_mistakes[player] += 1
    return ledger


@dataclass(frozen=True)
class ContextProcessConfig:
    """How nature's realized context sequence is produced.

    cycle: Z_t = t mod m. markov: seeded chain over m states started at
    state 0, rows of `transition` sum to 1 within 1e-9. script: explicit
    sequence.
    """

    kind: str
    transition: tuple = ()
    sequence: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CONTEXT_PROCESS_KINDS:
            raise PredictionError(f"unknown context process kind {self.kind!r}")
        object.__setattr__(self, "sequence", tuple(int(v) for v in self.sequence))
        object.__setattr__(
            self, "transition", tuple(tuple(float(x) for x in row) for row in self.transition)
        )


def generate_contexts(process: ContextProcessConfig, num_contexts: int, horizon: int) -> np.ndarray:
    """Realized context indices for rounds 0..horizon-1."""
    m = num_contexts
    if process.kind == "cycle":
        return np.arange(horizon, dtype=np.int64) % m
    if process.kind == "script":
        if len(process.sequence) < horizon:
            raise PredictionError(
                f"context script has {len(process.sequence)} entries, horizon is {horizon}"
            )
        seq = np.asarray(process.sequence[:horizon], dtype=np.int64)
        if seq.size and (seq.min() < 0 or seq.max() >= m):
            raise PredictionError("context script entry out of range")
        return seq
    if process.kind == "markov":
        matrix = np.asarray(process.transition, dtype=np.float64)
        if matrix.shape != (m, m):
            raise PredictionError(f"transition matrix must be {m}x{m}, got {matrix.shape}")
        if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-9):
            raise PredictionError("transition rows must be nonnegative and sum to 1")
        cdf = np.cumsum(matrix, axis=1)
        rng = _round_rng(process.seed, 0, 0)
        out = np.empty(horizon, dtype=np.int64)
        state = 0
        for t in range(horizon):
            out[t] = state
            state = int(np.searchsorted(cdf[state], rng.random(), side="right"))
            state = min(state, m - 1)
        return out
    raise PredictionError(f"unknown context process kind {process.kind!r}")
