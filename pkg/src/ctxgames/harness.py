"""End-to-end experiment runner.

Builds a game from a file, an inline definition, or a named generator,
drives the round loop (nature picks a context, predictors guess it,
players play routed strategies and update), and writes per-round traces
plus a per-run summary CSV. Sweeps repeat that over a noise or step-size
axis across seeds, cells fully independent.

All randomness is derived from (config, run seed): declared seeds in the
config act as salts that are mixed with the run seed, so the pair
(config digest, seed) determines every output byte.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from .game import GameSpec, GameSpecError, game_from_dict, game_to_dict, load_game_file
from .learning import LearnerBank, iso_grpo_round
from .metrics import (
    MetricsError,
    RoundRecord,
    RunMetrics,
    best_per_context_comparator,
    compute_run_metrics,
    eta_rule,
)
from .prediction import (
    ContextProcessConfig,
    MistakeLedger,
    PredictionError,
    PredictorConfig,
    generate_contexts,
    predict,
    record_and_count,
)

SCHEMA_VERSION = 1
FLOAT_FMT = "%.12g"


class ConfigError(ValueError):
    """Invalid run configuration; messages carry the offending field path."""


def _mix64(*parts: int) -> int:
    """Stable 64-bit mix of integer parts (splitmix-style finalizer)."""
    h = 0x9E3779B97F4A7C15
    for part in parts:
        h ^= (part & 0xFFFFFFFFFFFFFFFF) + 0x9E3779B97F4A7C15 + ((h << 6) & 0xFFFFFFFFFFFFFFFF) + (h >> 2)
        h &= 0xFFFFFFFFFFFFFFFF
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 31
    return h


# ---------------------------------------------------------------------------
# Named game generators
# ---------------------------------------------------------------------------

def random_bilinear_game(seed: int, players: int = 2, actions: int = 3,
                         dim: int = 3, contexts: int = 2, margin: float = 0.95) -> GameSpec:
    """Dense random game: uniform features and context vectors, rescaled so
    the largest |<feature, context>| equals `margin` (< 1 keeps float
    headroom against the bounded-cost check)."""
    rng = np.random.default_rng(seed)
    features = rng.uniform(-1.0, 1.0, size=(players, actions**players, dim))
    ctx = rng.uniform(-1.0, 1.0, size=(contexts, dim))
    peak = np.abs(features @ ctx.T).max()
    features *= margin / peak
    return GameSpec(players, actions, dim, features, ctx)


def zero_sum_game(actions: int = 2, scale: float = 0.9, seed=None) -> GameSpec:
    """Two-player zero-sum game with a single context.

    Without a seed, the payoff matrix is the K x K match/mismatch matrix
    (diagonal +1, off-diagonal -1/(K-1), times `scale`), whose unique
    equilibrium is uniform play for both players. With a seed, the matrix
    is uniform random in [-scale, scale].
    """
    if seed is None:
        matrix = np.full((actions, actions), -scale / (actions - 1))
        np.fill_diagonal(matrix, scale)
    else:
        matrix = np.random.default_rng(seed).uniform(-scale, scale, size=(actions, actions))
    features = np.empty((2, actions * actions, 1))
    for a in range(actions):
        for b in range(actions):
            features[0, a * actions + b, 0] = matrix[a, b]
            features[1, a * actions + b, 0] = -matrix[a, b]
    return GameSpec(2, actions, 1, features, np.array([[1.0]]))


def opposed_contexts_game(actions: int = 3, scale: float = 0.9) -> GameSpec:
    """Two-player, two-context demo where the contexts invert each other's
    preferred action.

    Features are one-hot in each player's own action, so loss vectors are
    constant within a context; context 0 rewards action 0 and punishes
    action 1, context 1 does the opposite. Routing play through the wrong
    context's learner is therefore visibly costly while within-context
    variation stays exactly zero.
    """
    dim = actions
    count = actions * actions
    features = np.zeros((2, count, dim))
    for a in range(actions):
        for b in range(actions):
            features[0, a * actions + b, a] = 1.0
            features[1, a * actions + b, b] = 1.0
    z0 = np.zeros(dim)
    z0[0], z0[1] = -scale, scale
    z1 = -z0
    return GameSpec(2, actions, dim, features, np.stack([z0, z1]))


GENERATORS = {
    "random_bilinear": random_bilinear_game,
    "zero_sum_2p": zero_sum_game,
    "opposed_contexts": opposed_contexts_game,
}


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    axis: str  # "p" or "eta"
    values: tuple


@dataclass(frozen=True)
class RunConfig:
    game: dict
    horizon: int
    eta: object  # float or "rule"
    context_process: ContextProcessConfig
    predictors: tuple[PredictorConfig, ...]
    seeds: tuple[int, ...]
    output: str
    sweep: SweepConfig | None = None
    raw: dict = None

    def resolve_game(self) -> GameSpec:
        return _resolve_game(self.game)


def _resolve_game(source: dict) -> GameSpec:
    if "path" in source:
        return load_game_file(source["path"])
    if "inline" in source:
        return game_from_dict(source["inline"])
    if "generator" in source:
        params = dict(source["generator"])
        name = params.pop("name", None)
        if name not in GENERATORS:
            raise ConfigError(f"game.generator.name: unknown generator {name!r}")
        try:
            return GENERATORS[name](**params)
        except TypeError as exc:
            raise ConfigError(f"game.generator: {exc}") from exc
    raise ConfigError("game: must provide one of path, inline, generator")


def _require(data: dict, key: str, path: str):
    if key not in data:
        raise ConfigError(f"{path}{key}: missing required field")
    return data[key]


def parse_config(data: dict) -> RunConfig:
    """Validate a raw config dict and normalize it into a RunConfig."""
    if not isinstance(data, dict):
        raise ConfigError("config: must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")

    game = _require(data, "game", "")
    if not isinstance(game, dict):
        raise ConfigError("game: must be an object")

    horizon = _require(data, "horizon", "")
    if not isinstance(horizon, int) or horizon < 1:
        raise ConfigError(f"horizon: must be a positive integer, got {horizon!r}")

    eta = data.get("eta", "rule")
    if eta != "rule":
        try:
            eta = float(eta)
        except (TypeError, ValueError):
            raise ConfigError(f"eta: must be a number or 'rule', got {eta!r}")
        if not 0.0 < eta <= 1.0:
            raise ConfigError(f"eta: must be in (0, 1], got {eta}")

    process_raw = _require(data, "context_process", "")
    try:
        process = ContextProcessConfig(
            kind=_require(process_raw, "kind", "context_process."),
            transition=process_raw.get("transition", ()),
            sequence=process_raw.get("sequence", ()),
            seed=int(process_raw.get("seed", 0)),
        )
    except PredictionError as exc:
        raise ConfigError(f"context_process: {exc}") from exc

    predictors_raw = _require(data, "predictors", "")
    if isinstance(predictors_raw, dict):
        predictors_raw = [predictors_raw]
    if not predictors_raw:
        raise ConfigError("predictors: must list at least one predictor")
    predictors = []
    for i, entry in enumerate(predictors_raw):
        try:
            predictors.append(PredictorConfig(
                kind=_require(entry, "kind", f"predictors[{i}]."),
                p=float(entry.get("p", 0.0)),
                sequence=entry.get("sequence", ()),
                seed=int(entry.get("seed", 0)),
                shared_stream=bool(entry.get("shared_stream", False)),
            ))
        except PredictionError as exc:
            raise ConfigError(f"predictors[{i}]: {exc}") from exc

    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds: must be a nonempty list of integers")
    seeds = tuple(int(s) for s in seeds)

    sweep = None
    if data.get("sweep") is not None:
        sweep_raw = data["sweep"]
        axis = _require(sweep_raw, "axis", "sweep.")
        if axis not in ("p", "eta"):
            raise ConfigError(f"sweep.axis: must be 'p' or 'eta', got {axis!r}")
        values = _require(sweep_raw, "values", "sweep.")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values: must be a nonempty list")
        sweep = SweepConfig(axis=axis, values=tuple(float(v) for v in values))

    output = data.get("output", "out")

    config = RunConfig(
        game=game,
        horizon=horizon,
        eta=eta,
        context_process=process,
        predictors=tuple(predictors),
        seeds=seeds,
        output=str(output),
        sweep=sweep,
        raw=data,
    )
    _validate_against_game(config)
    return config


def _validate_against_game(config: RunConfig) -> None:
    try:
        spec = config.resolve_game()
    except GameSpecError as exc:
        raise ConfigError(f"game: {exc}") from exc
    predictors = _broadcast_predictors(config, spec)
    for i, pred in enumerate(predictors):
        try:
            pred.validate(spec.num_contexts, config.horizon)
        except PredictionError as exc:
            raise ConfigError(f"predictors[{i}]: {exc}") from exc
    if config.context_process.kind == "markov":
        matrix = np.asarray(config.context_process.transition, dtype=np.float64)
        m = spec.num_contexts
        if matrix.shape != (m, m):
            raise ConfigError(
                f"context_process.transition: must be {m}x{m}, got {matrix.shape}"
            )
        if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("context_process.transition: rows must sum to 1 within 1e-9")
    if config.context_process.kind == "script":
        if len(config.context_process.sequence) < config.horizon:
            raise ConfigError("context_process.sequence: shorter than horizon")


def _broadcast_predictors(config: RunConfig, spec: GameSpec) -> tuple:
    preds = config.predictors
    if len(preds) == 1 and spec.num_players > 1:
        return tuple(preds[0] for _ in range(spec.num_players))
    if len(preds) != spec.num_players:
        raise ConfigError(
            f"predictors: expected 1 or {spec.num_players} entries, got {len(preds)}"
        )
    return preds


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file: invalid JSON ({exc})") from exc
    return parse_config(data)


def canonical_config(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_digest(data: dict) -> str:
    # The output directory says where results land, not what the run is.
    semantic = {k: v for k, v in data.items() if k != "output"}
    return hashlib.sha256(canonical_config(semantic).encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------

def _effective_predictor(pred: PredictorConfig, run_seed: int) -> PredictorConfig:
    """Mix the run seed into the predictor's declared stream salt."""
    if pred.kind != "noisy":
        return pred
    return replace(pred, seed=_mix64(run_seed, pred.seed, 0xA11CE))


def _effective_process(process: ContextProcessConfig, run_seed: int) -> ContextProcessConfig:
    if process.kind != "markov":
        return process
    return ContextProcessConfig(
        kind=process.kind,
        transition=process.transition,
        sequence=process.sequence,
        seed=_mix64(run_seed, process.seed, 0xC0117E),
    )


def simulate(spec: GameSpec, horizon: int, eta: float, contexts_seq,
             predictors) -> tuple[list, MistakeLedger, LearnerBank]:
    """Drive the round loop and return (trace, ledger, final bank)."""
    J = spec.num_players
    m = spec.num_contexts
    bank = LearnerBank.fresh(J, m, spec.num_actions, eta)
    ledger = MistakeLedger(horizon, J)
    trace = []
    for t in range(horizon):
        z = int(contexts_seq[t])
        history = contexts_seq[:t]
        preds = [predict(predictors[j], j, t, z, history, m) for j in range(J)]
        for j in range(J):
            record_and_count(ledger, t, j, preds[j], z)
        profile, losses, bank = iso_grpo_round(bank, preds, z, spec)
        trace.append(RoundRecord(
            round_index=t,
            realized_context=z,
            predictions=tuple(preds),
            strategies=profile,
            losses=tuple(losses),
        ))
    return trace, ledger, bank


def _pick_eta(config: RunConfig, spec: GameSpec, contexts_seq, predictors):
    """Explicit eta, or the two-pass rule: pilot at eta = 1, then apply the
    step-size rule to the measured mistake and variation totals."""
    if config.eta != "rule":
        return float(config.eta), None
    pilot_trace, _, _ = simulate(spec, config.horizon, 1.0, contexts_seq, predictors)
    pilot = compute_run_metrics(pilot_trace, 1.0, spec.num_contexts, config.horizon)
    mean_mistakes = float(np.mean(pilot.mistakes))
    mean_sum_var = float(np.mean([sum(v) for v in pilot.variation]))
    eta = eta_rule(spec.num_contexts, spec.num_actions, mean_mistakes, mean_sum_var)
    return eta, (pilot_trace, pilot)


def run_single(config: RunConfig, seed: int, out_dir=None, sweep_value=None,
               write_files: bool = True):
    """Execute one run; optionally write trace/config files.

    Returns (trace_path, RunMetrics, trace). trace_path is None when
    write_files is false.
    """
    spec = config.resolve_game()
    predictors = tuple(
        _effective_predictor(p, seed) for p in _broadcast_predictors(config, spec)
    )
    process = _effective_process(config.context_process, seed)
    contexts_seq = generate_contexts(process, spec.num_contexts, config.horizon)

    eta, pilot = _pick_eta(config, spec, contexts_seq, predictors)
    trace, ledger, _ = simulate(spec, config.horizon, eta, contexts_seq, predictors)
    run_metrics = compute_run_metrics(trace, eta, spec.num_contexts, config.horizon)

    # Ledger counts and trace-derived counts must agree.
    if tuple(int(v) for v in ledger.per_player_mistakes) != run_metrics.mistakes:
        raise MetricsError("mistake ledger disagrees with trace recount")

    trace_path = None
    if write_files:
        out_dir = out_dir or config.output
        os.makedirs(out_dir, exist_ok=True)
        run_id = _run_id(config, seed, sweep_value)
        trace_path = os.path.join(out_dir, f"trace_{run_id}.csv")
        _write_atomic(trace_path, _trace_csv(trace, run_metrics))
        if pilot is not None:
            pilot_path = os.path.join(out_dir, f"trace_{run_id}_pilot.csv")
            pilot_metrics = pilot[1]
            _write_atomic(pilot_path, _trace_csv(pilot[0], pilot_metrics))
    return trace_path, run_metrics, trace


def _run_id(config: RunConfig, seed: int, sweep_value=None) -> str:
    payload = dict(config.raw or {})
    if sweep_value is not None:
        payload = dict(payload, _sweep_value=sweep_value)
    return f"{config_digest(payload)}_s{seed}"


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    return str(value)


def _write_atomic(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _trace_csv(trace, run_metrics: RunMetrics) -> str:
    J = run_metrics.num_players
    K = run_metrics.num_actions
    comparators = {}
    for z in range(run_metrics.num_contexts):
        comparators[z] = [best_per_context_comparator(trace, j, z) for j in range(J)]

    header = ["t", "Z"]
    for j in range(J):
        header.append(f"zhat_p{j}")
        header.append(f"miss_p{j}")
        header.extend(f"w_p{j}_a{k}" for k in range(K))
        header.extend(f"l_p{j}_a{k}" for k in range(K))
        header.append(f"inst_regret_p{j}")

    lines = [",".join(header)]
    for r in trace:
        row = [str(r.round_index + 1), str(r.realized_context)]
        for j in range(J):
            pred = r.predictions[j]
            row.append(str(pred))
            row.append("1" if pred != r.realized_context else "0")
            row.extend(_fmt(x) for x in r.strategies[j].probs)
            row.extend(_fmt(x) for x in r.losses[j].values)
            comp = comparators[r.realized_context][j]
            inst = float(np.dot(r.strategies[j].probs - comp.probs, r.losses[j].values))
            row.append(_fmt(inst))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def summary_header(num_players: int, num_contexts: int) -> list:
    cols = ["run_id", "seed", "players", "actions", "contexts", "horizon", "eta", "noise_p"]
    cols += [f"mistakes_p{j}" for j in range(num_players)]
    cols += [f"ctx_regret_p{j}" for j in range(num_players)]
    cols += [f"ext_regret_p{j}" for j in range(num_players)]
    for j in range(num_players):
        cols += [f"var_p{j}_z{z}" for z in range(num_contexts)]
    for j in range(num_players):
        cols += [f"term_a_p{j}", f"term_b_p{j}", f"term_c_p{j}",
                 f"bound_total_p{j}", f"bound_slack2_p{j}"]
    cols += ["total_bound_ok", "slack2_bound_ok", "cce_epsilon", "cce_bound_sum",
             "cce_bound_max", "sweep_value", "status"]
    return cols


def summary_row(run_id: str, seed, rm: RunMetrics, noise_p: float,
                sweep_value=None, status: str = "ok") -> list:
    row = [run_id, seed, rm.num_players, rm.num_actions, rm.num_contexts,
           rm.horizon, rm.eta, noise_p]
    row += list(rm.mistakes)
    row += list(rm.contextual_regret)
    row += list(rm.external_regret)
    for j in range(rm.num_players):
        row += list(rm.variation[j])
    for j in range(rm.num_players):
        b = rm.bounds[j]
        row += [b.term_a, b.term_b, b.term_c, b.total, b.total_slack2]
    row += [all(rm.total_bound_ok), all(rm.slack2_bound_ok),
            rm.cce_epsilon, rm.cce_bound_sum, rm.cce_bound_max,
            "" if sweep_value is None else sweep_value, status]
    return row


def _config_noise_p(predictors) -> float:
    ps = [p.p for p in predictors if p.kind == "noisy"]
    return max(ps) if ps else 0.0


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def apply_sweep_value(config: RunConfig, value: float) -> RunConfig:
    """Cell config for one sweep value (noise p or step size eta)."""
    if config.sweep is None:
        raise ConfigError("sweep: no sweep axis configured")
    if config.sweep.axis == "eta":
        if not 0.0 < value <= 1.0:
            raise ConfigError(f"sweep.values: eta {value} outside (0, 1]")
        return replace(config, eta=float(value))
    patched = []
    for pred in config.predictors:
        if pred.kind == "noisy":
            patched.append(replace(pred, p=float(value)))
        else:
            patched.append(pred)
    if not any(p.kind == "noisy" for p in patched):
        raise ConfigError("sweep.axis 'p' requires at least one noisy predictor")
    return replace(config, predictors=tuple(patched))


def _sweep_cell(raw_config: dict, value: float, seed: int, out_dir: str):
    """Worker entry point; re-parses the config so cells pickle cleanly."""
    try:
        config = parse_config(raw_config)
        cell = apply_sweep_value(config, value) if config.sweep else config
        run_id = _run_id(cell, seed, sweep_value=value)
        _, rm, _ = run_single(cell, seed, out_dir=out_dir, sweep_value=value)
        noise_p = value if (config.sweep and config.sweep.axis == "p") \
            else _config_noise_p(_broadcast_predictors(cell, cell.resolve_game()))
        return value, seed, summary_row(run_id, seed, rm, noise_p, sweep_value=value), None
    except (ConfigError, MetricsError, GameSpecError, PredictionError,
            ValueError, OSError) as exc:
        return value, seed, None, f"{type(exc).__name__}: {exc}"


def run_sweep(config: RunConfig, threads: int = 1):
    """Run every (sweep value, seed) cell and write summary.csv.

    Returns (summary path, number of failed cells). Cells are independent;
    the summary writer is the single serialization point and rows keep the
    fixed (sweep value, seed) order regardless of completion order.
    """
    if config.sweep is None:
        raise ConfigError("sweep: config has no sweep axis")
    out_dir = config.output
    os.makedirs(out_dir, exist_ok=True)
    _write_atomic(
        os.path.join(out_dir, "config_echo.json"),
        json.dumps({"digest": config_digest(config.raw), "config": config.raw},
                   sort_keys=True, indent=2) + "\n",
    )

    cells = [(value, seed) for value in config.sweep.values for seed in config.seeds]
    results = {}
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {
                pool.submit(_sweep_cell, config.raw, value, seed, out_dir): (value, seed)
                for value, seed in cells
            }
            for fut in concurrent.futures.as_completed(futures):
                value, seed, row, error = fut.result()
                results[(value, seed)] = (row, error)
    else:
        for value, seed in cells:
            value, seed, row, error = _sweep_cell(config.raw, value, seed, out_dir)
            results[(value, seed)] = (row, error)

    spec = config.resolve_game()
    header = summary_header(spec.num_players, spec.num_contexts)
    lines = [",".join(header)]
    failures = 0
    numeric_rows = {}
    for value, seed in cells:
        row, error = results[(value, seed)]
        if error is not None:
            failures += 1
            stub = ["failed", seed] + [""] * (len(header) - 4) + [value, f"error:{error}"]
            lines.append(",".join(_fmt(v) for v in stub))
            continue
        lines.append(",".join(_fmt(v) for v in row))
        numeric_rows.setdefault(value, []).append(row)

    # Per-value mean / stderr block over seeds, numeric columns only.
    for value in config.sweep.values:
        rows = numeric_rows.get(value, [])
        if not rows:
            continue
        for stat in ("mean", "stderr"):
            agg = [f"{stat}[{_fmt(value)}]", ""]
            for col in range(2, len(header) - 1):
                values = [r[col] for r in rows]
                if all(isinstance(v, (bool, int, float, np.integer, np.floating)) for v in values):
                    arr = np.asarray([float(v) for v in values])
                    if stat == "mean":
                        agg.append(arr.mean())
                    else:
                        agg.append(arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0)
                else:
                    agg.append("")
            agg.append(f"agg_{stat}")
            lines.append(",".join(_fmt(v) for v in agg))

    summary_path = os.path.join(out_dir, "summary.csv")
    _write_atomic(summary_path, "\n".join(lines) + "\n")
    return summary_path, failures


def run_command(config: RunConfig, seed=None, out_dir=None):
    """Single-run entry point used by the CLI run verb; also writes a
    one-row summary.csv next to the trace."""
    out_dir = out_dir or config.output
    os.makedirs(out_dir, exist_ok=True)
    _write_atomic(
        os.path.join(out_dir, "config_echo.json"),
        json.dumps({"digest": config_digest(config.raw), "config": config.raw},
                   sort_keys=True, indent=2) + "\n",
    )
    seed = config.seeds[0] if seed is None else int(seed)
    spec = config.resolve_game()
    trace_path, rm, _ = run_single(config, seed, out_dir=out_dir)
    run_id = _run_id(config, seed)
    header = summary_header(spec.num_players, spec.num_contexts)
    noise_p = _config_noise_p(_broadcast_predictors(config, spec))
    row = summary_row(run_id, seed, rm, noise_p)
    text = ",".join(header) + "\n" + ",".join(_fmt(v) for v in row) + "\n"
    _write_atomic(os.path.join(out_dir, "summary.csv"), text)
    return trace_path, rm
