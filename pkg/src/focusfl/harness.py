"""Experiment driver: runs, per-round metrics, comparisons and result files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import (
    FedAvgState,
    FocusState,
    Regime,
    fedavg_round,
    focus_round,
    max_stable_lr,
    sg_focus_round,
    tracking_residual,
)
from .participation import (
    ParticipationModel,
    SeededStream,
    averaging_weights,
    sample_round,
    schedule_digest,
)
from .problems import HeterogeneityProfile, RidgeProblem, generate_ridge

log = logging.getLogger(__name__)

ALGORITHMS = ("focus", "sg-focus", "fedavg")
PARTICIPATIONS = ("full", "bernoulli", "weighted", "uniform-m")
CSV_COLUMNS = ("round", "algo", "regime", "error_sq", "loss_gap", "grad_norm_sq",
               "consensus_err", "tracking_residual", "participants")
NUMERICAL_FLOOR = 1e-22


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    algo: str = "focus"
    participation: str = "full"
    m: int = 4
    p_min: float = 0.1
    p_max: float = 0.9
    weights: str = "linear"
    n_clients: int = 16
    dim: int = 100
    samples: int = 100
    lam: float = 0.01
    spread: float = 1.0
    homogeneous: bool = False
    noise: float = 0.1
    tau: int = 5
    eta: float = 2e-4
    rounds: int = 2000
    batch: int = 1
    seed: int = 7
    cadence: int = 1
    q_trials: int = 100_000

    def validate(self) -> "RunConfig":
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"algo must be one of {', '.join(ALGORITHMS)}; got {self.algo!r}")
        if self.participation not in PARTICIPATIONS:
            raise ConfigError(f"participation must be one of {', '.join(PARTICIPATIONS)}; got {self.participation!r}")
        for name in ("n_clients", "dim", "samples", "tau", "cadence", "q_trials", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.lam < 0 or self.noise < 0 or self.spread < 0:
            raise ConfigError("lam, noise and spread must be non-negative")
        if self.participation in ("weighted", "uniform-m") and not 1 <= self.m <= self.n_clients:
            raise ConfigError(f"m must satisfy 1 <= m <= n_clients={self.n_clients}")
        if self.participation == "bernoulli" and not 0 < self.p_min <= self.p_max <= 1:
            raise ConfigError("need 0 < p_min <= p_max <= 1")
        if self.algo == "sg-focus" and self.batch > self.samples:
            raise ConfigError("batch cannot exceed samples")
        self.sampling_weights()
        return self

    def sampling_weights(self) -> np.ndarray:
        if self.weights == "linear":
            return np.arange(1, self.n_clients + 1, dtype=float)
        try:
            w = np.array([float(v) for v in self.weights.split(",")])
        except ValueError:
            raise ConfigError(f"weights must be 'linear' or a comma list of numbers; got {self.weights!r}") from None
        if w.size != self.n_clients or np.any(w <= 0):
            raise ConfigError("weights must list n_clients positive numbers")
        return w

    @property
    def regime(self) -> str:
        return self.participation

    def problem_key(self) -> tuple:
        return (self.n_clients, self.dim, self.samples, self.lam, self.spread,
                self.homogeneous, self.noise, self.seed)

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            name = key.replace("-", "_")
            if name == "lambda":
                name = "lam"
            if name not in types:
                raise ConfigError(f"unknown configuration key {key!r}")
            kwargs[name] = _coerce(name, types[name], raw)
        return cls(**kwargs)


def _coerce(name, typ, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("bool", bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def format_config(config: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config.to_mapping().items())


def build_problem(config: RunConfig) -> RidgeProblem:
    profile = HeterogeneityProfile.homogeneous() if config.homogeneous else HeterogeneityProfile(config.spread)
    return generate_ridge(config.n_clients, config.dim, config.samples, config.lam, profile,
                          SeededStream(config.seed), noise=config.noise)


def build_participation(config: RunConfig) -> ParticipationModel:
    n = config.n_clients
    if config.participation == "full":
        return ParticipationModel.full(n)
    if config.participation == "bernoulli":
        return ParticipationModel.bernoulli(np.linspace(config.p_min, config.p_max, n))
    if config.participation == "uniform-m":
        return ParticipationModel.uniform(n, config.m)
    return ParticipationModel.weighted(config.sampling_weights(), config.m)


@dataclass
class MetricsRecord:
    round: int
    algo: str
    regime: str
    error_sq: float
    loss_gap: float
    grad_norm_sq: float
    consensus_err: float
    tracking_residual: float
    participants: int
    lyapunov: float | None = None

    def row(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


@dataclass
class RunResult:
    config: RunConfig
    records: list[MetricsRecord]
    q_hat: np.ndarray
    participation_digest: str
    warnings: list[str] = field(default_factory=list)
    delta_q_sq: float = 0.0
    sigma_g: float = 0.0


def loss_gap(problem: RidgeProblem, x: np.ndarray) -> float:
    # F is quadratic, so F(x) - F* is exactly the Hessian form of x - x*; this
    # avoids the cancellation of subtracting two nearly equal losses.
    e = x - problem.x_star
    return float(e @ (problem.H.mean(axis=0) @ e) + problem.lam * (e @ e))


def lyapunov_value(state, problem: RidgeProblem, regime, eta: float, tau: int,
                   previous_server_x: np.ndarray | None = None) -> float:
    """Psi (strongly convex) or Phi (PL) at the current round boundary.

    ``previous_server_x`` is the server model one round earlier; without it the
    consensus part of Psi is taken as zero.
    """
    regime = Regime(regime)
    N, L = problem.n_clients, problem.L
    x = state.server_x
    if regime in (Regime.STRONGLY_CONVEX, Regime.SG_STRONGLY_CONVEX):
        cons = 0.0 if previous_server_x is None else float(np.sum((state.client_x - previous_server_x) ** 2))
        return float(np.sum((x - problem.x_star) ** 2)) + (1 - 8 * eta * tau * L * N) * cons
    if regime is Regime.PL:
        cons = float(np.sum((state.client_x - x) ** 2))
        return loss_gap(problem, x) + (1 - 4 * eta * L ** 2) * cons
    raise ValueError(f"no Lyapunov function for regime {regime.value}")


def estimate_delta_q(gradients, q_hat, u=None) -> float:
    """Largest ``||sum_i q_i g_i - sum_i u_i g_i||^2`` over stacked client gradients.

    ``gradients`` is an iterable of ``(N, d)`` arrays (client rows only).
    """
    q = np.asarray(q_hat, dtype=float)
    worst = None
    for G in gradients:
        G = np.asarray(G, dtype=float)
        w = np.full(G.shape[0], 1.0 / G.shape[0]) if u is None else np.asarray(u, dtype=float)
        gap = (q - w) @ G
        val = float(gap @ gap)
        worst = val if worst is None else max(worst, val)
    if worst is None:
        raise ValueError("empty gradient trajectory")
    return worst


def _record(config, problem, state, q_hat, r, n_part, prev_x):
    x = state.server_x
    e = x - problem.x_star
    g = problem.global_gradient(x)
    if isinstance(state, FocusState):
        resid = tracking_residual(state)
        lyap = lyapunov_value(state, problem, Regime.STRONGLY_CONVEX, config.eta, config.tau, prev_x)
    else:
        resid, lyap = 0.0, None
    cons = float(q_hat @ np.sum((state.client_x - x) ** 2, axis=1))
    return MetricsRecord(r, config.algo, config.regime, float(e @ e), loss_gap(problem, x),
                         float(g @ g), cons, resid, n_part, lyap)


def run_experiment(config: RunConfig, problem: RidgeProblem | None = None, state=None) -> RunResult:
    """Run ``config.rounds`` rounds and record metrics every ``cadence`` rounds (and the last)."""
    config.validate()
    problem = problem or build_problem(config)
    model = build_participation(config)
    stream = SeededStream(config.seed)
    q = averaging_weights(model, config.q_trials, stream)
    warnings = []
    if config.algo != "fedavg":
        regime = Regime.SG_STRONGLY_CONVEX if config.algo == "sg-focus" else Regime.STRONGLY_CONVEX
        bound = max_stable_lr(regime, problem.L, problem.mu, problem.n_clients,
                              config.tau, max(q.minimum, 1e-12))
        if config.eta > bound.value:
            msg = (f"eta={config.eta:g} exceeds the {regime.value} bound {bound.value:.3e} "
                   f"(binding term {bound.binding})")
            warnings.append(msg)
            log.warning(msg)
    if state is None:
        state = FedAvgState.create(problem) if config.algo == "fedavg" else FocusState.create(problem)
    schedule = []
    records = [_record(config, problem, state, q.value, 0, 0, None)]
    delta_q = estimate_delta_q([problem.all_gradients(state.server_x)], q.value)
    for r in range(config.rounds):
        S = sample_round(model, r, stream)
        schedule.append(S)
        before = state.server_x.copy()
        if config.algo == "fedavg":
            fedavg_round(state, S, problem, config.eta, config.tau)
        elif config.algo == "focus":
            focus_round(state, S, problem, config.eta, config.tau)
        else:
            sg_focus_round(state, S, problem, config.eta, config.tau, config.batch, stream)
        done = r + 1
        if done % config.cadence == 0 or done == config.rounds:
            rec = _record(config, problem, state, q.value, done, len(S), before)
            if not all(math.isfinite(v) for v in (rec.error_sq, rec.loss_gap)):
                raise FloatingPointError(f"iterates diverged at round {done}")
            records.append(rec)
            delta_q = max(delta_q, estimate_delta_q([problem.all_gradients(state.server_x)], q.value))
    sigma_g = float(np.max(np.linalg.norm(
        problem.all_gradients(problem.x_star) - problem.global_gradient(problem.x_star), axis=1)))
    return RunResult(config, records, q.value, schedule_digest(schedule), warnings, delta_q, sigma_g)


@dataclass
class CompareResult:
    records: list[MetricsRecord]
    digests: dict[tuple[str, str], str]
    results: list[RunResult]


def compare(configs: list[RunConfig]) -> CompareResult:
    """Long-format table keyed by ``(regime, algo, round)``; all runs share one problem."""
    if not configs:
        raise ConfigError("compare needs at least one configuration")
    key = configs[0].problem_key()
    for c in configs[1:]:
        if c.problem_key() != key:
            raise ConfigError("compared runs must share the problem specification and seed")
    problem = build_problem(configs[0].validate())
    results = [run_experiment(c, problem) for c in configs]
    records = sorted((r for res in results for r in res.records),
                     key=lambda r: (r.regime, r.algo, r.round))
    digests = {(res.config.regime, res.config.algo): res.participation_digest for res in results}
    return CompareResult(records, digests, results)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _header_lines(header: dict | None) -> str:
    if header is None:
        return ""
    lines = [f"# focusfl {__version__}"]
    lines += [f"# {k} = {v}" for k, v in header.items()]
    return "\n".join(lines) + "\n"


def render_results(records, fmt: str = "csv", header: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(_header_lines(header))
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([_fmt(v) for v in rec.row().values()])
    elif fmt in ("jsonl", "json-lines"):
        for rec in records:
            buf.write(json.dumps(rec.row()) + "\n")
    else:
        raise ValueError(f"unknown result format {fmt!r}")
    return buf.getvalue()


def write_results(records, fmt: str, path, header: dict | None = None) -> None:
    """Write atomically: a temp file in the target directory is renamed over ``path``."""
    path = Path(path)
    text = render_results(records, fmt, header)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


_INT_COLS = {"round", "participants"}
_STR_COLS = {"algo", "regime"}


def _typed(row: dict) -> MetricsRecord:
    vals = {}
    for c in CSV_COLUMNS:
        v = row[c]
        vals[c] = v if c in _STR_COLS else int(v) if c in _INT_COLS else float(v)
    return MetricsRecord(**vals)


def read_results(path, fmt: str | None = None) -> list[MetricsRecord]:
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    if fmt == "csv":
        return [_typed(row) for row in csv.DictReader(lines)]
    return [_typed(json.loads(ln)) for ln in lines if ln.strip()]
