"""Self-check suites behind ``focusfl verify``."""

from __future__ import annotations

import itertools
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .algorithms import (
    FedAvgState,
    FocusState,
    fedavg_round,
    focus_round,
    run_fedavg_stacked,
    run_focus_stacked,
    tracking_residual,
)
from .participation import ParticipationModel, SeededStream, sample_schedule
from .problems import HeterogeneityProfile, generate_ridge
from .stochastic_graph import (
    MaskVariant,
    build_assign_matrix,
    build_average_matrix,
    build_collect_matrix,
    build_doubly_matrix,
    build_local_mask,
    consensus_vector,
    matrix_power_consensus,
)


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.suite}/{self.name}  {self.detail}".rstrip()


def _small_problem(seed: int, n: int = 6):
    return generate_ridge(n, 8, 12, 0.1, HeterogeneityProfile(1.0), SeededStream(seed))


def _regimes(n: int):
    return {
        "full": ParticipationModel.full(n),
        "uniform-m": ParticipationModel.uniform(n, 2),
        "weighted": ParticipationModel.weighted(np.arange(1, n + 1), 2),
        "bernoulli": ParticipationModel.bernoulli(np.linspace(0.1, 0.9, n)),
    }


def suite_stochasticity(seed: int) -> list[Check]:
    out = []
    ok = True
    for n in range(1, 9):
        ones = np.ones(n + 1)
        for size in range(n + 1):
            for S in itertools.combinations(range(1, n + 1), size):
                R = build_assign_matrix(S, n).entries
                C = build_collect_matrix(S, n).entries
                D = build_local_mask(S, n, MaskVariant.FEDAVG).entries
                ok &= np.array_equal(R @ ones, ones) and np.array_equal(ones @ C, ones)
                ok &= np.array_equal(C, R.T) and np.array_equal(D @ D, D)
                if S:
                    A = build_average_matrix(S, n).entries
                    W = build_doubly_matrix(S, n).entries
                    ok &= np.allclose(A @ ones, ones, atol=1e-12, rtol=0)
                    ok &= np.allclose(W @ ones, ones, atol=1e-12, rtol=0)
                    ok &= np.allclose(ones @ W, ones, atol=1e-12, rtol=0)
    out.append(Check("stochasticity", "exhaustive-subsets", bool(ok), "N=1..8"))
    example = 0.5 * np.array([[1, 0, 1, 0], [1, 1, 0, 0], [1, 0, 1, 0], [1, 0, 0, 1]], dtype=float)
    p = consensus_vector(example)
    out.append(Check("stochasticity", "power-limit", bool(np.allclose(p, [0.5, 0, 0.5, 0], atol=1e-10, rtol=0)),
                     f"p={np.round(p, 12).tolist()}"))
    rng = np.random.default_rng(seed)
    n = 6
    P = np.eye(n + 1)
    for _ in range(100):
        S = np.flatnonzero(rng.random(n) < 0.5) + 1
        P = P @ build_assign_matrix(S, n).entries
    out.append(Check("stochasticity", "row-products", bool(np.allclose(P.sum(axis=1), 1, atol=1e-10, rtol=0))))
    v = rng.standard_normal(n + 1)
    total = v.sum()
    for _ in range(50):
        S = np.flatnonzero(rng.random(n) < 0.5) + 1
        v = build_collect_matrix(S, n).entries @ v
    out.append(Check("stochasticity", "mass-preservation", bool(abs(v.sum() - total) <= 1e-12 * (1 + abs(total)))))
    return out


def suite_tracking(seed: int, round_fn: Callable | None = None) -> list[Check]:
    round_fn = round_fn or focus_round
    problem = _small_problem(seed)
    out = []
    for name, model in _regimes(problem.n_clients).items():
        state = FocusState.create(problem)
        worst = 0.0
        for S in sample_schedule(model, 200, SeededStream(seed)):
            round_fn(state, S, problem, 5e-3, 3)
            worst = max(worst, tracking_residual(state) / (1 + np.linalg.norm(state.server_y)))
        out.append(Check("tracking", f"ledger-{name}", worst <= 1e-9, f"max relative residual {worst:.2e}"))
    sched = sample_schedule(_regimes(problem.n_clients)["bernoulli"], 50, SeededStream(seed))
    _, gap = run_focus_stacked(problem, sched, 5e-3, 3, check_tracking=True)
    out.append(Check("tracking", "stacked-column-sum", gap <= 1e-9, f"max relative gap {gap:.2e}"))
    return out


def suite_equivalence(seed: int) -> list[Check]:
    problem = _small_problem(seed)
    out = []
    eta, tau, rounds = 5e-3, 3, 30
    for name, model in _regimes(problem.n_clients).items():
        sched = sample_schedule(model, rounds, SeededStream(seed))
        st = FocusState.create(problem)
        traj = [st.server_x.copy()]
        for S in sched:
            focus_round(st, S, problem, eta, tau)
            traj.append(st.server_x.copy())
        err = float(np.max(np.abs(np.array(traj) - run_focus_stacked(problem, sched, eta, tau))))
        out.append(Check("equivalence", f"focus-{name}", err <= 1e-12, f"max |diff| {err:.1e}"))
        fs = FedAvgState.create(problem)
        traj = [fs.server_x.copy()]
        for S in sched:
            fedavg_round(fs, S, problem, eta, tau)
            traj.append(fs.server_x.copy())
        err = float(np.max(np.abs(np.array(traj) - run_fedavg_stacked(problem, sched, eta, tau))))
        out.append(Check("equivalence", f"fedavg-{name}", err <= 1e-12, f"max |diff| {err:.1e}"))
    return out


def suite_fixed_point(seed: int) -> list[Check]:
    problem = _small_problem(seed)
    out = []
    for name, model in _regimes(problem.n_clients).items():
        st = FocusState.at_optimum(problem)
        worst = 0.0
        for S in sample_schedule(model, 200, SeededStream(seed)):
            focus_round(st, S, problem, 5e-3, 3)
            worst = max(worst, float(np.sum((st.server_x - problem.x_star) ** 2)))
        out.append(Check("fixed-point", name, worst <= 1e-24, f"max error_sq {worst:.1e}"))
    return out


SUITES = {
    "stochasticity": suite_stochasticity,
    "tracking": suite_tracking,
    "equivalence": suite_equivalence,
    "fixed-point": suite_fixed_point,
}


def run_suites(names=None, seed: int = 0) -> list[Check]:
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}")
    return [c for n in names for c in SUITES[n](seed)]
