"""Stacked (N+1)-row matrix forms of FedAvg and FOCUS.

These are reference recursions: they materialise the mixing matrices and
update every node at every iteration, which is wasteful but leaves no room
for bookkeeping shortcuts. Row 0 is the server, whose gradient row is zero.

Iterations are zero-based, ``k = r*tau + t`` with ``t = 0..tau-1``. FOCUS is
written in the order-switched form (tracker first, then model)::

    Y <- C_k (Y + grad(X) - G_prev)
    X <- R_k (X - eta * D_k Y)

with ``C_k = C(S_r)`` and ``R_k = R(S_{r+1})`` at ``t = tau-1`` (identity
otherwise), and the initial pull ``X_0 = R(S_0) X_init``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..problems import RidgeProblem
from ..stochastic_graph import (
    MaskVariant,
    ParticipantSet,
    build_assign_matrix,
    build_average_matrix,
    build_collect_all_matrix,
    build_collect_matrix,
    build_fedavg_condensed_matrix,
    build_local_mask,
)


class ScheduleError(ValueError):
    pass


@dataclass(eq=False)
class StackedState:
    X: np.ndarray
    Y: np.ndarray
    G_prev: np.ndarray

    @property
    def server_x(self) -> np.ndarray:
        return self.X[0]

    def copy(self) -> "StackedState":
        return StackedState(self.X.copy(), self.Y.copy(), self.G_prev.copy())


def stacked_gradient(problem: RidgeProblem, X: np.ndarray) -> np.ndarray:
    G = np.zeros_like(X)
    G[1:] = problem.all_gradients(X[1:])
    return G


def _round_of(k: int, tau: int, schedule) -> tuple[int, int, ParticipantSet]:
    if tau < 1 or k < 0:
        raise ScheduleError("need tau >= 1 and k >= 0")
    r, t = divmod(k, tau)
    if r >= len(schedule):
        raise ScheduleError(f"iteration {k} belongs to round {r}, beyond the {len(schedule)}-round schedule")
    S = schedule[r]
    if isinstance(S, ParticipantSet) and S.round != r:
        raise ScheduleError(f"schedule entry {r} is labelled round {S.round}")
    return r, t, S


def _next_set(schedule, r: int):
    return schedule[r + 1] if r + 1 < len(schedule) else ()


def init_fedavg_stacked(problem: RidgeProblem, x0=None) -> StackedState:
    """All rows start at the server model."""
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, dtype=float)
    X = np.tile(x0, (problem.n_clients + 1, 1))
    return StackedState(X, np.zeros_like(X), np.zeros_like(X))


def fedavg_matrix_step(stacked: StackedState, k: int, schedule, eta: float,
                       problem: RidgeProblem, tau: int) -> StackedState:
    """Pull / masked local step / aggregate, with pull at t=0 and average at t=tau-1."""
    r, t, S = _round_of(k, tau, schedule)
    n = problem.n_clients
    Z = build_assign_matrix(S, n) @ stacked.X if t == 0 else stacked.X
    D = build_local_mask(S, n, MaskVariant.FEDAVG, k, tau).entries
    Z = Z - eta * (D @ stacked_gradient(problem, Z))
    if t == tau - 1 and len(S):
        Z = build_average_matrix(S, n) @ Z
    stacked.X = Z
    return stacked


def fedavg_condensed_step(stacked: StackedState, k: int, schedule, eta: float,
                          problem: RidgeProblem, tau: int) -> StackedState:
    """Single-line form: everyone steps, then ``W(S_r)`` mixes at the round end."""
    r, t, S = _round_of(k, tau, schedule)
    X = stacked.X - eta * stacked_gradient(problem, stacked.X)
    if t == tau - 1:
        X = build_fedavg_condensed_matrix(S, problem.n_clients) @ X
    stacked.X = X
    return stacked


def init_focus_stacked(problem: RidgeProblem, schedule, x0=None, client_x0=None,
                       warm_start: bool = False) -> StackedState:
    """Initial stack matching :meth:`FocusState.create` with the same arguments.

    Cold start takes ``G_prev = 0`` (stored gradients of zero). Warm start
    takes ``G_prev = grad(X_init)`` and puts their sum on the server tracker,
    which keeps every non-participant tracker row at exactly zero.
    """
    n, d = problem.n_clients, problem.dim
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    X = np.empty((n + 1, d))
    X[0] = x0
    X[1:] = np.tile(x0, (n, 1)) if client_x0 is None else client_x0
    Y = np.zeros_like(X)
    G = stacked_gradient(problem, X) if warm_start else np.zeros_like(X)
    Y[0] = G.sum(axis=0)
    S0 = schedule[0] if len(schedule) else ()
    return StackedState(build_assign_matrix(S0, n) @ X, Y, G)


def focus_matrix_step(stacked: StackedState, k: int, schedule, eta: float,
                      problem: RidgeProblem, tau: int, collect: str = "participants") -> StackedState:
    """One iteration of the order-switched push-pull recursion.

    ``collect="all"`` uses the collect-everything matrix instead of ``C(S_r)``;
    it gives the same iterates whenever non-participant tracker rows are zero
    (true under a warm start, not under a cold one).
    """
    r, t, S = _round_of(k, tau, schedule)
    n = problem.n_clients
    G = stacked_gradient(problem, stacked.X)
    Y = stacked.Y + G - stacked.G_prev
    last = t == tau - 1
    if last:
        C = build_collect_all_matrix(n) if collect == "all" else build_collect_matrix(S, n)
        Y = C @ Y
    D = build_local_mask(S, n, MaskVariant.FOCUS, k, tau).entries
    X = stacked.X - eta * (D @ Y)
    if last:
        X = build_assign_matrix(_next_set(schedule, r), n) @ X
    stacked.X, stacked.Y, stacked.G_prev = X, Y, G
    return stacked


def run_focus_stacked(problem: RidgeProblem, schedule, eta: float, tau: int, x0=None,
                      collect: str = "participants", warm_start: bool = False,
                      check_tracking: bool = False):
    """Server model after each round (index 0 = initial); optionally the worst tracking gap."""
    st = init_focus_stacked(problem, schedule, x0, warm_start=warm_start)
    traj = [st.X[0].copy()]
    worst = 0.0
    for k in range(len(schedule) * tau):
        focus_matrix_step(st, k, schedule, eta, problem, tau, collect)
        if check_tracking:
            gap = np.linalg.norm(st.Y.sum(axis=0) - st.G_prev.sum(axis=0))
            worst = max(worst, gap / (1.0 + np.linalg.norm(st.Y[0])))
        if k % tau == tau - 1:
            traj.append(st.X[0].copy())
    traj = np.array(traj)
    return (traj, worst) if check_tracking else traj


def run_fedavg_stacked(problem: RidgeProblem, schedule, eta: float, tau: int, x0=None,
                       condensed: bool = False) -> np.ndarray:
    st = init_fedavg_stacked(problem, x0)
    step = fedavg_condensed_step if condensed else fedavg_matrix_step
    traj = [st.X[0].copy()]
    for k in range(len(schedule) * tau):
        step(st, k, schedule, eta, problem, tau)
        if k % tau == tau - 1:
            traj.append(st.X[0].copy())
    return np.array(traj)
