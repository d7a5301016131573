from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..problems import RidgeProblem, gradient


@dataclass(eq=False)
class FedAvgState:
    server_x: np.ndarray
    client_x: np.ndarray
    round: int = 0

    @classmethod
    def create(cls, problem: RidgeProblem, x0=None) -> "FedAvgState":
        x0 = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
        return cls(x0.copy(), np.tile(x0, (problem.n_clients, 1)))

    def copy(self) -> "FedAvgState":
        return FedAvgState(self.server_x.copy(), self.client_x.copy(), self.round)


def fedavg_round(state: FedAvgState, S, problem: RidgeProblem, eta: float, tau: int) -> FedAvgState:
    """Pull, ``tau`` local gradient steps, then plain participant mean.

    Clients outside ``S`` keep their last local model; an empty round is a no-op
    on the server.
    """
    members = list(S)
    if members:
        acc = np.zeros_like(state.server_x)
        for i in members:
            x = state.server_x.copy()
            for _ in range(tau):
                x -= eta * gradient(problem, i, x)
            state.client_x[i - 1] = x
            acc += x
        state.server_x = acc / len(members)
    state.round += 1
    return state
