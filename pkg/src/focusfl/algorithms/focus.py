"""Push-pull federated optimisation with exact and stochastic gradients.

Server keeps ``(x, y)``. A participant pulls ``x`` (never ``y``), resets its
tracker to zero and runs ``tau`` gradient-tracking steps whose first step
subtracts the gradient it stored the last time it took part. It pushes its
final tracker, which the server *adds* to ``y`` before stepping ``x -= eta*y``.

By telescoping, after every round ``server_y`` equals the sum over clients of
their stored gradients (zero for clients that never took part, unless warm
started). That ledger is what :func:`tracking_residual` checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..participation import SeededStream
from ..problems import RidgeProblem, gradient, stochastic_gradient


@dataclass(eq=False)
class FocusState:
    server_x: np.ndarray
    server_y: np.ndarray
    client_x: np.ndarray
    client_y: np.ndarray
    stored_grad: np.ndarray
    last_round: np.ndarray
    round: int = 0

    @classmethod
    def create(cls, problem: RidgeProblem, x0=None, client_x0=None, warm_start: bool = False) -> "FocusState":
        """Fresh state; ``warm_start`` seeds each stored gradient at the client's own model.

        With a warm start the server tracker is preloaded with the sum of those
        gradients, so the ledger holds from round 0 and clients that never take
        part contribute their initial gradient.
        """
        n, d = problem.n_clients, problem.dim
        x0 = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
        cx = np.tile(x0, (n, 1)) if client_x0 is None else np.array(client_x0, dtype=float)
        stored = problem.all_gradients(cx) if warm_start else np.zeros((n, d))
        server_y = stored.sum(axis=0) if warm_start else np.zeros(d)
        return cls(x0.copy(), server_y, cx, np.zeros((n, d)), stored, np.full(n, -1, dtype=int))

    @classmethod
    def at_optimum(cls, problem: RidgeProblem) -> "FocusState":
        """The consistent fixed point: everyone at ``x*`` with matching trackers."""
        return cls.create(problem, problem.x_star, warm_start=True)

    def copy(self) -> "FocusState":
        return FocusState(self.server_x.copy(), self.server_y.copy(), self.client_x.copy(),
                          self.client_y.copy(), self.stored_grad.copy(), self.last_round.copy(),
                          self.round)


def tracking_residual(state: FocusState) -> float:
    return float(np.linalg.norm(state.server_y - state.stored_grad.sum(axis=0)))


def _push(server_y: np.ndarray, pushed: list[np.ndarray]) -> np.ndarray:
    # Summed, not averaged; ascending client order keeps the reduction deterministic.
    for y in pushed:
        server_y = server_y + y
    return server_y


def _local_tracking(state: FocusState, i: int, eta: float, tau: int, grad) -> np.ndarray:
    x = state.server_x.copy()
    y = np.zeros_like(x)
    g_prev = state.stored_grad[i - 1]
    for t in range(tau):
        g = grad(t, x)
        y = y + g - g_prev
        g_prev = g
        if t < tau - 1:
            x = x - eta * y
    # x_{tau,i} would be x - eta*y; it is never pushed or reused, so the
    # client keeps the model its stored gradient was evaluated at.
    state.client_x[i - 1] = x
    state.stored_grad[i - 1] = g_prev
    state.client_y[i - 1] = 0.0
    state.last_round[i - 1] = state.round
    return y


def focus_round(state: FocusState, S, problem: RidgeProblem, eta: float, tau: int) -> FocusState:
    """One communication round of FOCUS, updating ``state`` in place.

    An empty ``S`` leaves ``y`` unchanged but still takes the server step.
    """
    pushed = [_local_tracking(state, i, eta, tau, lambda t, x, i=i: gradient(problem, i, x))
              for i in sorted(S)]
    state.server_y = _push(state.server_y, pushed)
    state.server_x = state.server_x - eta * state.server_y
    state.round += 1
    return state


def sg_focus_round(state: FocusState, S, problem: RidgeProblem, eta: float, tau: int,
                   batch_size: int, stream: SeededStream) -> FocusState:
    """FOCUS with minibatch gradients.

    ``stored_grad`` holds the last stochastic gradient (at its own sample), which
    is subtracted as-is; it is never re-evaluated on a fresh sample. Minibatches
    are drawn without replacement from a stream keyed by ``(round, client)``.
    """
    K = problem.n_samples
    if not 1 <= batch_size <= K:
        raise ValueError(f"batch_size must lie in 1..{K}")
    base = stream.with_purpose("minibatch")

    def sgrad(i):
        # One generator per (round, client); row t holds step t's sample indices.
        rng = base.child(state.round, i).generator()
        batches = np.argsort(rng.random((tau, K)), axis=1)[:, :batch_size] + 1
        return lambda t, x: stochastic_gradient(problem, i, x, batches[t])

    pushed = [_local_tracking(state, i, eta, tau, sgrad(i)) for i in sorted(S)]
    state.server_y = _push(state.server_y, pushed)
    state.server_x = state.server_x - eta * state.server_y
    state.round += 1
    return state
