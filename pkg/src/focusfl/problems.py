"""Synthetic federated ridge-regression objectives.

Client ``i`` (1-based) holds ``A_i`` (K x d) and ``b_i`` (K,) and the loss

    f_i(x) = ||A_i x - b_i||^2 + lam * ||x||^2,

so the global objective is ``F(x) = mean_i f_i(x)``. Hessians are constant,
``2 A_i^T A_i + 2 lam I``; they are cached at construction together with
``A_i^T b_i``, the optimum and the smoothness/convexity constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .participation import SeededStream


class ProblemError(ValueError):
    pass


class NotStronglyConvexError(ProblemError):
    pass


@dataclass(frozen=True)
class HeterogeneityProfile:
    """``spread=None`` means homogeneous: every client gets client 1's data."""

    spread: float | None = 1.0

    def __post_init__(self):
        if self.spread is not None and self.spread < 0:
            raise ProblemError("spread must be non-negative")

    @classmethod
    def homogeneous(cls) -> "HeterogeneityProfile":
        return cls(None)

    @classmethod
    def heterogeneous(cls, spread: float = 1.0) -> "HeterogeneityProfile":
        return cls(float(spread))

    @property
    def is_homogeneous(self) -> bool:
        return self.spread is None


@dataclass(eq=False)
class RidgeProblem:
    A: np.ndarray
    b: np.ndarray
    lam: float
    H: np.ndarray = field(init=False, repr=False)
    Atb: np.ndarray = field(init=False, repr=False)
    x_star: np.ndarray = field(init=False, repr=False)
    L: float = field(init=False)
    mu: float = field(init=False)

    def __post_init__(self):
        self.A = np.ascontiguousarray(self.A, dtype=float)
        self.b = np.ascontiguousarray(self.b, dtype=float)
        if self.A.ndim != 3 or self.b.shape != self.A.shape[:2]:
            raise ProblemError("expected A of shape (N, K, d) and b of shape (N, K)")
        if min(self.A.shape) < 1:
            raise ProblemError("N, K and d must all be >= 1")
        if self.lam < 0:
            raise ProblemError("lam must be non-negative")
        self.lam = float(self.lam)
        self.H = np.einsum("nkd,nke->nde", self.A, self.A)
        self.Atb = np.einsum("nkd,nk->nd", self.A, self.b)
        self.L, self.mu = constants(self)
        self.x_star = optimum(self)

    @property
    def n_clients(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[2]

    @property
    def n_samples(self) -> int:
        return self.A.shape[1]

    def loss(self, i: int, x: np.ndarray) -> float:
        r = self.A[i - 1] @ x - self.b[i - 1]
        return float(r @ r + self.lam * (x @ x))

    def global_loss(self, x: np.ndarray) -> float:
        r = np.einsum("nkd,d->nk", self.A, x) - self.b
        return float(np.mean(np.sum(r * r, axis=1)) + self.lam * (x @ x))

    def global_gradient(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * (self.H.mean(axis=0) @ x - self.Atb.mean(axis=0)) + 2.0 * self.lam * x

    def all_gradients(self, X: np.ndarray) -> np.ndarray:
        """Row ``i-1`` is client i's gradient at ``X[i-1]`` (or at ``X`` if 1-D)."""
        if X.ndim == 1:
            X = np.broadcast_to(X, (self.n_clients, self.dim))
        return 2.0 * (np.einsum("nde,ne->nd", self.H, X) - self.Atb) + 2.0 * self.lam * X

    @property
    def f_star(self) -> float:
        return self.global_loss(self.x_star)

    def save(self, path) -> None:
        np.savez(Path(path), A=self.A, b=self.b, lam=np.array(self.lam))

    @classmethod
    def load(cls, path) -> "RidgeProblem":
        with np.load(Path(path)) as z:
            return cls(z["A"], z["b"], float(z["lam"]))


def generate_ridge(n_clients: int, dim: int, samples: int, lam: float,
                   profile: HeterogeneityProfile | None = None,
                   stream: SeededStream | None = None, noise: float = 0.1) -> RidgeProblem:
    """Gaussian design with per-client ground truth ``x_shared + spread * zeta_i``."""
    if min(n_clients, dim, samples) < 1:
        raise ProblemError("n_clients, dim and samples must all be >= 1")
    if lam < 0 or noise < 0:
        raise ProblemError("lam and noise must be non-negative")
    profile = profile or HeterogeneityProfile()
    rng = (stream or SeededStream(0)).with_purpose("problem").generator()
    x_shared = rng.standard_normal(dim)
    if profile.is_homogeneous:
        a = rng.standard_normal((1, samples, dim))
        b = a[0] @ x_shared + noise * rng.standard_normal(samples)
        A = np.repeat(a, n_clients, axis=0)
        B = np.repeat(b[None, :], n_clients, axis=0)
    else:
        A = rng.standard_normal((n_clients, samples, dim))
        truth = x_shared + profile.spread * rng.standard_normal((n_clients, dim))
        B = np.einsum("nkd,nd->nk", A, truth) + noise * rng.standard_normal((n_clients, samples))
    return RidgeProblem(A, B, lam)


def optimum(problem: RidgeProblem) -> np.ndarray:
    """Solve the normal equations by Cholesky, then two refinement sweeps."""
    d = problem.dim
    M = 2.0 * problem.H.mean(axis=0) + 2.0 * problem.lam * np.eye(d)
    c = 2.0 * problem.Atb.mean(axis=0)
    try:
        Lc = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NotStronglyConvexError("normal equations are singular; add lam > 0 or more samples") from None
    if np.min(np.diag(Lc)) ** 2 <= 1e-14 * np.max(np.diag(Lc)) ** 2:
        raise NotStronglyConvexError("normal equations are numerically singular")

    def solve(rhs):
        return np.linalg.solve(Lc.T, np.linalg.solve(Lc, rhs))

    x = solve(c)
    for _ in range(2):
        x = x + solve(c - M @ x)
    return x


def gradient(problem: RidgeProblem, i: int, x: np.ndarray) -> np.ndarray:
    """Exact gradient of client ``i`` (1-based): ``2 A^T (A x - b) + 2 lam x``."""
    if not 1 <= i <= problem.n_clients:
        raise ProblemError(f"client index {i} outside 1..{problem.n_clients}")
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim,):
        raise ProblemError(f"expected x of shape ({problem.dim},), got {x.shape}")
    return 2.0 * (problem.H[i - 1] @ x - problem.Atb[i - 1]) + 2.0 * problem.lam * x


def stochastic_gradient(problem: RidgeProblem, i: int, x: np.ndarray, batch) -> np.ndarray:
    """Unbiased minibatch gradient over sample indices ``batch`` (1-based, multiset).

    The data term is rescaled by ``K / |batch|``. The full batch returns
    :func:`gradient` itself, so the two agree bit for bit.
    """
    idx = np.asarray(batch, dtype=int).ravel()
    K = problem.n_samples
    if idx.size == 0:
        raise ProblemError("empty minibatch")
    if np.any(idx < 1) or np.any(idx > K):
        raise ProblemError(f"sample indices must lie in 1..{K}")
    if idx.size == K and np.array_equal(np.sort(idx), np.arange(1, K + 1)):
        return gradient(problem, i, x)
    a = problem.A[i - 1][idx - 1]
    r = a @ x - problem.b[i - 1][idx - 1]
    return (2.0 * K / idx.size) * (a.T @ r) + 2.0 * problem.lam * x


def constants(problem: RidgeProblem) -> tuple[float, float]:
    """``(L, mu)``: extreme eigenvalues over all per-client Hessians."""
    eig = np.linalg.eigvalsh(2.0 * problem.H + 2.0 * problem.lam * np.eye(problem.dim))
    return float(eig[:, -1].max()), float(eig[:, 0].min())


def hessian(problem: RidgeProblem, i: int) -> np.ndarray:
    return 2.0 * problem.H[i - 1] + 2.0 * problem.lam * np.eye(problem.dim)


def heterogeneity(problem: RidgeProblem, points) -> float:
    """Largest ``||grad f_i(x) - grad F(x)||`` over the given points (a sigma_G estimate)."""
    worst = 0.0
    for x in points:
        g = problem.all_gradients(np.asarray(x, dtype=float))
        worst = max(worst, float(np.max(np.linalg.norm(g - g.mean(axis=0), axis=1))))
    return worst


def gradient_variance(problem: RidgeProblem, x: np.ndarray, batch_size: int = 1,
                      draws: int = 2000, stream: SeededStream | None = None) -> float:
    """Sample estimate of ``max_i E||g_i(x; xi) - grad f_i(x)||^2`` for uniform minibatches."""
    rng = (stream or SeededStream(0)).with_purpose("variance").generator()
    K = problem.n_samples
    worst = 0.0
    for i in range(1, problem.n_clients + 1):
        exact = gradient(problem, i, x)
        dev = [stochastic_gradient(problem, i, x, rng.choice(K, batch_size, replace=False) + 1) - exact
               for _ in range(draws)]
        worst = max(worst, float(np.mean(np.sum(np.square(dev), axis=1))))
    return worst
