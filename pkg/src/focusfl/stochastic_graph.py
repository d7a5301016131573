"""Stochastic matrices for the star-shaped server/client communication graph.

Node 0 is the server, nodes 1..N are clients. Every matrix here is dense,
``(N+1) x (N+1)`` and float64. A model stack ``X`` of shape ``(N+1, d)`` is
mixed by left multiplication, ``M @ X``.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

STOCHASTIC_ATOL = 1e-12


class MatrixError(ValueError):
    """Base class for matrix construction/validation failures."""


class InvalidParticipantError(MatrixError):
    pass


class EmptyParticipationError(MatrixError):
    pass


class StochasticityError(MatrixError):
    pass


class Kind(enum.Enum):
    ROW = "row"
    COLUMN = "column"
    DOUBLY = "doubly"
    MASK = "mask"


class MaskVariant(enum.Enum):
    FEDAVG = "fedavg"
    FOCUS = "focus"


@dataclass(frozen=True)
class ParticipantSet:
    """Clients active in one communication round (server index 0 excluded)."""

    round: int
    members: tuple[int, ...]

    def __init__(self, round: int, members: Iterable[int] = ()):
        object.__setattr__(self, "round", int(round))
        object.__setattr__(self, "members", tuple(sorted({int(i) for i in members})))
        if self.round < 0:
            raise ValueError("round must be non-negative")
        if 0 in self.members:
            raise InvalidParticipantError("the server (index 0) cannot be a participant")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, i: object) -> bool:
        return i in self.members


@dataclass(frozen=True)
class MixingMatrix:
    entries: np.ndarray
    kind: Kind

    def __post_init__(self):
        validate(self.entries, self.kind)

    @property
    def n_nodes(self) -> int:
        return self.entries.shape[0]

    def __matmul__(self, other):
        if isinstance(other, MixingMatrix):
            return self.entries @ other.entries
        return self.entries @ other

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


def validate(entries: np.ndarray, kind: Kind, atol: float = STOCHASTIC_ATOL) -> None:
    """Raise :class:`StochasticityError` unless ``entries`` is a valid ``kind`` matrix."""
    m = np.asarray(entries)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise StochasticityError(f"expected a square matrix, got shape {m.shape}")
    if np.any(m < 0):
        raise StochasticityError("stochastic matrices must be entrywise non-negative")
    ones = np.ones(m.shape[0])
    if kind is Kind.MASK:
        off = m - np.diag(np.diag(m))
        if np.any(off != 0) or not np.all(np.isin(np.diag(m), (0.0, 1.0))):
            raise StochasticityError("a diagonal mask must be diagonal with 0/1 entries")
        return
    if kind in (Kind.ROW, Kind.DOUBLY) and not np.allclose(m @ ones, ones, rtol=0, atol=atol):
        raise StochasticityError("rows do not sum to 1")
    if kind in (Kind.COLUMN, Kind.DOUBLY) and not np.allclose(ones @ m, ones, rtol=0, atol=atol):
        raise StochasticityError("columns do not sum to 1")


def _check_members(S: ParticipantSet | Iterable[int], n: int) -> tuple[int, ...]:
    members = S.members if isinstance(S, ParticipantSet) else tuple(sorted(set(S)))
    if n < 1:
        raise InvalidParticipantError("need at least one client")
    for i in members:
        if not 1 <= i <= n:
            raise InvalidParticipantError(f"client index {i} outside 1..{n}")
    return members


def build_assign_matrix(S, n: int) -> MixingMatrix:
    """Pull step: every participant copies the server's row."""
    members = _check_members(S, n)
    m = np.eye(n + 1)
    for i in members:
        m[i, i] = 0.0
        m[i, 0] = 1.0
    return MixingMatrix(m, Kind.ROW)


def build_average_matrix(S, n: int) -> MixingMatrix:
    """FedAvg aggregation: the server row becomes the participants' mean."""
    members = _check_members(S, n)
    if not members:
        raise EmptyParticipationError("average matrix undefined for an empty participant set")
    m = np.eye(n + 1)
    m[0, 0] = 0.0
    m[0, list(members)] = 1.0 / len(members)
    return MixingMatrix(m, Kind.ROW)


def build_collect_matrix(S, n: int) -> MixingMatrix:
    """Push step: participants' rows are summed into the server and zeroed."""
    members = _check_members(S, n)
    m = np.eye(n + 1)
    for j in members:
        m[j, j] = 0.0
        m[0, j] = 1.0
    return MixingMatrix(m, Kind.COLUMN)


def build_collect_all_matrix(n: int) -> MixingMatrix:
    """Collect every node into the server, regardless of participation."""
    m = np.zeros((n + 1, n + 1))
    m[0, :] = 1.0
    return MixingMatrix(m, Kind.COLUMN)


def build_doubly_matrix(S, n: int) -> MixingMatrix:
    """Symmetric server/participant gossip; the diagonal absorbs leftover mass.

    Follows the element-wise definition (``1/|S|`` on server/participant
    links), so for ``S={1,3}`` the server keeps 0 and each participant 1/2.
    """
    members = _check_members(S, n)
    if not members:
        raise EmptyParticipationError("doubly-stochastic matrix undefined for an empty participant set")
    w = 1.0 / len(members)
    m = np.zeros((n + 1, n + 1))
    for i in members:
        m[i, 0] = w
        m[0, i] = w
    np.fill_diagonal(m, 1.0 - m.sum(axis=0))
    return MixingMatrix(m, Kind.DOUBLY)


def build_fedavg_condensed_matrix(S, n: int) -> MixingMatrix:
    """Single-line FedAvg mixing: every row is the participants' average.

    Used at the last local step of a round when all clients (virtually) run
    the local update. An empty round resynchronises everyone to the server.
    """
    members = _check_members(S, n)
    m = np.zeros((n + 1, n + 1))
    if members:
        m[:, list(members)] = 1.0 / len(members)
    else:
        m[:, 0] = 1.0
    return MixingMatrix(m, Kind.ROW)


def build_local_mask(S, n: int, variant: MaskVariant | str = MaskVariant.FEDAVG,
                     k: int = 0, tau: int = 1) -> MixingMatrix:
    """Diagonal 0/1 mask enabling participants during local updates.

    For the FOCUS variant the server entry is switched on at the iteration
    that carries the server step. Iterations are counted from zero with
    ``k = r*tau + t``; the server step happens at ``t = tau - 1``.
    """
    variant = MaskVariant(variant)
    members = _check_members(S, n)
    if k < 0 or tau < 1:
        raise ValueError("need k >= 0 and tau >= 1")
    diag = np.zeros(n + 1)
    diag[list(members)] = 1.0
    if variant is MaskVariant.FOCUS and k % tau == tau - 1:
        diag[0] = 1.0
    return MixingMatrix(np.diag(diag), Kind.MASK)


def _check_weights(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size < 1:
        raise MatrixError("weights must be a non-empty vector")
    if np.any(q <= 0) or np.any(q > 1) or not np.isclose(q.sum(), 1.0, rtol=0, atol=1e-9):
        raise MatrixError("weights must lie in (0, 1] and sum to 1")
    return q


def expected_assign_matrix(q) -> MixingMatrix:
    """Expectation of the pull matrix when client i is pulled w.p. ``q[i-1]``.

    The transpose is the expected collect matrix.
    """
    q = _check_weights(q)
    n = q.size
    m = np.eye(n + 1)
    m[1:, 0] = q
    m[np.arange(1, n + 1), np.arange(1, n + 1)] = 1.0 - q
    return MixingMatrix(m, Kind.ROW)


def expected_average_matrix(q) -> MixingMatrix:
    q = _check_weights(q)
    m = np.eye(q.size + 1)
    m[0, 0] = 0.0
    m[0, 1:] = q
    return MixingMatrix(m, Kind.ROW)


def matrix_power_consensus(R, k: int, kind: Kind | None = None) -> np.ndarray:
    """Return ``R**k`` after checking ``R`` is row- (or column-) stochastic."""
    if isinstance(R, MixingMatrix):
        entries, kind = R.entries, kind or R.kind
    else:
        entries, kind = np.asarray(R, dtype=float), kind or Kind.ROW
    if kind is Kind.MASK:
        raise StochasticityError("matrix powers are defined for row/column stochastic matrices")
    validate(entries, kind)
    if k < 0:
        raise ValueError("k must be non-negative")
    return np.linalg.matrix_power(entries, k)


def consensus_vector(R, k: int = 512) -> np.ndarray:
    """Left Perron vector ``p`` with ``R**k -> 1 p^T`` (read off the limit's first row)."""
    return matrix_power_consensus(R, k)[0].copy()


def apply_product(matrices: Iterable[MixingMatrix], v: np.ndarray) -> np.ndarray:
    """Apply ``M_k ... M_1 v`` in the order given."""
    out = np.asarray(v, dtype=float)
    for m in matrices:
        out = m.entries @ out
    return out
