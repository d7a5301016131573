"""Client participation models and seeded random streams.

Clients are indexed 1..N. Every random draw in the package goes through
:class:`SeededStream`, which derives an independent generator from
``(master_seed, purpose, *counters)`` so that adding draws for one purpose
never shifts the sequence of another.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .stochastic_graph import ParticipantSet


def _tag(purpose: str) -> int:
    return int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:4], "little")


@dataclass(frozen=True)
class SeededStream:
    master_seed: int
    purpose: str = "default"
    counters: tuple[int, ...] = ()

    def child(self, *counters: int) -> "SeededStream":
        return SeededStream(self.master_seed, self.purpose, self.counters + tuple(int(c) for c in counters))

    def with_purpose(self, purpose: str) -> "SeededStream":
        return SeededStream(self.master_seed, purpose, self.counters)

    def generator(self) -> np.random.Generator:
        key = [int(self.master_seed) & 0xFFFFFFFFFFFFFFFF, _tag(self.purpose), *self.counters]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


class Variant(enum.Enum):
    FULL = "full"
    BERNOULLI = "bernoulli"
    WEIGHTED = "weighted"            # passive, without replacement
    WEIGHTED_REPLACE = "weighted-replace"
    UNIFORM_M = "uniform-m"


@dataclass(frozen=True)
class ParticipationModel:
    variant: Variant
    n: int
    p: tuple[float, ...] | None = None
    weights: tuple[float, ...] | None = None
    m: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one client")
        v = self.variant
        if v is Variant.BERNOULLI:
            p = np.asarray(self.p, dtype=float)
            if p.shape != (self.n,) or np.any(p <= 0) or np.any(p > 1):
                raise ValueError("Bernoulli probabilities must be N values in (0, 1]")
        if v in (Variant.WEIGHTED, Variant.WEIGHTED_REPLACE):
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.n,) or np.any(w <= 0):
                raise ValueError("sampling weights must be N strictly positive values")
            object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))
        if v in (Variant.WEIGHTED, Variant.WEIGHTED_REPLACE, Variant.UNIFORM_M):
            if self.m is None or not 1 <= self.m <= self.n:
                raise ValueError(f"m must satisfy 1 <= m <= N={self.n}")

    @classmethod
    def full(cls, n: int) -> "ParticipationModel":
        return cls(Variant.FULL, n)

    @classmethod
    def bernoulli(cls, p) -> "ParticipationModel":
        p = tuple(float(x) for x in p)
        return cls(Variant.BERNOULLI, len(p), p=p)

    @classmethod
    def weighted(cls, weights, m: int, replace: bool = False) -> "ParticipationModel":
        w = tuple(float(x) for x in weights)
        return cls(Variant.WEIGHTED_REPLACE if replace else Variant.WEIGHTED, len(w), weights=w, m=m)

    @classmethod
    def uniform(cls, n: int, m: int) -> "ParticipationModel":
        return cls(Variant.UNIFORM_M, n, m=m)

    def describe(self) -> str:
        extra = {"m": self.m} if self.m is not None else {}
        return f"{self.variant.value}(N={self.n}{''.join(f', {k}={v}' for k, v in extra.items())})"


def _draw_indicators(model: ParticipationModel, rng: np.random.Generator, trials: int) -> np.ndarray:
    """Boolean ``(trials, N)`` participation indicators, vectorised over trials."""
    n = model.n
    v = model.variant
    if v is Variant.FULL:
        return np.ones((trials, n), dtype=bool)
    if v is Variant.BERNOULLI:
        return rng.random((trials, n)) < np.asarray(model.p)
    if v is Variant.WEIGHTED_REPLACE:
        out = np.zeros((trials, n), dtype=bool)
        draws = rng.choice(n, size=(trials, model.m), p=np.asarray(model.weights))
        np.put_along_axis(out, draws, True, axis=1)
        return out
    # Top-m of Gumbel-perturbed log-weights is distributed exactly as m
    # sequential draws proportional to the remaining weights.
    if v is Variant.WEIGHTED:
        keys = np.log(np.asarray(model.weights)) + rng.gumbel(size=(trials, n))
    else:
        keys = rng.random((trials, n))
    top = np.argpartition(-keys, model.m - 1, axis=1)[:, : model.m]
    out = np.zeros((trials, n), dtype=bool)
    np.put_along_axis(out, top, True, axis=1)
    return out


def sample_round(model: ParticipationModel, r: int, stream: SeededStream) -> ParticipantSet:
    """Participant set for round ``r``; a pure function of ``(model, r, stream)``."""
    rng = stream.with_purpose("participation").child(r).generator()
    row = _draw_indicators(model, rng, 1)[0]
    return ParticipantSet(r, (np.flatnonzero(row) + 1).tolist())


def sample_schedule(model: ParticipationModel, rounds: int, stream: SeededStream) -> list[ParticipantSet]:
    return [sample_round(model, r, stream) for r in range(rounds)]


def schedule_digest(schedule) -> str:
    h = hashlib.sha256()
    for S in schedule:
        h.update(f"{S.round}:{','.join(map(str, S.members))};".encode())
    return h.hexdigest()


@dataclass
class Estimate:
    value: np.ndarray
    stderr: np.ndarray
    exact: bool = False
    trials: int = 0
    minimum: float = field(init=False)

    def __post_init__(self):
        self.minimum = float(np.min(self.value))


def participation_probabilities(model: ParticipationModel, trials: int = 100_000,
                                stream: SeededStream | None = None) -> Estimate:
    """Per-client inclusion probabilities; exact where a closed form exists."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n, v = model.n, model.variant
    zeros = np.zeros(n)
    if v is Variant.FULL:
        return Estimate(np.ones(n), zeros, exact=True)
    if v is Variant.BERNOULLI:
        return Estimate(np.asarray(model.p, dtype=float), zeros, exact=True)
    if v is Variant.UNIFORM_M:
        return Estimate(np.full(n, model.m / n), zeros, exact=True)
    if v is Variant.WEIGHTED_REPLACE:
        q = np.asarray(model.weights)
        return Estimate(1.0 - (1.0 - q) ** model.m, zeros, exact=True)
    ind = _batched(model, trials, stream or SeededStream(0), "p-hat")
    p = ind.mean(axis=0)
    return Estimate(p, np.sqrt(p * (1 - p) / trials), trials=trials)


def _batched(model, trials, stream, purpose, batch=20_000):
    chunks = []
    for j, start in enumerate(range(0, trials, batch)):
        rng = stream.with_purpose(purpose).child(j).generator()
        chunks.append(_draw_indicators(model, rng, min(batch, trials - start)))
    return np.concatenate(chunks)


def averaging_weights(model: ParticipationModel, trials: int = 100_000,
                      stream: SeededStream | None = None) -> Estimate:
    """Monte Carlo estimate of ``q_i = E[I_i / sum_j I_j]`` (empty rounds count 0).

    Full participation is returned exactly as ``1/N``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = model.n
    if model.variant is Variant.FULL:
        return Estimate(np.full(n, 1.0 / n), np.zeros(n), exact=True)
    ind = _batched(model, trials, stream or SeededStream(0), "q-hat").astype(float)
    counts = ind.sum(axis=1, keepdims=True)
    ratio = np.divide(ind, counts, out=np.zeros_like(ind), where=counts > 0)
    q = ratio.mean(axis=0)
    se = ratio.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(n)
    return Estimate(q, se, trials=trials)
