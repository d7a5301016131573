"""Step-size conditions under which the FOCUS convergence rates hold."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class Regime(enum.Enum):
    STRONGLY_CONVEX = "strongly-convex"
    PL = "pl"
    NONCONVEX = "nonconvex"
    SG_STRONGLY_CONVEX = "sg-strongly-convex"


@dataclass(frozen=True)
class LrBound:
    regime: Regime
    value: float
    binding: str
    terms: dict[str, float]

    def satisfied_by(self, eta: float) -> dict[str, bool]:
        return {name: eta <= v for name, v in self.terms.items()}


def _terms(regime: Regime, L, c, N, tau, q) -> dict[str, float]:
    inf = math.inf
    tm1 = tau - 1
    q32 = q ** 1.5
    if regime is Regime.STRONGLY_CONVEX:
        return {
            "3*mu/(27*N*L^2)": 3 * c / (27 * N * L ** 2),
            "1/(3*L*(tau-1))": 1 / (3 * L * tm1) if tm1 else inf,
            "q_min^1.5/(8*L*sqrt(N))": q32 / (8 * L * math.sqrt(N)),
        }
    if regime is Regime.PL:
        return {
            "3*q_min/(32*N)": 3 * q / (32 * N),
            "q_min/(12*beta*N)": q / (12 * c * N),
            "q_min/(16*L^2)": q / (16 * L ** 2),
            "q_min^1.5/(8*L*sqrt(N))": q32 / (8 * L * math.sqrt(N)),
        }
    if regime is Regime.NONCONVEX:
        return {
            "1/(2*L*(tau-1))": 1 / (2 * L * tm1) if tm1 else inf,
            "q_min^1.5/(8*L*sqrt(N))": q32 / (8 * L * math.sqrt(N)),
            "q_min/(16*L*sqrt(2N))": q / (16 * L * math.sqrt(2 * N)),
            "1/(4*L*N)": 1 / (4 * L * N),
        }
    return {
        "2*q_min/(3N(16L^2/mu+mu/2))": 2 * q / (3 * N * (16 * L ** 2 / c + c / 2)),
        "q_min^1.5/(4*L*sqrt(6N))": q32 / (4 * L * math.sqrt(6 * N)),
        "q_min^1.5/(8*sqrt(2)*L*(tau-1))": q32 / (8 * math.sqrt(2) * L * tm1) if tm1 else inf,
        "mu/(128*(tau-1)^2*L^2*N)": c / (128 * tm1 ** 2 * L ** 2 * N) if tm1 else inf,
    }


def max_stable_lr(regime, L: float, mu_or_beta: float | None, N: int, tau: int, q_min: float) -> LrBound:
    """Smallest term of the regime's step-size condition; ``(tau-1)`` terms are
    inactive (``inf``) when ``tau == 1``. ``mu_or_beta`` is ignored for the
    nonconvex regime."""
    regime = Regime(regime)
    needs_c = regime is not Regime.NONCONVEX
    if L <= 0 or N < 1 or tau < 1 or q_min <= 0 or (needs_c and (mu_or_beta is None or mu_or_beta <= 0)):
        raise ValueError("L, N, tau, q_min (and mu/beta where used) must be positive")
    terms = _terms(regime, float(L), float(mu_or_beta or 0.0), int(N), int(tau), float(q_min))
    binding = min(terms, key=terms.get)
    return LrBound(regime, terms[binding], binding, terms)
