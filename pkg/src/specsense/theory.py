"""Closed-form detection probabilities for diversity-based consensus."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import NoSamples


@dataclass(frozen=True)
class TheoryParams:
    m: int
    k: int
    p: float
    pi11: float

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ValueError("need M >= 1 and K >= 1")
        if not 0 < self.p <= 1:
            raise ValueError(f"link probability must lie in (0, 1], got {self.p}")
        if not 0 <= self.pi11 <= 1:
            raise ValueError(f"pi11 must lie in [0, 1], got {self.pi11}")


def q_function(x):
    """Standard normal upper tail probability ``Q(x)``."""
    out = 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def _q_ratio(num: float, den_sq: float) -> float:
    # Q(num / sqrt(den_sq)); a vanishing denominator is resolved by the sign of
    # the numerator (+inf -> 0, -inf -> 1), and 0/0 is read as argument 0
    if den_sq > 0:
        return q_function(num / math.sqrt(den_sq))
    if num > 0:
        return 0.0
    if num < 0:
        return 1.0
    return 0.5


def _log_binom(m: int, i: int) -> float:
    return math.lgamma(m + 1) - math.lgamma(i + 1) - math.lgamma(m - i + 1)


def _log_pow(base: float, exponent: int) -> float:
    # log(base ** exponent) with 0 ** 0 = 1
    if exponent == 0:
        return 0.0
    return exponent * math.log(base) if base > 0 else -math.inf


def pd_finite_k(params: TheoryParams) -> float:
    """Approximate network detection probability after ``K`` consensus steps.

    Sum over the number ``i`` of SUs that detect locally of
    ``C(M, i) [(1 - pi11) Q(a_i / s_i)]^(M - i) [pi11 Q(a_i / s'_i)]^i`` with
    ``a_i = (M/2 - i) sqrt(K)``, ``s_i^2 = (1 - p)/p * i`` and
    ``s'_i^2 = (1 - p)/p * |i - 1|``.
    """
    m, k, p, pi = params.m, params.k, params.p, params.pi11
    spread = (1.0 - p) / p
    terms = []
    for i in range(m + 1):
        num = (m / 2.0 - i) * math.sqrt(k)
        miss = (1.0 - pi) * _q_ratio(num, spread * i)
        hit = pi * _q_ratio(num, spread * abs(i - 1))
        log_term = _log_binom(m, i) + _log_pow(miss, m - i) + _log_pow(hit, i)
        if log_term > -math.inf:
            terms.append(math.exp(log_term))
    return min(1.0, max(0.0, math.fsum(terms)))


def pd_asymptotic(m: int, pi11: float) -> float:
    """Majority-rule limit: binomial upper tail ``P(Bin(M, pi11) >= ceil(M/2))``."""
    if m < 1:
        raise ValueError("need M >= 1")
    if not 0 <= pi11 <= 1:
        raise ValueError(f"pi11 must lie in [0, 1], got {pi11}")
    terms = []
    for i in range(math.ceil(m / 2), m + 1):
        log_term = _log_binom(m, i) + _log_pow(1.0 - pi11, m - i) + _log_pow(pi11, i)
        if log_term > -math.inf:
            terms.append(math.exp(log_term))
    return min(1.0, math.fsum(terms))


def estimate_pi11(votes, occupancy) -> float:
    """Fraction of (active channel, SU) pairs whose local vote is 1.

    ``votes`` is one ``(N, M)`` matrix or a sequence of them; ``occupancy`` the
    matching length-``N`` vector(s).
    """
    votes = np.asarray(votes)
    occupancy = np.asarray(occupancy).astype(bool)
    if votes.ndim == 2:
        votes, occupancy = votes[None], occupancy[None]
    active = votes[occupancy]  # (n_active_total, M)
    if active.size == 0:
        raise NoSamples("no (active channel, SU) pairs to estimate pi11 from")
    return float(active.sum() / active.size)
