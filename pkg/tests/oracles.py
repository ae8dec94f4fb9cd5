"""Reference implementations used only by the tests.

Each oracle takes a different route from the package code it checks:
exhaustive support enumeration instead of proximal iterations, rational
arithmetic instead of floats, arbitrary precision instead of log-space sums.
"""

import itertools
from fractions import Fraction
from math import comb

import mpmath
import numpy as np


def basis_pursuit_bruteforce(f, y):
    """min ||x||_1 s.t. F x = y by enumerating basic solutions.

    With a full-rank T x N operator the LP optimum is attained at a basic
    solution: T columns forming an invertible square block, the rest zero.
    All such blocks are solved at once and the smallest l1 norm wins.
    """
    t, n = f.shape
    cols = np.array(list(itertools.combinations(range(n), t)))
    blocks = f[:, cols].transpose(1, 0, 2)  # (n_subsets, T, T)
    ok = np.abs(np.linalg.det(blocks)) > 1e-12
    cols, blocks = cols[ok], blocks[ok]
    coef = np.linalg.solve(blocks, np.broadcast_to(y, (len(blocks), t))[..., None])[..., 0]
    best = int(np.argmin(np.abs(coef).sum(axis=1)))
    x = np.zeros(n)
    x[cols[best]] = coef[best]
    return x


def majority_tail_exact(m, pi11):
    """P(Bin(M, pi11) >= ceil(M/2)) as a Fraction; ``pi11`` given as a Fraction."""
    pi = Fraction(pi11)
    lo = -(-m // 2)
    return sum(comb(m, i) * pi**i * (1 - pi) ** (m - i) for i in range(lo, m + 1))


def finite_k_mp(m, k, p, pi11, dps=50):
    """Finite-K detection formula evaluated term by term at ``dps`` digits."""
    with mpmath.workdps(dps):
        p, pi = mpmath.mpf(p), mpmath.mpf(pi11)
        spread = (1 - p) / p
        total = mpmath.mpf(0)

        def q(num, den_sq):
            if den_sq > 0:
                return mpmath.erfc(num / mpmath.sqrt(den_sq) / mpmath.sqrt(2)) / 2
            return mpmath.mpf(0) if num > 0 else (mpmath.mpf(1) if num < 0 else mpmath.mpf("0.5"))

        for i in range(m + 1):
            num = (mpmath.mpf(m) / 2 - i) * mpmath.sqrt(k)
            miss = (1 - pi) * q(num, spread * i)
            hit = pi * q(num, spread * abs(i - 1))
            total += mpmath.binomial(m, i) * miss ** (m - i) * hit**i
        return total
