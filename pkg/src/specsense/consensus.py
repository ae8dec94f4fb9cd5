"""Diversity-based binary consensus over a Bernoulli link process.

Every SU keeps re-broadcasting its initial vote vector ``b_i(0)``. After ``k``
link rounds the score at SU ``i`` is

    (1/M) * (b_i(0) + (1/(k p)) * sum_t B(0) a_i(t))

and the decision is ``Dec(score)``, i.e. 1 where the score is at least 0.5.
Decision matrices are ``(N, M)``: one row per channel, one column per SU.
"""

from __future__ import annotations

import numpy as np


def dec(x):
    """Elementwise ``1 if x >= 0.5 else 0``."""
    out = (np.asarray(x) >= 0.5).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def sample_adjacency(m: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric 0/1 link matrix with zero diagonal, each pair up with probability ``p``."""
    return sample_adjacency_steps(m, p, 1, rng)[0]


def sample_adjacency_steps(m: int, p: float, steps: int, rng: np.random.Generator) -> np.ndarray:
    """``steps`` independent adjacency matrices, shape ``(steps, m, m)``.

    Links come from thresholding uniforms at ``p``, so for a fixed stream the
    graphs are nested in ``p`` and the first ``k`` matrices do not depend on
    ``steps``.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"link probability must lie in [0, 1], got {p}")
    u = rng.random((steps, m, m))
    upper = np.triu(u < p, k=1)
    return (upper | upper.transpose(0, 2, 1)).astype(np.int8)


def consensus_trace(b0, steps: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Decisions after every link round, shape ``(steps, N, M)``.

    Entry ``k - 1`` uses the ``1/(k p)`` normaliser, so it equals the final
    output of a run with ``K = k`` fed by the same stream.
    """
    b0 = np.asarray(b0)
    if b0.ndim != 2:
        raise ValueError("initial votes must be an (N, M) matrix")
    if steps < 1:
        raise ValueError("need at least one consensus step")
    if not 0 < p <= 1:
        raise ValueError(f"link probability must lie in (0, 1], got {p}")
    if not np.isin(b0, (0, 1)).all():
        raise ValueError("initial votes must be binary")
    m = b0.shape[1]
    adj = sample_adjacency_steps(m, p, steps, rng)
    b = b0.astype(float)
    # column i of B(0) @ A(t) is B(0) a_i(t), the votes SU i hears in round t
    received = np.cumsum(b[None] @ adj, axis=0)
    k = np.arange(1, steps + 1, dtype=float)[:, None, None]
    scores = (b[None] + received / (k * p)) / m
    return dec(scores)


def run_diversity_consensus(b0, steps: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Final ``(N, M)`` decision matrix after ``steps`` link rounds."""
    return consensus_trace(b0, steps, p, rng)[-1]


def fusion_majority(b0) -> np.ndarray:
    """Fusion-centre majority rule per channel: 1 iff at least ``M/2`` SUs vote 1."""
    b0 = np.asarray(b0)
    m = b0.shape[1]
    return (2 * b0.sum(axis=1) >= m).astype(np.int8)
