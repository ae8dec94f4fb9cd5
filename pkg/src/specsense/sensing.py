"""Compressed measurements, l1 recovery and local threshold decisions.

Every SU ``j`` observes ``y_j = F_j x_j + w_j`` through its own Gaussian
matrix and recovers the sparse occupancy-weighted gains by solving

    min ||x||_1   s.t.   ||F_j x - y_j||_2^2 <= budget

The constrained problem is handled through its Lagrangian form
``0.5 ||F x - y||^2 + lam ||x||_1``, solved by a monotone proximal-gradient
scheme (ISTA, or FISTA with the monotone safeguard), with ``lam`` located by a
safeguarded bracketing search until the residual energy meets the budget.
When the search ends at the ``lam`` floor (noiseless data) the first-order
iterate is replaced by the end point of the exact lasso path whenever that
point passes the optimality check.

All solver entry points are batched: ``F`` has shape ``(B, T, N)`` and ``y``
shape ``(B, T)``, so the problems of every SU of many trials are advanced in
lock-step with one stacked matrix product per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, SolverDiverged

_TINY = 1e-300


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 5000
    tol: float = 1e-8
    accelerated: bool = True
    feas_tol: float = 0.05
    lam_floor: float = 1e-8
    bracket_width: float = 1e-10
    max_bisections: int = 200
    record_history: bool = False
    kkt_tol: float = 1e-2

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.tol > 0 and self.feas_tol > 0 and self.lam_floor > 0 and self.kkt_tol > 0):
            raise ValueError("tol, feas_tol, lam_floor and kkt_tol must be positive")


@dataclass
class MeasurementSet:
    matrices: np.ndarray  # (M, T, N)
    observations: np.ndarray  # (T, M), column j is y_j
    noise_var: float


@dataclass
class RecoveredSignal:
    xhat: np.ndarray
    residual_norm: float
    solver_iters: int
    converged: bool
    lam: float
    history: Optional[list] = None  # per inner solve, objective after each iteration


@dataclass
class LassoResult:
    x: np.ndarray  # (B, N)
    iters: np.ndarray  # (B,)
    converged: np.ndarray  # (B,) bool
    history: Optional[np.ndarray] = None  # (iters + 1, B) objective trace


@dataclass
class BatchRecovery:
    xhat: np.ndarray  # (B, N)
    residual_sq: np.ndarray
    lam: np.ndarray
    iters: np.ndarray
    converged: np.ndarray


def draw_measurement_matrix(n_measurements: int, n_channels: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian sensing matrix with i.i.d. N(0, 1/T) entries."""
    if not 1 <= n_measurements <= n_channels:
        raise ValueError(f"need 1 <= T <= N, got T={n_measurements}, N={n_channels}")
    return rng.standard_normal((n_measurements, n_channels)) / np.sqrt(n_measurements)


def draw_measurement_matrices(n_sus, n_measurements, n_channels, rng) -> np.ndarray:
    return np.stack([draw_measurement_matrix(n_measurements, n_channels, rng) for _ in range(n_sus)])


def measure(f_list, x, noise_var: float, rng: np.random.Generator) -> MeasurementSet:
    """Noisy compressed observations ``y_j = F_j x_j + w_j``, one column per SU."""
    f = np.asarray(f_list, dtype=float)
    x = np.asarray(x, dtype=float)
    if f.ndim != 3 or x.ndim != 2 or f.shape[0] != x.shape[1] or f.shape[2] != x.shape[0]:
        raise DimensionMismatch(f"matrices {f.shape} incompatible with signals {x.shape}")
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    m, t, _ = f.shape
    clean = np.einsum("mtn,nm->tm", f, x)
    noise = rng.standard_normal((t, m)) * np.sqrt(noise_var)
    return MeasurementSet(matrices=f, observations=clean + noise, noise_var=float(noise_var))


def noise_variance(matrices, signals, snr_db: float) -> float:
    """Per-entry noise variance for a measurement-domain SNR.

    The reference power is the mean squared entry of the noiseless
    observations ``F_j x_j`` pooled over all SUs; one variance is shared by
    every SU of the trial.
    """
    clean = np.einsum("mtn,nm->tm", np.asarray(matrices, float), np.asarray(signals, float))
    return float(np.mean(clean**2) / 10.0 ** (snr_db / 10.0))


def noise_budget(noise_var: float, n_measurements: int) -> float:
    """Expected energy of the noise vector of one SU, the residual level fed to the l1 constraint."""
    return n_measurements * noise_var


def soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def lipschitz(f) -> np.ndarray:
    """Largest squared singular value of each stacked matrix."""
    f = np.asarray(f, dtype=float)
    return np.linalg.svd(f, compute_uv=False)[..., 0] ** 2


def lasso_objective(f, y, x, lam):
    f, y, x = _as_batch(f, y, x)
    r = _apply(f, x) - y
    return 0.5 * np.sum(r * r, axis=1) + np.asarray(lam) * np.sum(np.abs(x), axis=1)


def _apply(f, x):
    return np.matmul(f, x[..., None])[..., 0]


def _apply_t(f, r):
    return np.matmul(r[:, None, :], f)[:, 0, :]


def _as_batch(f, y, x=None):
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    if f.ndim == 2:
        f = f[None]
        y = y[None]
        x = None if x is None else np.asarray(x, dtype=float)[None]
    if f.ndim != 3 or y.shape != f.shape[:2]:
        raise DimensionMismatch(f"operator {f.shape} incompatible with observations {y.shape}")
    if x is not None:
        x = np.asarray(x, dtype=float)
        if x.shape != (f.shape[0], f.shape[2]):
            raise DimensionMismatch(f"iterate {x.shape} incompatible with operator {f.shape}")
        return f, y, x
    return f, y, None


def solve_lasso(f, y, lam, opts: SolverOptions = SolverOptions(), x0=None, step=None) -> LassoResult:
    """Proximal-gradient solution of ``min 0.5||F x - y||^2 + lam ||x||_1`` for a batch.

    A candidate step is accepted only if it does not increase the objective,
    which keeps the recorded objective sequence non-increasing for both the
    plain and the accelerated variant. Momentum is reset after a rejected step
    or when the step turns against the previous move. A problem stops once the
    relative change of the objective drops below ``opts.tol`` and the
    proximal-gradient step is shorter than ``opts.kkt_tol`` shrinkage steps.
    """
    f, y, x0 = _as_batch(f, y, x0)
    b, _, n = f.shape
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (b,)).copy()
    step = 1.0 / lipschitz(f) if step is None else np.broadcast_to(np.asarray(step, float), (b,)).copy()

    x_out = np.zeros((b, n)) if x0 is None else x0.copy()
    r_out = _apply(f, x_out) - y
    obj_out = 0.5 * np.sum(r_out**2, axis=1) + lam * np.sum(np.abs(x_out), axis=1)
    iters = np.zeros(b, dtype=np.int64)
    conv = np.zeros(b, dtype=bool)
    history = [obj_out.copy()] if opts.record_history else None

    # working set: problems still iterating
    idx = np.arange(b)
    fa, ya, la, sa = f, y, lam, step
    xa, ra, oa = x_out.copy(), r_out.copy(), obj_out.copy()
    va, rva = xa.copy(), ra.copy()
    ta = np.ones(b)
    live = np.ones(b, dtype=bool)

    for it in range(1, opts.max_iters + 1):
        grad = _apply_t(fa, rva)
        z = soft_threshold(va - sa[:, None] * grad, (sa * la)[:, None])
        rz = _apply(fa, z) - ya
        oz = 0.5 * np.sum(rz * rz, axis=1) + la * np.sum(np.abs(z), axis=1)
        if not np.all(np.isfinite(oz[live])):
            raise SolverDiverged(f"non-finite objective at iteration {it}")

        accept = (oz <= oa) & live
        x_new = np.where(accept[:, None], z, xa)
        r_new = np.where(accept[:, None], rz, ra)
        o_new = np.where(accept, oz, oa)
        if opts.accelerated:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * ta * ta))
            w1 = (ta / t_new)[:, None]
            w2 = ((ta - 1.0) / t_new)[:, None]
            v_new = x_new + w1 * (z - x_new) + w2 * (x_new - xa)
            rv_new = r_new + w1 * (rz - r_new) + w2 * (r_new - ra)
            # adaptive restart: drop the momentum after a rejected step or when
            # the step direction turns against the previous move
            restart = live & (~accept | (np.sum((va - z) * (z - xa), axis=1) > 0))
            rs = restart[:, None]
            v_new = np.where(rs, x_new, v_new)
            rv_new = np.where(rs, r_new, rv_new)
            t_new = np.where(restart, 1.0, t_new)
            ta = np.where(live, t_new, ta)
        else:
            v_new, rv_new = x_new, r_new

        lv = live[:, None]
        xa = np.where(lv, x_new, xa)
        ra = np.where(lv, r_new, ra)
        va = np.where(lv, v_new, va)
        rva = np.where(lv, rv_new, rva)
        rel = np.abs(oa - oz) / np.maximum(oa, _TINY)
        # prox-gradient step length in units of the shrinkage step s*lam; zero at a minimiser
        move = np.max(np.abs(z - va), axis=1) / np.maximum(sa * la, _TINY)
        oa = np.where(live, o_new, oa)

        finished = live & (rel < opts.tol) & (move <= opts.kkt_tol)
        if history is not None:
            obj_out[idx] = oa
            history.append(obj_out.copy())
        if finished.any():
            gi = idx[finished]
            x_out[gi] = xa[finished]
            obj_out[gi] = oa[finished]
            iters[gi] = it
            conv[gi] = True
            live &= ~finished
        n_live = int(live.sum())
        if n_live == 0:
            break
        if n_live <= 0.8 * live.size and history is None:
            keep = live
            idx, fa, ya, la, sa = idx[keep], fa[keep], ya[keep], la[keep], sa[keep]
            xa, ra, oa, va, rva, ta = xa[keep], ra[keep], oa[keep], va[keep], rva[keep], ta[keep]
            live = np.ones(idx.size, dtype=bool)

    if live.any():
        gi = idx[live]
        x_out[gi] = xa[live]
        iters[gi] = opts.max_iters
    return LassoResult(
        x=x_out,
        iters=iters,
        converged=conv,
        history=None if history is None else np.array(history),
    )


def lasso_homotopy(f, y, lam: float, max_steps: Optional[int] = None):
    """Exact lasso minimiser at ``lam`` by following the solution path down from ``||F^T y||_inf``.

    The path is piecewise linear in ``lam``; between breakpoints the signed
    support is fixed and the support coefficients move along
    ``(F_S^T F_S)^{-1} sign``. A breakpoint adds the column whose correlation
    reaches the current level or drops a coefficient that reaches zero.
    Returns ``(x, certified)``; ``certified`` is True when the end point passes
    the optimality check ``F_S^T r = lam sign(x_S)``, ``|F^T r| <= lam``.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    t, n = f.shape
    x = np.zeros(n)
    corr = f.T @ y
    level = float(np.max(np.abs(corr)))
    if level <= lam:
        return x, True
    support = [int(np.argmax(np.abs(corr)))]
    sign = np.sign(corr)
    for _ in range(max_steps or 8 * n):
        cols = f[:, support]
        signs = sign[support]
        try:
            d = np.linalg.solve(cols.T @ cols, signs)
        except np.linalg.LinAlgError:
            break
        a = f.T @ (cols @ d)
        gap = level - lam
        join = np.inf, -1
        off = np.setdiff1d(np.arange(n), support)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = np.concatenate([(level - corr[off]) / (1.0 - a[off]), (level + corr[off]) / (1.0 + a[off])])
        cand = np.where(cand > 1e-14 * level, cand, np.inf)
        if off.size and np.isfinite(cand).any():
            k = int(np.argmin(cand))
            join = cand[k], int(off[k % off.size])
        # coefficients heading towards zero leave when they reach it
        with np.errstate(divide="ignore", invalid="ignore"):
            hit = np.where(d * signs < 0, np.abs(x[support]) / np.abs(d), np.inf)
        leave = (hit.min(), int(np.argmin(hit))) if hit.size else (np.inf, -1)
        step = min(gap, join[0], leave[0])
        x[support] += step * d
        level -= step
        if step == gap:
            break
        if leave[0] <= join[0]:
            x[support[leave[1]]] = 0.0
            del support[leave[1]]
        else:
            support.append(join[1])
            sign[join[1]] = np.sign(corr[join[1]] - join[0] * a[join[1]])
        corr = f.T @ (y - f @ x)
    corr = f.T @ (y - f @ x)
    on = x != 0
    ok = np.all(np.abs(corr) <= lam * (1 + 1e-6)) and np.allclose(corr[on], lam * np.sign(x[on]), rtol=1e-6, atol=0)
    return x, bool(ok)


def recover_batch(f, y, budget, opts: SolverOptions = SolverOptions()) -> BatchRecovery:
    """Basis-pursuit-denoising recovery for a batch of independent problems.

    ``budget`` is the admissible residual energy ``||F x - y||^2`` (scalar or
    one per problem). ``lam`` is searched inside the bracket
    ``[opts.lam_floor, ||F^T y||_inf]``, first stepping down a decade at a time
    from the top, then by regula falsi on ``log lam`` against the log residual
    (Illinois variant, clipped away from the ends), until the residual energy lies within
    ``feas_tol`` of the budget or the bracket is narrower than
    ``opts.bracket_width``; a zero budget drives ``lam`` down to the floor.
    """
    f, y, _ = _as_batch(f, y)
    b, _, n = f.shape
    budget = np.broadcast_to(np.asarray(budget, dtype=float), (b,)).copy()
    if np.any(budget < 0):
        raise ValueError("residual budget must be >= 0")
    inner = SolverOptions(**{**opts.__dict__, "record_history": False})
    step = 1.0 / lipschitz(f)
    lam_max = np.max(np.abs(_apply_t(f, y)), axis=1)
    ysq = np.sum(y * y, axis=1)

    xhat = np.zeros((b, n))
    lam_out = lam_max.copy()
    iters = np.zeros(b, dtype=np.int64)
    conv = np.zeros(b, dtype=bool)

    # x = 0 already satisfies the constraint and has the smallest possible l1 norm
    done = (ysq <= budget) | (lam_max <= opts.lam_floor)
    conv[done] = True
    lo = np.full(b, opts.lam_floor)
    hi = np.maximum(lam_max, opts.lam_floor)
    # log residual-to-budget ratio at the bracket ends; at hi (= lam_max) x = 0 so it is known
    with np.errstate(divide="ignore"):
        f_hi = np.log(ysq) - np.log(budget)
    f_lo = np.full(b, np.nan)
    last_side = np.zeros(b, dtype=np.int8)
    x_cur = np.zeros((b, n))
    x_best = np.zeros((b, n))
    lam_best = np.full(b, np.nan)
    inner_ok = np.ones(b, dtype=bool)

    for _ in range(opts.max_bisections):
        todo = np.flatnonzero(~done)
        if todo.size == 0:
            break
        narrow = todo[(hi[todo] - lo[todo]) < opts.bracket_width]
        if narrow.size:
            # bracket closed without hitting the band: keep the best feasible point,
            # otherwise finish at the floor (noiseless or unreachable budget)
            has_best = ~np.isnan(lam_best[narrow])
            kb = narrow[has_best]
            xhat[kb], lam_out[kb] = x_best[kb], lam_best[kb]
            conv[kb] = inner_ok[kb]
            done[kb] = True
            kf = narrow[~has_best]
            if kf.size:
                res = solve_lasso(f[kf], y[kf], opts.lam_floor, inner, x0=x_cur[kf], step=step[kf])
                # at the floor the problem is badly conditioned for first-order steps;
                # replace the iterate by the exact path end point when it certifies optimality
                certified = np.zeros(kf.size, dtype=bool)
                for i, k in enumerate(kf):
                    xp, certified[i] = lasso_homotopy(f[k], y[k], opts.lam_floor)
                    if certified[i]:
                        res.x[i] = xp
                xhat[kf] = res.x
                lam_out[kf] = opts.lam_floor
                iters[kf] += res.iters
                r2 = np.sum((_apply(f[kf], res.x) - y[kf]) ** 2, axis=1)
                reached = (budget[kf] == 0) | (r2 <= (1 + opts.feas_tol) * budget[kf])
                conv[kf] = (certified | (inner_ok[kf] & res.converged)) & reached
                done[kf] = True
            todo = np.flatnonzero(~done)
            if todo.size == 0:
                break

        u_lo, u_hi = np.log(lo[todo]), np.log(hi[todo])
        mid = np.exp(0.5 * (u_lo + u_hi))
        # until the low end has been probed, walk down from lam_max a decade at a
        # time: warm-started continuation is far cheaper than a cold solve at tiny lam
        mid = np.where(np.isnan(f_lo[todo]), np.maximum(mid, hi[todo] / 10.0), mid)
        # regula falsi in (log lam, log residual) once both ends are bracketed values
        fl, fh = f_lo[todo], f_hi[todo]
        interp = np.isfinite(fl) & np.isfinite(fh) & (fh > fl)
        if interp.any():
            w = u_hi - u_lo
            with np.errstate(divide="ignore", invalid="ignore"):
                u = u_lo - fl * w / (fh - fl)
            u = np.clip(u, u_lo + 0.02 * w, u_hi - 0.02 * w)
            mid = np.where(interp, np.exp(u), mid)

        res = solve_lasso(f[todo], y[todo], mid, inner, x0=x_cur[todo], step=step[todo])
        x_cur[todo] = res.x
        iters[todo] += res.iters
        inner_ok[todo] &= res.converged
        r2 = np.sum((_apply(f[todo], res.x) - y[todo]) ** 2, axis=1)
        bt = budget[todo]
        feasible = r2 <= bt
        in_band = (bt > 0) & (np.abs(r2 - bt) <= opts.feas_tol * bt)
        with np.errstate(divide="ignore"):
            f_mid = np.log(r2) - np.log(bt)

        fk = todo[feasible]
        x_best[fk] = res.x[feasible]
        lam_best[fk] = mid[feasible]
        lo[fk] = mid[feasible]
        f_lo[fk] = f_mid[feasible]
        # Illinois: halve the stale end's value when the same side moves twice
        stale = fk[last_side[fk] == -1]
        f_hi[stale] *= 0.5
        last_side[fk] = -1
        ik = todo[~feasible]
        hi[ik] = mid[~feasible]
        f_hi[ik] = f_mid[~feasible]
        stale = ik[last_side[ik] == 1]
        f_lo[stale] *= 0.5
        last_side[ik] = 1

        bk = todo[in_band]
        xhat[bk] = res.x[in_band]
        lam_out[bk] = mid[in_band]
        conv[bk] = inner_ok[bk]
        done[bk] = True

    # bisection budget exhausted
    for k in np.flatnonzero(~done):
        if not np.isnan(lam_best[k]):
            xhat[k], lam_out[k] = x_best[k], lam_best[k]
        else:
            xhat[k], lam_out[k] = x_cur[k], np.sqrt(lo[k] * hi[k])
        conv[k] = False

    residual_sq = np.sum((_apply(f, xhat) - y) ** 2, axis=1)
    return BatchRecovery(xhat=xhat, residual_sq=residual_sq, lam=lam_out, iters=iters, converged=conv)


def recover_l1(f, y, noise_power: float, opts: SolverOptions = SolverOptions()) -> RecoveredSignal:
    """Single-problem wrapper around :func:`recover_batch`.

    ``noise_power`` bounds the squared residual norm. With
    ``opts.record_history`` set, the objective trace of a final re-solve at
    the selected ``lam`` is attached.
    """
    res = recover_batch(f, y, noise_power, opts)
    history = None
    if opts.record_history:
        trace = solve_lasso(f, y, res.lam[0], opts)
        history = [trace.history[:, 0]]
    return RecoveredSignal(
        xhat=res.xhat[0],
        residual_norm=float(np.sqrt(res.residual_sq[0])),
        solver_iters=int(res.iters[0]),
        converged=bool(res.converged[0]),
        lam=float(res.lam[0]),
        history=history,
    )


def recover_all(ms: MeasurementSet, opts: SolverOptions = SolverOptions()) -> BatchRecovery:
    """Recover every SU of one measurement set; ``xhat`` rows are per SU."""
    t = ms.observations.shape[0]
    return recover_batch(ms.matrices, ms.observations.T, noise_budget(ms.noise_var, t), opts)


def threshold_decide(xhat, eta: float) -> np.ndarray:
    """Local binary votes: 1 where ``|xhat| >= eta``."""
    if not eta > 0:
        raise ValueError("threshold must be > 0")
    return (np.abs(np.asarray(xhat)) >= eta).astype(np.int8)
