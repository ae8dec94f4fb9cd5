"""Acceptance criteria, each run at its stated size and tolerance.

Every test records its outcome through the ``criterion`` fixture so the
terminal summary prints one PASS/FAIL line per criterion.
"""

import time
import warnings
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from oracles import basis_pursuit_bruteforce, majority_tail_exact
from specsense.cli import main
from specsense.consensus import fusion_majority, run_diversity_consensus
from specsense.metrics import run_experiment
from specsense.scenario import ScenarioConfig, build_scenario, trial_streams
from specsense.sensing import SolverOptions, draw_measurement_matrices, recover_batch, solve_lasso
from specsense.theory import TheoryParams, pd_asymptotic, pd_finite_k

GOLDEN = Path(__file__).parent / "golden"

pytestmark = pytest.mark.slow


def test_c1_majority_equivalence_at_full_links(criterion):
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    cases = mismatches = 0
    for m in (3, 5, 12):
        for k in (1, 5, 20):
            for _ in range(1000):
                b0 = rng.integers(0, 2, (20, m))
                want = np.repeat(fusion_majority(b0)[:, None], m, axis=1)
                got = run_diversity_consensus(b0, k, 1.0, rng)
                cases += 1
                mismatches += int(not np.array_equal(got, want))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 5.0
    criterion(1, "exact match", mismatches == 0, f"{cases - mismatches}/{cases} matrices")
    criterion(1, "runtime < 5 s", elapsed < 5.0, f"{elapsed:.2f} s")
    assert ok


def test_c2_consensus_approaches_fusion(criterion):
    cfg = ScenarioConfig(n_channels=50, n_measurements=20, n_sus=12, link_prob=0.8, trials=500)
    start = time.perf_counter()
    rep = run_experiment(cfg, {"K": list(range(1, 41))})
    elapsed = time.perf_counter() - start
    by_k = {c.k: c for c in rep.cells}
    fusion = by_k[40].pd_fusion
    gap5 = abs(by_k[5].pd_empirical - fusion)
    gap40 = abs(by_k[40].pd_empirical - fusion)
    detail = f"pi11={by_k[40].pi11_hat:.3f} Pd_fusion={fusion:.4f} Pd(5)={by_k[5].pd_empirical:.4f} Pd(40)={by_k[40].pd_empirical:.4f}"
    criterion(2, "|gap(40)| <= 0.05", gap40 <= 0.05, f"gap(40)={gap40:.4f}; {detail}")
    criterion(2, "gap(40) <= gap(5)", gap40 <= gap5, f"gap(5)={gap5:.4f}")
    criterion(2, "runtime < 2 min", elapsed < 120, f"{elapsed:.1f} s")
    assert gap40 <= 0.05 and gap40 <= gap5 and elapsed < 120


def test_c3_theory_large_k_matches_majority(criterion):
    start = time.perf_counter()
    worst = {"odd": (0.0, None), "even": (0.0, None)}
    for m in range(3, 16):
        for p in (0.3, 0.8):
            for pi in np.round(np.arange(0.1, 1.0, 0.1), 1):
                diff = abs(pd_finite_k(TheoryParams(m, 10_000, p, float(pi))) - pd_asymptotic(m, float(pi)))
                key = "odd" if m % 2 else "even"
                if diff >= worst[key][0]:
                    worst[key] = (diff, (m, p, float(pi)))
    elapsed = time.perf_counter() - start
    for key in ("odd", "even"):
        diff, where = worst[key]
        criterion(3, f"{key} M within 1e-3", diff <= 1e-3, f"max diff {diff:.3g} at (M, p, pi11)={where}")
    criterion(3, "runtime < 10 s", elapsed < 10, f"{elapsed:.2f} s")
    assert max(worst["odd"][0], worst["even"][0]) <= 1e-3 and elapsed < 10


def test_c3_three_sus_rational_value(criterion):
    exact = majority_tail_exact(3, Fraction(4, 5))
    got = pd_asymptotic(3, 0.8)
    ok = exact == Fraction(112, 125) and abs(got - float(exact)) <= 1e-12
    criterion(3, "pd_asymptotic(3, 0.8) = 0.896", ok, f"{got!r} vs {exact}")
    assert ok


def test_c4_support_recovery_noiseless(criterion):
    # numerical support: entries above 1e-4 of the largest magnitude, applied alike to both vectors
    def supp(v):
        return np.abs(v) > 1e-4 * np.max(np.abs(v))

    cfg = ScenarioConfig(n_channels=200, n_measurements=50, n_pus=4)
    start = time.perf_counter()
    f, y, truth = [], [], []
    for t in range(100):
        streams = trial_streams(cfg.rng_seed, t)
        scen = build_scenario(cfg, streams)
        mats = draw_measurement_matrices(cfg.n_sus, cfg.n_measurements, cfg.n_channels, streams["matrices"])
        for j in range(cfg.n_sus):
            f.append(mats[j])
            y.append(mats[j] @ scen.signals[:, j])
            truth.append(scen.signals[:, j] != 0)
    rec = recover_batch(np.array(f), np.array(y), 0.0)
    hits = 0
    for xhat, want in zip(rec.xhat, truth):
        hits += int(np.array_equal(supp(xhat), want))
    rate = hits / len(truth)
    criterion(4, "support rate >= 99%", rate >= 0.99, f"{hits}/{len(truth)} SU problems over 100 trials")

    rng = np.random.default_rng(404)
    agree = close = 0
    for i in range(500):
        n = int(rng.integers(8, 13))
        t = n // 2
        s = int(rng.integers(1, 4))
        mat = rng.standard_normal((t, n)) / np.sqrt(t)
        x = np.zeros(n)
        x[rng.choice(n, s, replace=False)] = rng.standard_normal(s)
        obs = mat @ x
        want = basis_pursuit_bruteforce(mat, obs)
        got = recover_batch(mat, obs, 0.0).xhat[0]
        agree += int(np.array_equal(supp(got), supp(want)))
        close += int(np.max(np.abs(got - want)) <= 1e-3 * np.max(np.abs(want)))
    elapsed = time.perf_counter() - start
    criterion(4, "oracle support agreement >= 99%", agree >= 495,
              f"{agree}/500 instances; {close}/500 within 1e-3 in value")
    criterion(4, "runtime < 2 min", elapsed < 120, f"{elapsed:.1f} s")
    assert rate >= 0.99 and agree >= 495 and elapsed < 120


def test_c5_trends(criterion):
    base = ScenarioConfig(n_channels=100, n_measurements=50, trials=500)
    start = time.perf_counter()

    rep = run_experiment(base, {"p": [0.3, 0.8], "K": list(range(1, 11))})
    pd = {(c.p, c.k): c.pd_empirical for c in rep.cells}
    worst_p = min(pd[(0.8, k)] - pd[(0.3, k)] for k in range(2, 11))
    criterion(5, "Pd(p=0.8) >= Pd(p=0.3) - 0.02, K>=2", worst_p >= -0.02, f"min diff {worst_p:+.4f}")

    rep = run_experiment(replace(base, snr_db=5.0), {"T": [20, 50]})
    pd_t = {c.t_measurements: c.pd_empirical for c in rep.cells}
    ok_t = pd_t[50] >= pd_t[20] - 0.02
    criterion(5, "Pd(T=50) >= Pd(T=20) - 0.02 at 5 dB", ok_t, f"{pd_t[50]:.4f} vs {pd_t[20]:.4f}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        rep = run_experiment(base, {"P": [2, 4, 8, 16]})
    pd_p = [c.pd_empirical for c in rep.cells]
    rises = max(b - a for a, b in zip(pd_p, pd_p[1:]))
    criterion(5, "Pd non-increasing in P (slack 0.02)", rises <= 0.02, "Pd=" + ", ".join(f"{v:.4f}" for v in pd_p))

    elapsed = time.perf_counter() - start
    criterion(5, "runtime < 5 min", elapsed < 300, f"{elapsed:.1f} s")
    assert worst_p >= -0.02 and ok_t and rises <= 0.02 and elapsed < 300


def test_c6_determinism_and_golden(criterion, tmp_path, monkeypatch):
    monkeypatch.delenv("SPECSENSE_SEED", raising=False)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(GOLDEN / "config.yaml"), "--out", str(out), "--emit", "csv,json,trace"]) == 0
        outs.append(out)
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in ("results.csv", "results.json", "trace.csv"))
    golden = (outs[0] / "results.csv").read_bytes() == (GOLDEN / "results.csv").read_bytes()
    criterion(6, "byte-identical reruns", same)
    criterion(6, "golden CSV", golden)
    assert same and golden


def test_c7_solver_contract(criterion):
    rng = np.random.default_rng(77)
    n_inst, t, n = 10_000, 6, 12
    f = rng.standard_normal((n_inst, t, n)) / np.sqrt(t)
    x = np.zeros((n_inst, n))
    for row in x:
        row[rng.choice(n, 2, replace=False)] = rng.standard_normal(2)
    noise_var = 10.0 ** rng.uniform(-4, -1, n_inst)
    y = np.einsum("btn,bn->bt", f, x) + rng.standard_normal((n_inst, t)) * np.sqrt(noise_var)[:, None]
    lam = 10.0 ** rng.uniform(-3, 0, n_inst)

    rises = {}
    for accelerated in (False, True):
        res = solve_lasso(f, y, lam, SolverOptions(accelerated=accelerated, max_iters=400, record_history=True))
        rises[accelerated] = float(np.max(np.diff(res.history, axis=0)))
    mono = all(v <= 0.0 for v in rises.values())
    criterion(7, "objective non-increasing", mono, f"max step change ISTA {rises[False]:.3g}, FISTA {rises[True]:.3g}")

    budget = t * noise_var
    rec = recover_batch(f, y, budget)
    conv = rec.converged
    ratio = rec.residual_sq[conv] / budget[conv]
    feasible = bool(np.all(ratio <= 1.05))
    criterion(7, "residual <= 1.05 budget when converged", feasible,
              f"{conv.sum()}/{n_inst} converged, max ratio {ratio.max():.4f}")
    assert mono and feasible
