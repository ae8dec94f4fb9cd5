"""Monte Carlo orchestration and empirical detection / false-alarm metrics.

Trial randomness is keyed by ``(master seed, trial index)`` only, so every
cell of a sweep sees the same placements, fades, matrices, noise and link
uniforms (common random numbers). Sensing is run once per trial for all cells
that share the sensing parameters, and consensus once per ``(threshold, p)``
at the largest ``K`` requested; smaller ``K`` read the prefix of that trace.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .consensus import consensus_trace, fusion_majority
from .errors import CellDegenerate, NoActiveChannels, NoInactiveChannels, SpecSenseError
from .scenario import ScenarioConfig, build_scenario, default_threshold, trial_streams
from .sensing import (
    SolverOptions,
    draw_measurement_matrices,
    measure,
    noise_budget,
    noise_variance,
    recover_batch,
    threshold_decide,
)
from .theory import TheoryParams, estimate_pi11, pd_asymptotic, pd_finite_k

log = logging.getLogger(__name__)

# sweep axis name -> ScenarioConfig field, in nesting order (last varies fastest)
SWEEP_AXES = {
    "M": "n_sus",
    "P": "n_pus",
    "T": "n_measurements",
    "snr_db": "snr_db",
    "eta": "threshold",
    "p": "link_prob",
    "K": "consensus_steps",
}

CSV_COLUMNS = (
    "k",
    "p",
    "t_measurements",
    "snr_db",
    "pd_empirical",
    "pfa_empirical",
    "pd_fusion",
    "pfa_fusion",
    "pd_theory_finite",
    "pd_theory_asymptotic",
    "pi11_hat",
    "trials",
    "seed",
)

MAX_FAILED_FRACTION = 0.10
TRIALS_PER_BATCH = 50


@dataclass
class TrialOutcome:
    occupancy: np.ndarray  # (N,)
    initial_votes: np.ndarray  # (N, M)
    consensus_votes_by_step: np.ndarray  # (K, N, M), entry k-1 is the decision after k rounds
    fusion_decision: np.ndarray  # (N,)


@dataclass
class CellResult:
    cell_id: int
    k: int
    p: float
    t_measurements: int
    snr_db: float
    pd_empirical: float
    pfa_empirical: float
    pd_fusion: float
    pfa_fusion: float
    pd_theory_finite: float
    pd_theory_asymptotic: float
    pi11_hat: float
    trials: int
    seed: int
    n_channels: int
    n_sus: int
    n_pus: int
    threshold: Optional[float]
    failed_trials: int
    unconverged_recoveries: int
    counts: dict = field(default_factory=dict)
    pd_by_step: list = field(default_factory=list)
    pfa_by_step: list = field(default_factory=list)

    def csv_row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class MetricsReport:
    cells: list
    metadata: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for cell in self.cells:
            writer.writerow([_fmt(v) for v in cell.csv_row()])
        return buf.getvalue()

    def trace_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("cell_id", "k", "pd", "pfa"))
        for cell in self.cells:
            for k, (pd, pfa) in enumerate(zip(cell.pd_by_step, cell.pfa_by_step), start=1):
                writer.writerow([cell.cell_id, k, _fmt(pd), _fmt(pfa)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"metadata": self.metadata, "cells": [asdict(c) for c in self.cells]}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


# ---------------------------------------------------------------------------
# empirical metrics


def _ratio(hits: int, total: int, err):
    if total == 0:
        raise err
    return hits / total


def _step_counts(outcomes, k: int):
    det = act = fa = inact = 0
    for o in outcomes:
        if not 1 <= k <= len(o.consensus_votes_by_step):
            raise ValueError(f"step {k} outside 1..{len(o.consensus_votes_by_step)}")
        votes = o.consensus_votes_by_step[k - 1]
        on = o.occupancy.astype(bool)
        det += int(votes[on].sum())
        act += int(votes[on].size)
        fa += int(votes[~on].sum())
        inact += int(votes[~on].size)
    return det, act, fa, inact


def pd_empirical(outcomes, k: int) -> float:
    """Pooled fraction of (active channel, SU) pairs deciding 1 after ``k`` rounds."""
    det, act, _, _ = _step_counts(outcomes, k)
    return _ratio(det, act, NoActiveChannels("no active channels in any outcome"))


def pfa_empirical(outcomes, k: int) -> float:
    """Pooled fraction of (inactive channel, SU) pairs deciding 1 after ``k`` rounds."""
    _, _, fa, inact = _step_counts(outcomes, k)
    return _ratio(fa, inact, NoInactiveChannels("no inactive channels in any outcome"))


def _fusion_counts(outcomes):
    det = act = fa = inact = 0
    for o in outcomes:
        on = o.occupancy.astype(bool)
        det += int(o.fusion_decision[on].sum())
        act += int(on.sum())
        fa += int(o.fusion_decision[~on].sum())
        inact += int((~on).sum())
    return det, act, fa, inact


def pd_fusion(outcomes) -> float:
    det, act, _, _ = _fusion_counts(outcomes)
    return _ratio(det, act, NoActiveChannels("no active channels in any outcome"))


def pfa_fusion(outcomes) -> float:
    _, _, fa, inact = _fusion_counts(outcomes)
    return _ratio(fa, inact, NoInactiveChannels("no inactive channels in any outcome"))


# ---------------------------------------------------------------------------
# experiment driver


@dataclass
class SensedTrial:
    trial: int
    occupancy: np.ndarray
    xhat: np.ndarray  # (N, M)
    auto_threshold: float
    unconverged: int


def expand_grid(cfg: ScenarioConfig, grid: Optional[dict] = None) -> list:
    """Cartesian product of the sweep axes applied to ``cfg``; ``{}`` gives one cell."""
    grid = dict(grid or {})
    unknown = set(grid) - set(SWEEP_AXES)
    if unknown:
        raise ValueError(f"unknown sweep axes {sorted(unknown)}; allowed: {list(SWEEP_AXES)}")
    axes = [(name, list(grid[name])) for name in SWEEP_AXES if name in grid]
    for name, values in axes:
        if not values:
            raise ValueError(f"sweep axis {name!r} is empty")
    cells = []
    for combo in itertools.product(*(values for _, values in axes)):
        overrides = {SWEEP_AXES[name]: value for (name, _), value in zip(axes, combo)}
        cells.append(replace(cfg, **overrides))
    return cells


def _sensing_key(cfg: ScenarioConfig):
    return (
        cfg.n_channels,
        cfg.n_sus,
        cfg.n_pus,
        cfg.n_measurements,
        cfg.snr_db,
        cfg.pathloss_exp,
        cfg.area_side,
        cfg.min_su_spacing,
        cfg.trials,
        cfg.rng_seed,
    )


def sense_trials(cfg: ScenarioConfig, trials, solver: SolverOptions = SolverOptions()):
    """Scenario, measurements and l1 recovery for the given trial indices.

    Returns one entry per trial: a :class:`SensedTrial`, or the exception that
    made the trial fail. All SUs of all trials are recovered as one batch.
    """
    out = {}
    prepared = []
    for t in trials:
        try:
            streams = trial_streams(cfg.rng_seed, t)
            scen = build_scenario(cfg, streams)
            mats = draw_measurement_matrices(cfg.n_sus, cfg.n_measurements, cfg.n_channels, streams["matrices"])
            sigma2 = noise_variance(mats, scen.signals, cfg.snr_db)
            ms = measure(mats, scen.signals, sigma2, streams["noise"])
        except SpecSenseError as exc:
            out[t] = exc
            continue
        prepared.append((t, scen, ms))
    if prepared:
        f = np.concatenate([ms.matrices for _, _, ms in prepared])
        y = np.concatenate([ms.observations.T for _, _, ms in prepared])
        budget = np.repeat([noise_budget(ms.noise_var, cfg.n_measurements) for _, _, ms in prepared], cfg.n_sus)
        try:
            rec = recover_batch(f, y, budget, solver)
        except SpecSenseError as exc:
            for t, _, _ in prepared:
                out[t] = exc
        else:
            for j, (t, scen, _) in enumerate(prepared):
                rows = slice(j * cfg.n_sus, (j + 1) * cfg.n_sus)
                out[t] = SensedTrial(
                    trial=t,
                    occupancy=scen.occupancy,
                    xhat=rec.xhat[rows].T.copy(),
                    auto_threshold=default_threshold(scen.distances, cfg.pathloss_exp),
                    unconverged=int((~rec.converged[rows]).sum()),
                )
    return [out[t] for t in trials]


def _sense_all(cfg, solver, threads):
    batches = [
        list(range(lo, min(lo + TRIALS_PER_BATCH, cfg.trials))) for lo in range(0, cfg.trials, TRIALS_PER_BATCH)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: sense_trials(cfg, b, solver), batches))
    else:
        results = [sense_trials(cfg, b, solver) for b in batches]
    return [r for batch in results for r in batch]


def _outcomes(cfg, sensed, eta, p, k_max):
    outcomes = []
    for s in sensed:
        b0 = threshold_decide(s.xhat, eta if eta is not None else s.auto_threshold)
        links = trial_streams(cfg.rng_seed, s.trial)["links"]
        outcomes.append(
            TrialOutcome(
                occupancy=s.occupancy,
                initial_votes=b0,
                consensus_votes_by_step=consensus_trace(b0, k_max, p, links),
                fusion_decision=fusion_majority(b0),
            )
        )
    return outcomes


def _cell_result(cell_id, cfg, outcomes, failed, unconverged):
    k = cfg.consensus_steps
    view = [replace(o, consensus_votes_by_step=o.consensus_votes_by_step[:k]) for o in outcomes]
    det, act, fa, inact = _step_counts(view, k)
    fdet, fact, ffa, finact = _fusion_counts(view)
    pi11 = estimate_pi11([o.initial_votes for o in view], [o.occupancy for o in view])
    return CellResult(
        cell_id=cell_id,
        k=k,
        p=cfg.link_prob,
        t_measurements=cfg.n_measurements,
        snr_db=cfg.snr_db,
        pd_empirical=pd_empirical(view, k),
        pfa_empirical=pfa_empirical(view, k),
        pd_fusion=pd_fusion(view),
        pfa_fusion=pfa_fusion(view),
        pd_theory_finite=pd_finite_k(TheoryParams(cfg.n_sus, k, cfg.link_prob, pi11)),
        pd_theory_asymptotic=pd_asymptotic(cfg.n_sus, pi11),
        pi11_hat=pi11,
        trials=len(view),
        seed=cfg.rng_seed,
        n_channels=cfg.n_channels,
        n_sus=cfg.n_sus,
        n_pus=cfg.n_pus,
        threshold=cfg.threshold,
        failed_trials=failed,
        unconverged_recoveries=unconverged,
        counts={
            "detected": det,
            "missed": act - det,
            "false_alarms": fa,
            "correct_rejections": inact - fa,
            "fusion_detected": fdet,
            "fusion_missed": fact - fdet,
            "fusion_false_alarms": ffa,
            "fusion_correct_rejections": finact - ffa,
        },
        pd_by_step=[pd_empirical(view, s) for s in range(1, k + 1)],
        pfa_by_step=[pfa_empirical(view, s) for s in range(1, k + 1)],
    )


def config_digest(cfg: ScenarioConfig, grid, solver: SolverOptions) -> str:
    doc = {"config": cfg.as_dict(), "grid": grid or {}, "solver": asdict(solver)}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def run_experiment(
    cfg: ScenarioConfig,
    grid: Optional[dict] = None,
    solver: SolverOptions = SolverOptions(),
    threads: int = 1,
) -> MetricsReport:
    """Run every cell of ``grid`` for ``cfg.trials`` trials and aggregate the metrics."""
    cells = expand_grid(cfg, grid)
    results = [None] * len(cells)

    groups = {}
    for i, c in enumerate(cells):
        groups.setdefault(_sensing_key(c), []).append(i)

    for members in groups.values():
        gcfg = cells[members[0]]
        log.info("sensing %d trials (N=%d M=%d P=%d T=%d SNR=%g dB)", gcfg.trials, gcfg.n_channels,
                 gcfg.n_sus, gcfg.n_pus, gcfg.n_measurements, gcfg.snr_db)
        sensed_all = _sense_all(gcfg, solver, threads)
        sensed = [s for s in sensed_all if isinstance(s, SensedTrial)]
        failures = [s for s in sensed_all if not isinstance(s, SensedTrial)]
        if len(failures) > MAX_FAILED_FRACTION * gcfg.trials:
            raise CellDegenerate(
                f"{len(failures)}/{gcfg.trials} trials failed; first error: {failures[0]!r}"
            )
        for exc in failures[:3]:
            log.warning("trial failed: %r", exc)
        unconverged = sum(s.unconverged for s in sensed)

        by_link = {}
        for i in members:
            by_link.setdefault((cells[i].threshold, cells[i].link_prob), []).append(i)
        for (eta, p), idx in by_link.items():
            k_max = max(cells[i].consensus_steps for i in idx)
            outcomes = _outcomes(gcfg, sensed, eta, p, k_max)
            for i in idx:
                results[i] = _cell_result(i, cells[i], outcomes, len(failures), unconverged)

    metadata = {
        "code_version": __version__,
        "config": cfg.as_dict(),
        "config_digest": config_digest(cfg, grid, solver),
        "grid": {k: list(v) for k, v in (grid or {}).items()},
        "solver": asdict(solver),
        "columns": list(CSV_COLUMNS),
    }
    return MetricsReport(cells=results, metadata=metadata)
