"""Command-line entry point: ``specsense run --config cfg.yaml --out results/``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError, SpecSenseError
from .metrics import SWEEP_AXES, run_experiment
from .scenario import ScenarioConfig
from .sensing import SolverOptions

log = logging.getLogger("specsense")

SEED_ENV = "SPECSENSE_SEED"
EMIT_CHOICES = ("csv", "json", "trace")

_INT_FIELDS = {"n_channels", "n_sus", "n_pus", "n_measurements", "consensus_steps", "trials", "rng_seed"}
_SOLVER_FIELDS = {"max_iters": int, "tol": float, "accelerated": bool, "feas_tol": float, "kkt_tol": float}
_AXIS_ALIASES = {"η": "eta", "threshold": "eta"}
_AXIS_TYPES = {"M": int, "P": int, "T": int, "K": int, "p": float, "snr_db": float, "eta": float}

_REFERENCE = {"n_channels": 200, "n_measurements": 50, "n_pus": 4, "n_sus": 12, "pathloss_exp": 2.0}

PRESETS = {
    "fig2": ({**_REFERENCE}, {"p": [round(0.1 * i, 1) for i in range(1, 11)]}),
    "fig3": (
        {k: v for k, v in _REFERENCE.items() if k != "n_measurements"},
        {"T": list(range(10, 101, 10)), "snr_db": [5.0, 10.0]},
    ),
    "fig4": (
        {**_REFERENCE, "n_measurements": 40},
        {"snr_db": [5.0, 10.0], "p": [0.3, 0.8], "K": list(range(1, 41))},
    ),
    "fig5": ({**_REFERENCE, "link_prob": 0.8}, {"P": [2, 4, 6, 8, 10, 12, 14, 16]}),
}


@dataclass
class RunManifest:
    config_path: Optional[Path]
    output_dir: Path
    sweep_spec: dict
    master_seed: int
    emit: frozenset
    preset: Optional[str] = None
    threads: int = 1


def _check_type(path, value, kind):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _axis_values(path, raw, kind):
    # "a..b" is an inclusive integer range
    if isinstance(raw, str) and ".." in raw:
        lo, _, hi = raw.partition("..")
        try:
            values = list(range(int(lo), int(hi) + 1))
        except ValueError:
            raise ConfigError(path, f"bad range {raw!r}") from None
    elif isinstance(raw, list):
        values = raw
    else:
        values = [raw]
    if not values:
        raise ConfigError(path, "sweep axis has no values")
    return [_check_type(f"{path}[{i}]", v, kind) for i, v in enumerate(values)]


def parse_config(text: str):
    """Parse a YAML (or JSON) document into ``(ScenarioConfig, sweep grid, SolverOptions)``.

    Scenario fields sit at the top level; ``sweep`` maps axis names
    (K, p, T, snr_db, P, eta, M) to value lists and ``solver`` holds solver
    options. Omitted fields keep their defaults; unknown keys are rejected.
    """
    try:
        doc = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError("<document>", f"not valid YAML: {exc}") from None
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be a mapping")

    scenario = {}
    names = {f.name for f in fields(ScenarioConfig)}
    for key, value in doc.items():
        if key in ("sweep", "solver"):
            continue
        if key not in names:
            raise ConfigError(key, "unknown key")
        if key == "threshold":
            scenario[key] = None if value is None else _check_type(key, value, float)
        elif key in _INT_FIELDS:
            scenario[key] = _check_type(key, value, int)
        else:
            scenario[key] = _check_type(key, value, float)

    solver = {}
    for key, value in (doc.get("solver") or {}).items():
        if key not in _SOLVER_FIELDS:
            raise ConfigError(f"solver.{key}", "unknown key")
        solver[key] = _check_type(f"solver.{key}", value, _SOLVER_FIELDS[key])

    grid = {}
    sweep = doc.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("sweep", "must be a mapping of axis -> values")
    for key, raw in sweep.items():
        axis = _AXIS_ALIASES.get(key, key)
        if axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.{key}", f"unknown axis; allowed: {', '.join(SWEEP_AXES)}")
        grid[axis] = _axis_values(f"sweep.{key}", raw, _AXIS_TYPES[axis])

    cfg = ScenarioConfig(**scenario)
    try:
        opts = SolverOptions(**solver)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from None
    _validate_grid(cfg, grid)
    return cfg, grid, opts


def _validate_grid(cfg, grid):
    for axis, values in grid.items():
        for i, v in enumerate(values):
            try:
                replace(cfg, **{SWEEP_AXES[axis]: v})
            except ConfigError as exc:
                raise ConfigError(f"sweep.{axis}[{i}]", exc.reason) from None


def apply_preset(cfg: ScenarioConfig, grid: dict, name: str):
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    overrides, preset_grid = PRESETS[name]
    cfg = replace(cfg, **overrides)
    _validate_grid(cfg, preset_grid)
    return cfg, {k: list(v) for k, v in preset_grid.items()}


def _summary(report) -> str:
    cols = ("k", "p", "t_measurements", "snr_db", "pd_empirical", "pfa_empirical", "pd_fusion", "pi11_hat")
    rows = [cols] + [
        tuple(f"{getattr(c, name):.4f}" if isinstance(getattr(c, name), float) else str(getattr(c, name)) for name in cols)
        for c in report.cells
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)


def run(manifest: RunManifest, cfg: ScenarioConfig, opts: SolverOptions) -> int:
    report = run_experiment(cfg, manifest.sweep_spec, opts, threads=manifest.threads)
    out = manifest.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if "csv" in manifest.emit:
        (out / "results.csv").write_text(report.to_csv(), encoding="utf-8")
    if "json" in manifest.emit:
        (out / "results.json").write_text(report.to_json(), encoding="utf-8")
    if "trace" in manifest.emit:
        (out / "trace.csv").write_text(report.trace_csv(), encoding="utf-8")
    print(_summary(report))
    return 0


def _parse_emit(value: str):
    items = frozenset(v.strip() for v in value.split(",") if v.strip())
    bad = items - set(EMIT_CHOICES)
    if not items or bad:
        raise argparse.ArgumentTypeError(f"emit must be a non-empty subset of {','.join(EMIT_CHOICES)}")
    return items


def _parse_seed(value) -> int:
    seed = int(value)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specsense", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a Monte Carlo experiment and write results")
    r.add_argument("--config", type=Path, help="YAML config; omitted fields take the defaults")
    r.add_argument("--out", type=Path, required=True, help="output directory")
    r.add_argument("--preset", choices=sorted(PRESETS))
    r.add_argument("--seed", help=f"master seed; overrides ${SEED_ENV} and the config")
    r.add_argument("--emit", type=_parse_emit, default=frozenset({"csv", "json"}))
    r.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg, grid, opts = parse_config(text)
        if args.preset:
            cfg, grid = apply_preset(cfg, grid, args.preset)
        seed = args.seed if args.seed is not None else os.environ.get(SEED_ENV)
        if seed is not None:
            try:
                cfg = replace(cfg, rng_seed=_parse_seed(seed))
            except ValueError as exc:
                raise ConfigError("seed", str(exc)) from None
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        manifest = RunManifest(
            config_path=args.config,
            output_dir=args.out,
            sweep_spec=grid,
            master_seed=cfg.rng_seed,
            emit=args.emit,
            preset=args.preset,
            threads=args.threads,
        )
        return run(manifest, cfg, opts)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SpecSenseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
