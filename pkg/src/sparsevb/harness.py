"""Experiment runner: seeded synthetic sweeps written to CSV.

Presets
-------
ksweep  vary the Laplace parameter ``k`` at fixed sparsity
psweep  vary the fraction of zeros in B at fixed ``k``
single  one instance; also dumps the true and aligned recovered B
mc      matrix completion with a fraction of entries missing

Every run writes ``rows.csv`` (one row per grid point, prior and trial) and
``aggregate.csv`` (means and standard errors over trials).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ConvergenceMode,
    Dims,
    Hyperparams,
    PriorB,
    Schedule,
    SolveOptions,
    SparseVBError,
    ValidationError,
    format_float,
    write_matrix,
)
from .metrics import compute_errors
from .synth import ProblemSpec, generate, init_state
from .vb_solver import solve

PRESETS = ("ksweep", "psweep", "single", "mc")
ERROR_COLUMNS = ("err_b", "err_b_abs", "err_b_sp", "err_ab", "err_ab_mc")
ROW_COLUMNS = (
    "preset", "k", "p", "miss_frac", "prior", "trial", "seed", "iters", "converged",
    "final_zb", "zb_clamps", "neg_var_count",
) + ERROR_COLUMNS
GROUP_COLUMNS = ("preset", "k", "p", "miss_frac", "prior")
AGGREGATE_COLUMNS = (
    GROUP_COLUMNS + ("n_trials",)
    + tuple(f"mean_{c}" for c in ERROR_COLUMNS)
    + tuple(f"stderr_{c}" for c in ERROR_COLUMNS)
)

DEFAULT_K_GRID = tuple(float(k) for k in np.logspace(2, 6, 8))
DEFAULT_P_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_K = 4e3


class ConfigError(SparseVBError, ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str = "ksweep"
    dims: Dims = Dims(50, 100, 5)
    sigma2: float = 0.1
    k_grid: tuple[float, ...] = DEFAULT_K_GRID
    p_grid: tuple[float, ...] = (0.5,)
    miss_frac: float = 0.0
    trials: int = 20
    seed: int = 0
    priors: tuple[PriorB, ...] = (PriorB.LAPLACE, PriorB.GAUSSIAN)
    solve: SolveOptions = field(
        default_factory=lambda: SolveOptions(convergence_mode=ConvergenceMode.ORACLE_DISTANCE)
    )
    workers: int = 1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r}")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials: must be a positive integer, got {self.trials!r}")
        if not self.k_grid:
            raise ConfigError("k: grid is empty")
        if any(not k > 0 for k in self.k_grid):
            raise ConfigError("k: grid values must be > 0")
        if not self.p_grid:
            raise ConfigError("p: grid is empty")
        if any(not 0 <= p <= 1 for p in self.p_grid):
            raise ConfigError("p: grid values must lie in [0, 1]")
        if not 0 <= self.miss_frac < 1:
            raise ConfigError(f"miss_frac: must lie in [0, 1), got {self.miss_frac!r}")
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2: must be > 0, got {self.sigma2!r}")
        if not self.priors:
            raise ConfigError("prior: no priors selected")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        object.__setattr__(self, "priors", tuple(PriorB(p) for p in self.priors))
        object.__setattr__(self, "k_grid", tuple(float(k) for k in self.k_grid))
        object.__setattr__(self, "p_grid", tuple(float(p) for p in self.p_grid))

    @classmethod
    def for_preset(cls, preset: str, **overrides) -> ExperimentConfig:
        base: dict = {"preset": preset}
        if preset == "psweep":
            base.update(k_grid=(DEFAULT_K,), p_grid=DEFAULT_P_GRID)
        elif preset == "single":
            base.update(k_grid=(DEFAULT_K,), p_grid=(0.7,), trials=1)
        elif preset == "mc":
            base.update(k_grid=(DEFAULT_K,), p_grid=(0.5,), miss_frac=0.1)
        base.update(overrides)
        return cls(**base)


# -- trials -------------------------------------------------------------------

def _solve_trial(cfg: ExperimentConfig, k: float, p: float, miss_frac: float,
                 prior: PriorB, trial_index: int):
    """Run one trial; return ``(record, state_or_None, truth)``."""
    seed = cfg.seed + trial_index
    spec = ProblemSpec(cfg.dims, p_zero=p, miss_frac=miss_frac, sigma2=cfg.sigma2, seed=seed)
    truth, obs = generate(spec)
    init = init_state(cfg.dims, seed)
    hp = Hyperparams(cfg.sigma2, k, np.ones(cfg.dims.H), prior)
    record = {
        "preset": cfg.preset, "k": float(k), "p": float(p), "miss_frac": float(miss_frac),
        "prior": PriorB(prior).value, "trial": int(trial_index), "seed": int(seed),
    }
    mask = obs.mask if miss_frac > 0 else None
    try:
        state, report = solve(obs, hp, cfg.solve, init, truth.product)
        errors = compute_errors(state.a_mean, state.b_mean, truth.a, truth.b, mask=mask)
    except (SparseVBError, np.linalg.LinAlgError, FloatingPointError) as exc:
        report = getattr(exc, "report", None)
        record.update(
            iters=report.iters if report else 0,
            converged=False,
            final_zb=report.final_zb if report else math.nan,
            zb_clamps=report.zb_clamped_count if report else 0,
            neg_var_count=report.negative_variance_count if report else 0,
        )
        record.update({c: math.nan for c in ERROR_COLUMNS})
        if mask is None:
            record["err_ab_mc"] = None
        return record, None, truth
    record.update(
        iters=report.iters,
        converged=report.converged,
        final_zb=report.final_zb,
        zb_clamps=report.zb_clamped_count,
        neg_var_count=report.negative_variance_count,
        err_b=errors.err_b,
        err_b_abs=errors.err_b_abs,
        err_b_sp=errors.err_b_sp,
        err_ab=errors.err_ab,
        err_ab_mc=errors.err_ab_mc,
    )
    return record, (state, errors), truth


def run_trial(cfg: ExperimentConfig, k: float, p: float, miss_frac: float,
              prior, trial_index: int) -> dict:
    """One flat record: problem seed ``cfg.seed + trial_index``, oracle stopping.

    Solver failures come back as ``converged=False`` rows with NaN errors.
    """
    return _solve_trial(cfg, k, p, miss_frac, PriorB(prior), trial_index)[0]


def _task(args):
    cfg, k, p, miss_frac, prior, trial = args
    return run_trial(cfg, k, p, miss_frac, prior, trial)


def _sort_key(cfg: ExperimentConfig, row: dict):
    order = [pr.value for pr in cfg.priors]
    return (row["k"], row["p"], row["miss_frac"], order.index(row["prior"]), row["trial"])


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """All rows of the cross product ``k_grid x p_grid x priors x trials``.

    Only the Laplace prior depends on ``k``; the other priors are solved once
    per ``(p, trial)`` and their rows repeated on every ``k``.
    """
    tasks = []
    shared = []
    for p in cfg.p_grid:
        for prior in cfg.priors:
            ks = cfg.k_grid if prior is PriorB.LAPLACE else cfg.k_grid[:1]
            for k in ks:
                for trial in range(cfg.trials):
                    tasks.append((cfg, k, p, cfg.miss_frac, prior, trial))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_task, tasks, chunksize=1))
    else:
        results = [_task(t) for t in tasks]

    rows = []
    for row in results:
        if row["prior"] == PriorB.LAPLACE.value:
            rows.append(row)
        else:
            shared.append(row)
    for row in shared:
        for k in cfg.k_grid:
            rows.append({**row, "k": k})
    rows.sort(key=lambda r: _sort_key(cfg, r))
    return rows


# -- aggregation and CSV --------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """Per grid point and prior: mean and standard error of each error column.

    Rows whose error is NaN (failed solves) are left out of that column;
    ``n_trials`` counts the rows with a finite ``err_ab``. A column that is
    empty in every row aggregates to ``None``.
    """
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[c] for c in GROUP_COLUMNS), []).append(row)
    out = []
    for key, members in groups.items():
        agg = dict(zip(GROUP_COLUMNS, key))
        agg["n_trials"] = sum(1 for r in members if _finite(r["err_ab"]))
        for col in ERROR_COLUMNS:
            present = [r[col] for r in members if r[col] is not None]
            vals = np.array([v for v in present if _finite(v)], dtype=float)
            if not present:
                mean = stderr = None
            elif vals.size == 0:
                mean = stderr = math.nan
            else:
                mean = float(np.mean(vals))
                stderr = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else math.nan
            agg[f"mean_{col}"] = mean
            agg[f"stderr_{col}"] = stderr
        out.append(agg)
    return out


def _finite(v) -> bool:
    return v is not None and math.isfinite(v)


def write_csv(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def read_rows(path) -> list[dict]:
    """Load ``rows.csv`` back into records with numeric fields parsed."""
    ints = {"trial", "seed", "iters", "zb_clamps", "neg_var_count"}
    floats = {"k", "p", "miss_frac", "final_zb"} | set(ERROR_COLUMNS)
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for key, value in raw.items():
                if key in ints:
                    row[key] = int(value)
                elif key in floats:
                    row[key] = float(value) if value != "" else None
                elif key == "converged":
                    row[key] = value == "true"
                else:
                    row[key] = value
            rows.append(row)
    return rows


def write_outputs(cfg: ExperimentConfig, rows: list[dict], out_dir) -> Path:
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    write_csv(out / "rows.csv", rows, ROW_COLUMNS)
    write_csv(out / "aggregate.csv", aggregate_rows(rows), AGGREGATE_COLUMNS)
    return out


def write_single_instance(cfg: ExperimentConfig, out_dir) -> None:
    """Dump ``B_true.csv`` and the aligned estimate of every prior.

    ``B_hat_aligned.csv`` holds the Laplace estimate (or the first prior when
    Laplace is not selected); ``B_hat_aligned_<prior>.csv`` holds each prior.
    """
    out = Path(out_dir)
    k, p = cfg.k_grid[0], cfg.p_grid[0]
    main_prior = PriorB.LAPLACE if PriorB.LAPLACE in cfg.priors else cfg.priors[0]
    truth = None
    for prior in cfg.priors:
        _, result, truth = _solve_trial(cfg, k, p, cfg.miss_frac, prior, 0)
        if result is None:
            continue
        state, errors = result
        aligned = errors.alignment.apply_b(state.b_mean)
        write_matrix(out / f"B_hat_aligned_{prior.value}.csv", aligned)
        if prior is main_prior:
            write_matrix(out / "B_hat_aligned.csv", aligned)
    write_matrix(out / "B_true.csv", truth.b)


# -- command line -----------------------------------------------------------------

class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sparsevb", description="Run seeded VB matrix factorization experiments.")
    ap.add_argument("--preset", choices=PRESETS)
    ap.add_argument("--L", type=int)
    ap.add_argument("--M", type=int)
    ap.add_argument("--H", type=int)
    ap.add_argument("--sigma2", type=float)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--k", type=float, help="single k value (overrides the preset grid)")
    ap.add_argument("--k-grid", type=_float_list, help="comma-separated k values")
    ap.add_argument("--p", type=float, help="single zero fraction of B")
    ap.add_argument("--p-grid", type=_float_list, help="comma-separated zero fractions")
    ap.add_argument("--miss-frac", type=float)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--prior", choices=("laplace", "gaussian", "uniform", "all"))
    ap.add_argument("--schedule", choices=[s.value for s in Schedule])
    ap.add_argument("--max-iters", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", default=None)
    ap.add_argument("--config", default=None)
    return ap


def _read_config_file(path, parser) -> dict:
    """``key=value`` lines using flag names (dashes or underscores)."""
    argv = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
            key = key.strip().replace("_", "-")
            if key in ("config",):
                raise ConfigError(f"config line {lineno}: {key} is not allowed in a config file")
            argv += [f"--{key}", value.strip()]
    try:
        return vars(parser.parse_args(argv))
    except _UsageError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None


def config_from_args(ns: dict) -> tuple[ExperimentConfig, str | None]:
    preset = ns.get("preset") or "ksweep"
    overrides: dict = {}
    L, M, H = ns.get("L"), ns.get("M"), ns.get("H")
    if L is not None or M is not None or H is not None:
        d = ExperimentConfig().dims
        try:
            overrides["dims"] = Dims(L or d.L, M or d.M, H or d.H)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None
    if ns.get("sigma2") is not None:
        overrides["sigma2"] = ns["sigma2"]
    if ns.get("k_grid") is not None:
        overrides["k_grid"] = ns["k_grid"]
    if ns.get("k") is not None:
        overrides["k_grid"] = (ns["k"],)
    if ns.get("p_grid") is not None:
        overrides["p_grid"] = ns["p_grid"]
    if ns.get("p") is not None:
        overrides["p_grid"] = (ns["p"],)
    if ns.get("miss_frac") is not None:
        overrides["miss_frac"] = ns["miss_frac"]
    if ns.get("trials") is not None:
        overrides["trials"] = ns["trials"]
    if ns.get("seed") is not None:
        overrides["seed"] = ns["seed"]
    if ns.get("workers") is not None:
        overrides["workers"] = ns["workers"]
    prior = ns.get("prior")
    if prior == "all":
        overrides["priors"] = (PriorB.LAPLACE, PriorB.GAUSSIAN, PriorB.UNIFORM)
    elif prior is not None:
        overrides["priors"] = (PriorB(prior),)
    solve_kw = {}
    if ns.get("delta") is not None:
        solve_kw["delta"] = ns["delta"]
    if ns.get("max_iters") is not None:
        solve_kw["max_iters"] = ns["max_iters"]
    if ns.get("schedule") is not None:
        solve_kw["update_schedule"] = ns["schedule"]
    try:
        if solve_kw:
            overrides["solve"] = dataclasses.replace(
                ExperimentConfig().solve, **solve_kw
            )
        cfg = ExperimentConfig.for_preset(preset, **overrides)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, ns.get("out")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sparsevb: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    try:
        merged = {}
        if ns.get("config"):
            merged.update({k: v for k, v in _read_config_file(ns["config"], parser).items() if v is not None})
        merged.update({k: v for k, v in ns.items() if v is not None})
        cfg, out = config_from_args(merged)
    except ConfigError as exc:
        print(f"sparsevb: config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sparsevb: cannot read config: {exc}", file=sys.stderr)
        return 2

    out = out or "results"
    try:
        rows = run_sweep(cfg)
        write_outputs(cfg, rows, out)
        if cfg.preset == "single":
            write_single_instance(cfg, out)
    except OSError as exc:
        print(f"sparsevb: I/O error: {exc}", file=sys.stderr)
        return 2
    n_failed = sum(1 for r in rows if not _finite(r["err_ab"]))
    print(f"wrote {len(rows)} rows to {Path(out) / 'rows.csv'} ({n_failed} failed solves)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
