"""Monte Carlo benchmark harness and Dolan-More performance profiles."""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import AllFailedRow, ConfigError, SysIdError
from .kernels import make_preset, normalize_preset_name
from .likelihood import LikelihoodObjective, map_estimate, precompute
from .optimizer import SolverConfig, Termination
from .sysid import (DATASET_PRESETS, Dataset, SystemSpec, fit_score, normalize_solver,
                    preset_dataset, run_solver, simulate_dataset)

TRIAL_HEADER = ("preset", "dataset", "solver", "trial", "seed", "data_sha", "fit", "it", "nf",
                "ng", "f_final", "termination", "failed", "t_s")
AGGREGATE_HEADER = ("preset", "dataset", "solver", "mean_fit", "sd_fit", "mean_it", "mean_nf",
                    "mean_t_s", "failures")
TIMING_COLUMNS = ("t_s",)


@dataclass
class BenchConfig:
    presets: Sequence[str]
    datasets: Sequence[Union[str, SystemSpec]]
    solvers: Sequence[str]
    runs: int = 1
    base_seed: int = 0
    n_est: int = 100
    output_dir: Optional[Path] = None
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    traces: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not self.presets or not self.datasets or not self.solvers:
            raise ConfigError("presets, datasets and solvers must be non-empty")
        self.presets = [normalize_preset_name(p) for p in self.presets]
        self.solvers = [normalize_solver(s) for s in self.solvers]
        names = []
        for d in self.datasets:
            if isinstance(d, SystemSpec):
                names.append(d)
            elif str(d).upper() in DATASET_PRESETS:
                names.append(str(d).upper())
            else:
                raise ConfigError(f"unknown dataset {d!r}")
        self.datasets = names
        if self.output_dir is not None:
            self.output_dir = Path(self.output_dir)


@dataclass
class BenchReport:
    trials: list
    aggregate: list
    files: dict = field(default_factory=dict)

    @property
    def failures(self) -> int:
        return sum(1 for row in self.trials if row["failed"])


def _dataset_label(d) -> str:
    if isinstance(d, SystemSpec):
        return f"N{d.N}-snr{d.snr:g}"
    return d


def _make_dataset(d, seed, n_est) -> Dataset:
    if isinstance(d, SystemSpec):
        return simulate_dataset(d, seed, name=_dataset_label(d))
    return preset_dataset(d, seed, n_est=n_est)


def data_checksum(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.u).tobytes())
    h.update(np.ascontiguousarray(dataset.y).tobytes())
    return h.hexdigest()[:16]


def _trace_fits(problem, result, theta_true):
    out = []
    for rec in result.trace:
        theta = map_estimate(problem, rec.x)
        out.append((rec.nf, rec.f, fit_score(theta, theta_true)))
    return out


def run_benchmark(config: BenchConfig) -> BenchReport:
    """Run every (preset, dataset, solver) cell for ``config.runs`` seeded trials.

    Trial ``i`` uses seed ``base_seed + i`` for every cell, so all solvers and
    presets see the same records.  Solver failures are recorded, not raised.
    """
    rows = []
    trace_sets = {}
    for dname in config.datasets:
        label = _dataset_label(dname)
        for trial in range(config.runs):
            seed = config.base_seed + trial
            dataset = _make_dataset(dname, seed, config.n_est)
            sha = data_checksum(dataset)
            n = dataset.theta_true.size
            for preset in config.presets:
                spec, bounds, x0 = make_preset(preset, n)
                problem = precompute(dataset.u, dataset.y, n, spec)
                for solver in config.solvers:
                    row = {"preset": preset, "dataset": label, "solver": solver, "trial": trial,
                           "seed": seed, "data_sha": sha}
                    try:
                        objective = LikelihoodObjective(problem)
                        t0 = time.perf_counter()
                        result = run_solver(solver, objective, bounds, x0, config.solver_config)
                        elapsed = time.perf_counter() - t0
                        theta = map_estimate(problem, result.x_final)
                        row.update(fit=fit_score(theta, dataset.theta_true),
                                   it=result.iterations, nf=result.function_evals,
                                   ng=result.gradient_evals, f_final=result.f_final,
                                   termination=result.termination.value,
                                   failed=result.termination is not Termination.RELATIVE_DECREASE,
                                   t_s=elapsed)
                        if config.traces:
                            key = f"{preset}__{label}__trial{trial:03d}"
                            trace_sets.setdefault(key, {})[solver] = _trace_fits(
                                problem, result, dataset.theta_true)
                    except SysIdError as exc:
                        row.update(fit=math.nan, it=0, nf=0, ng=0, f_final=math.nan,
                                   termination=f"Error:{type(exc).__name__}", failed=True,
                                   t_s=math.nan)
                    rows.append(row)

    aggregate = aggregate_rows(rows)
    report = BenchReport(trials=rows, aggregate=aggregate)
    if config.output_dir is not None:
        out = config.output_dir
        out.mkdir(parents=True, exist_ok=True)
        report.files["trials"] = out / "trials.csv"
        report.files["aggregate"] = out / "aggregate.csv"
        write_csv(report.files["trials"], TRIAL_HEADER, rows)
        write_csv(report.files["aggregate"], AGGREGATE_HEADER, aggregate)
        if trace_sets:
            trace_dir = out / "traces"
            for key, traces in trace_sets.items():
                emit_trace_plots(key, traces, trace_dir)
            report.files["traces"] = trace_dir
    return report


def aggregate_rows(rows) -> list:
    cells = {}
    for row in rows:
        cells.setdefault((row["preset"], row["dataset"], row["solver"]), []).append(row)
    out = []
    for (preset, dataset, solver), group in cells.items():
        done = [r for r in group if not math.isnan(r["fit"])]
        fits = np.array([r["fit"] for r in done])

        def mean(key):
            return float(np.mean([r[key] for r in done])) if done else math.nan

        out.append({
            "preset": preset, "dataset": dataset, "solver": solver,
            "mean_fit": float(fits.mean()) if done else math.nan,
            "sd_fit": float(fits.std(ddof=1)) if len(done) > 1 else 0.0,
            "mean_it": mean("it"), "mean_nf": mean("nf"), "mean_t_s": mean("t_s"),
            "failures": sum(1 for r in group if r["failed"]),
        })
    return out


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


# ---------------------------------------------------------------------------
# performance profiles

@dataclass
class PerformanceProfile:
    ratios: np.ndarray
    rho_max: float
    xi: np.ndarray
    curves: np.ndarray  # (solvers, len(xi))
    solvers: tuple = ()

    def value(self, s: int, xi: float) -> float:
        """Fraction of problems on which solver ``s`` is within ``xi`` of the best."""
        return float(np.mean(self.ratios[:, s] <= xi))


def performance_profile(times, failures=None, solvers: Sequence[str] = ()) -> PerformanceProfile:
    """Ratios ``t_ps / min_s t_ps`` and the cumulative profile of each solver.

    Failed cells get ``rho_max`` = (largest finite ratio) + 1, so a ratio
    equals ``rho_max`` exactly when the solver failed.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 2:
        raise ValueError("times must be a problems x solvers matrix")
    failed = np.zeros(times.shape, dtype=bool) if failures is None else np.asarray(failures, bool)
    failed = failed | ~np.isfinite(times)
    ok_times = np.where(failed, np.inf, times)
    if np.any(ok_times[~failed] <= 0):
        raise ValueError("times must be positive")
    best = ok_times.min(axis=1)
    if np.any(~np.isfinite(best)):
        bad = np.flatnonzero(~np.isfinite(best)).tolist()
        raise AllFailedRow(f"no solver succeeded on problems {bad}")
    ratios = ok_times / best[:, None]
    finite = ratios[~failed]
    rho_max = float(finite.max()) + 1.0
    ratios[failed] = rho_max
    xi = np.unique(ratios)
    curves = np.stack([(ratios[:, s][:, None] <= xi[None, :]).mean(axis=0)
                       for s in range(times.shape[1])])
    return PerformanceProfile(ratios=ratios, rho_max=rho_max, xi=xi, curves=curves,
                              solvers=tuple(solvers))


def read_trials(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def profile_from_trials(rows, metric: str = "t_s") -> PerformanceProfile:
    """Profile over problems ``(preset, dataset, trial)`` from trial rows."""
    solvers, problems = [], []
    cells = {}
    for row in rows:
        key = (row["preset"], row["dataset"], int(row["trial"]))
        if row["solver"] not in solvers:
            solvers.append(row["solver"])
        if key not in problems:
            problems.append(key)
        failed = str(row["failed"]) in ("1", "True", "true")
        cells[key, row["solver"]] = (float(row[metric]), failed)
    times = np.full((len(problems), len(solvers)), np.nan)
    fails = np.ones_like(times, dtype=bool)
    for i, p in enumerate(problems):
        for j, s in enumerate(solvers):
            if (p, s) in cells:
                times[i, j], fails[i, j] = cells[p, s]
    return performance_profile(times, fails, solvers)


def write_profile(profile: PerformanceProfile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["xi", *profile.solvers])
        for col, xi in enumerate(profile.xi):
            writer.writerow([repr(float(xi)), *(repr(float(v)) for v in profile.curves[:, col])])


# ---------------------------------------------------------------------------
# trace series

def emit_trace_plots(instance: str, traces: dict, out_dir) -> float:
    """Write per-solver ``(nf, (f - f*)/|f*|)`` and ``(nf, fit)`` CSV series.

    ``traces`` maps solver name to a list of ``(nf, f, fit)`` samples.  ``f*``
    is the best final objective over all solvers of the instance; it is
    returned.  Relative differences are clipped at zero.
    """
    if not traces:
        raise ValueError("need at least one trace")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    f_star = min(samples[-1][1] for samples in traces.values())
    scale = abs(f_star) if f_star != 0 else 1.0
    for solver, samples in traces.items():
        obj_rows = [{"nf": nf, "rel_diff": max(0.0, (f - f_star) / scale)}
                    for nf, f, _ in samples]
        fit_rows = [{"nf": nf, "fit": fit} for nf, _, fit in samples]
        write_csv(out_dir / f"{instance}__{solver}__objective.csv", ("nf", "rel_diff"), obj_rows)
        write_csv(out_dir / f"{instance}__{solver}__fit.csv", ("nf", "fit"), fit_rows)
    (out_dir / f"{instance}__fstar.txt").write_text(repr(float(f_star)) + "\n")
    return float(f_star)
