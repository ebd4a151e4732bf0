"""Synthetic identification data, the estimation pipeline and the fit score."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy import signal

from .errors import ConfigError, DegenerateTruth, DimensionMismatch, UnknownPreset, UnstableSystem
from .kernels import make_preset
from .likelihood import LikelihoodObjective, map_estimate, precompute
from .optimizer import SolverConfig, SolverResult, ascbb_solve, sgp_solve

MAX_DRAWS = 100


@dataclass(frozen=True)
class SystemSpec:
    N: int
    snr: float
    n_est: int = 100
    true_order: int = 30
    pole_radius_max: float = 0.95

    def __post_init__(self):
        if not 0 < self.pole_radius_max < 1:
            raise ConfigError("pole_radius_max must lie in (0, 1)")
        if self.N <= self.n_est:
            raise ConfigError(f"record length N={self.N} must exceed n_est={self.n_est}")
        if self.true_order < 1 or self.n_est < 1:
            raise ConfigError("true_order and n_est must be positive")
        if not self.snr > 0:
            raise ConfigError("snr must be positive")


@dataclass(frozen=True)
class Dataset:
    u: np.ndarray
    y: np.ndarray
    theta_true: np.ndarray
    sigma2_true: float
    snr: float
    seed: Optional[int] = None
    name: str = "custom"
    y_noise_free: Optional[np.ndarray] = None

    @property
    def N(self) -> int:
        return self.u.size


DATASET_PRESETS = {
    "D1": (210, 10.0),
    "D2": (210, 1.0),
    "D3": (500, 10.0),
    "D4": (500, 1.0),
}


def _disk_points(rng, count, radius):
    r = radius * np.sqrt(rng.uniform(size=count))
    ang = rng.uniform(0.0, np.pi, size=count)
    return r * np.exp(1j * ang)


def _random_system(rng, order, radius):
    """Zeros/poles of a random stable real system with ``order`` poles."""
    pairs, single = divmod(order, 2)
    poles = _disk_points(rng, pairs, radius)
    zeros = _disk_points(rng, pairs, radius)
    poles = np.r_[poles, poles.conj()]
    zeros = np.r_[zeros, zeros.conj()]
    if single:
        poles = np.r_[poles, radius * rng.uniform(-1.0, 1.0)]
        zeros = np.r_[zeros, radius * rng.uniform(-1.0, 1.0)]
    return zeros, poles


def impulse_response(zeros, poles, length: int) -> np.ndarray:
    """Coefficients ``h(1..length)`` of ``q^{-1} B(q)/A(q)`` with unit peak."""
    sos = signal.zpk2sos(zeros, poles, 1.0)
    pulse = np.zeros(length)
    pulse[0] = 1.0
    h = signal.sosfilt(sos, pulse)
    peak = np.max(np.abs(h)) if h.size else 0.0
    if not np.all(np.isfinite(h)) or peak == 0:
        raise UnstableSystem("degenerate impulse response")
    return h / peak


def convolve_output(theta, u) -> np.ndarray:
    """Noise-free ``y(t) = sum_k theta_k u(t-k)`` from zero initial conditions."""
    u = np.asarray(u, dtype=float)
    return np.convolve(u, np.r_[0.0, theta])[:u.size]


def simulate_dataset(spec: SystemSpec, seed: int, name: str = "custom") -> Dataset:
    """Random stable system, white Gaussian input and output noise at the target SNR.

    The first ``n_est`` samples are burn-in and dropped so that every regressor
    row of the returned record is fully excited.
    """
    rng = np.random.default_rng(seed)
    for _ in range(MAX_DRAWS):
        zeros, poles = _random_system(rng, spec.true_order, spec.pole_radius_max)
        try:
            theta = impulse_response(zeros, poles, spec.n_est)
            break
        except UnstableSystem:
            continue
    else:
        raise UnstableSystem(f"no usable system after {MAX_DRAWS} draws")

    burn = spec.n_est
    u_full = rng.standard_normal(spec.N + burn)
    y0 = convolve_output(theta, u_full)[burn:]
    u = u_full[burn:]
    sigma2 = float(np.var(y0) / spec.snr)
    y = y0 + np.sqrt(sigma2) * rng.standard_normal(spec.N)
    return Dataset(u=u, y=y, theta_true=theta, sigma2_true=sigma2, snr=float(spec.snr),
                   seed=seed, name=name, y_noise_free=y0)


def preset_dataset(name: str, seed: int, n_est: int = 100) -> Dataset:
    key = str(name).upper()
    if key not in DATASET_PRESETS:
        raise UnknownPreset(f"unknown dataset {name!r}; expected one of {sorted(DATASET_PRESETS)}")
    N, snr = DATASET_PRESETS[key]
    return simulate_dataset(SystemSpec(N=N, snr=snr, n_est=n_est), seed, name=key)


def fit_score(theta_hat, theta_true) -> float:
    """Percentage fit ``100 (1 - ||theta* - theta_hat|| / ||theta* - mean(theta*)||)``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    if theta_hat.shape != theta_true.shape:
        raise DimensionMismatch(f"lengths differ: {theta_hat.size} vs {theta_true.size}")
    spread = np.sum((theta_true - theta_true.mean()) ** 2)
    if spread == 0:
        raise DegenerateTruth("true impulse response is constant")
    err = np.sum((theta_true - theta_hat) ** 2)
    return float(100.0 * (1.0 - np.sqrt(err / spread)))


SOLVERS = ("sgp", "gp", "ascbb")


def normalize_solver(name: str) -> str:
    key = str(name).strip().lower().replace("-", "")
    if key not in SOLVERS:
        raise UnknownPreset(f"unknown solver {name!r}; expected one of {SOLVERS}")
    return key


def run_solver(solver: str, objective, bounds, x0, config=None) -> SolverResult:
    solver = normalize_solver(solver)
    if solver == "ascbb":
        return ascbb_solve(objective, bounds, x0, config)
    return sgp_solve(objective, bounds, x0, config, scaled=(solver == "sgp"))


class Identification(NamedTuple):
    theta_hat: np.ndarray
    result: SolverResult
    fit: float
    problem: object


def identify(dataset: Dataset, preset_name: str, solver: str = "sgp",
             config: Optional[SolverConfig] = None, n: Optional[int] = None) -> Identification:
    """Empirical-Bayes estimate of the impulse response of ``dataset``.

    Maximizes the marginal likelihood over the preset's box, then returns the
    posterior mean at the optimum and its fit against ``theta_true`` (``nan``
    when the dataset carries no truth).
    """
    if n is None:
        if dataset.theta_true is None:
            raise ConfigError("model order n is required when the dataset has no true response")
        n = dataset.theta_true.size
    spec, bounds, x0 = make_preset(preset_name, n)
    problem = precompute(dataset.u, dataset.y, n, spec)
    result = run_solver(solver, LikelihoodObjective(problem), bounds, x0, config)
    theta_hat = map_estimate(problem, result.x_final)
    fit = float("nan")
    if dataset.theta_true is not None and dataset.theta_true.size == n:
        try:
            fit = fit_score(theta_hat, dataset.theta_true)
        except DegenerateTruth:
            pass
    return Identification(theta_hat, result, fit, problem)


# ---------------------------------------------------------------------------
# CSV + JSON sidecar

def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "u", "y"])
        for t, (u, y) in enumerate(zip(dataset.u, dataset.y), start=1):
            writer.writerow([t, f"{u:.17g}", f"{y:.17g}"])
    meta = {
        "seed": dataset.seed,
        "snr": dataset.snr,
        "sigma2_true": dataset.sigma2_true,
        "theta_true": [float(v) for v in dataset.theta_true],
        "name": dataset.name,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=1) + "\n")


def load_dataset(path) -> Dataset:
    """Read a ``t,u,y`` CSV; the JSON sidecar is optional."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"u", "y"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected columns t,u,y")
        rows = list(reader)
    u = np.array([float(r["u"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    meta = {}
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text())
    theta = meta.get("theta_true")
    return Dataset(
        u=u, y=y,
        theta_true=np.asarray(theta, dtype=float) if theta is not None else None,
        sigma2_true=float(meta.get("sigma2_true", float("nan"))),
        snr=float(meta.get("snr", float("nan"))),
        seed=meta.get("seed"),
        name=meta.get("name", path.stem),
    )
