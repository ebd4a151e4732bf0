"""Box-constrained first-order solvers.

``sgp_solve`` is a scaled gradient projection method: each iteration takes
``z = P(x - alpha D grad f)``, searches along ``z - x`` with a monotone
Armijo backtracking and adapts ``alpha`` by alternating the two
Barzilai-Borwein rules.  The diagonal scaling ``D`` comes from splitting the
gradient into positive parts ``V - U`` so that a unit scaled step stays in the
box.  With ``scaled=False`` the same code runs with ``D = I`` (plain gradient
projection).  ``ascbb_solve`` is the affine-scaling cyclic BB baseline.

The objective is any callable ``objective(x, grad=True)`` returning
``(f, grad_f0, grad_f1)``; with ``grad=False`` only ``f`` is needed and the
gradient entries may be ``None``.
"""

from __future__ import annotations

import csv
import enum
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .bounds import (BOTH_FINITE, FREE, LOWER_ONLY, UPPER_ONLY, Bounds,
                     project_box)
from .errors import ConfigError, DimensionMismatch

__all__ = [
    "Bounds", "project_box", "SolverConfig", "SolverResult", "Termination",
    "TraceRecord", "BBState", "split_gradient", "scaling_matrix",
    "lower_bound_scaling", "bb_rules", "bb_steplength", "sgp_solve",
    "ascbb_solve", "projected_gradient_residual",
]

TAU_RANGE = (1e-4, 1 - 1e-4)


@dataclass(frozen=True)
class SolverConfig:
    beta: float = 1e-4
    gamma: float = 0.4
    alpha_min: float = 1e-7
    alpha_max: float = 1e2
    alpha0: float = 1.0
    L_min: float = 1e-5
    L_max: float = 1e10
    zeta: float = 1e-5
    M_alpha: int = 3
    tau1: float = 0.5
    stop_tol: float = 1e-9
    max_iter: int = 5000
    max_backtracks: int = 40
    # AS-CBB only
    cycle_length: int = 4
    nonmonotone_memory: int = 8

    def __post_init__(self):
        checks = [
            (0 < self.beta < 1, "beta must lie in (0, 1)"),
            (0 < self.gamma < 1, "gamma must lie in (0, 1)"),
            (0 < self.alpha_min < self.alpha_max, "need 0 < alpha_min < alpha_max"),
            (self.alpha0 > 0, "alpha0 must be positive"),
            (0 < self.L_min < self.L_max, "need 0 < L_min < L_max"),
            (self.zeta > 0, "zeta must be positive"),
            (self.M_alpha >= 0, "M_alpha must be non-negative"),
            (0 < self.tau1 < 1, "tau1 must lie in (0, 1)"),
            (self.stop_tol >= 0, "stop_tol must be non-negative"),
            (self.max_iter >= 1, "max_iter must be >= 1"),
            (self.max_backtracks >= 0, "max_backtracks must be >= 0"),
            (self.cycle_length >= 1, "cycle_length must be >= 1"),
            (self.nonmonotone_memory >= 1, "nonmonotone_memory must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_toml(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{k} = {v!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())

    @classmethod
    def from_mapping(cls, data: dict) -> "SolverConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown solver config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in data.items():
            default = getattr(cls, k)
            kwargs[k] = int(v) if isinstance(default, int) else float(v)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "SolverConfig":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            data = tomllib.loads(Path(path).read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_mapping(data)


class Termination(str, enum.Enum):
    RELATIVE_DECREASE = "RelativeDecrease"
    MAX_ITERATIONS = "MaxIterations"
    LINE_SEARCH_FAILURE = "LineSearchFailure"


@dataclass
class TraceRecord:
    k: int
    f: float
    pg_residual: float
    alpha: float
    lam: float
    time_s: float
    nf: int
    x: np.ndarray
    descent: float = float("nan")  # grad^T dx of the step that produced x
    d_min: float = float("nan")
    d_max: float = float("nan")


@dataclass
class SolverResult:
    x_final: np.ndarray
    f_final: float
    iterations: int
    function_evals: int
    gradient_evals: int
    termination: Termination
    trace: list = field(default_factory=list)
    stationary: bool = False
    solver: str = "sgp"

    TRACE_HEADER = ("k", "f", "pg_residual", "alpha", "lambda", "time_s")

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.TRACE_HEADER)
            for rec in self.trace:
                writer.writerow([rec.k, repr(rec.f), repr(rec.pg_residual),
                                 repr(rec.alpha), repr(rec.lam), f"{rec.time_s:.6f}"])


def projected_gradient_residual(x, grad, bounds: Bounds) -> float:
    """``||x - P(x - grad f(x))||_inf``; zero exactly at stationary points."""
    return float(np.max(np.abs(x - project_box(x - grad, bounds)), initial=0.0))


def split_gradient(grad_f0, grad_f1, zeta: float):
    """Decompose ``g = grad_f0 + grad_f1`` as ``V - U`` with ``V, U > 0``.

    Case analysis on the signs of the two parts.  When ``g_i > 0`` the
    positive part of the split goes into ``V_i``; when ``g_i <= 0`` the
    negative part goes into ``U_i``.  Whenever both parts have the same sign
    the offset ``zeta`` keeps the smaller of ``U_i, V_i`` positive.
    """
    g0 = np.asarray(grad_f0, dtype=float)
    g1 = np.asarray(grad_f1, dtype=float)
    if g0.shape != g1.shape:
        raise DimensionMismatch("gradient parts differ in shape")
    g = g0 + g1
    V = np.empty_like(g)
    U = np.empty_like(g)

    # The mixed-sign cases use the negated summand directly, so V - U
    # reproduces g bit for bit.  In the same-sign cases the offset part is set
    # to zeta itself: writing it as V - g could round to 0 when |g| >> zeta.
    pos = g > 0
    c1 = pos & (g1 < 0)
    c2 = pos & ~c1 & (g0 < 0)
    c3 = pos & ~c1 & ~c2
    V[c1], U[c1] = g0[c1], -g1[c1]
    V[c2], U[c2] = g1[c2], -g0[c2]
    V[c3], U[c3] = g[c3] + zeta, zeta

    neg = ~pos
    d1 = neg & (g0 > 0)
    d2 = neg & ~d1 & (g1 > 0)
    d3 = neg & ~d1 & ~d2
    U[d1], V[d1] = -g1[d1], g0[d1]
    U[d2], V[d2] = -g0[d2], g1[d2]
    U[d3], V[d3] = zeta - g[d3], zeta
    return V, U


def scaling_matrix(x, bounds: Bounds, V, U, grad, L_min: float, L_max: float) -> np.ndarray:
    """Diagonal of the split-gradient scaling, clipped to ``[L_min, L_max]``.

    Before clipping, ``x - d * grad`` is feasible: coordinates moving up are
    scaled by their distance to the upper bound over ``U``, those moving down
    by the distance to the lower bound over ``V``.
    """
    d = raw_scaling(x, bounds, V, U, grad)
    return np.minimum(np.maximum(L_min, d), L_max)


def raw_scaling(x, bounds: Bounds, V, U, grad) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    cls = bounds.index_classes()
    to_upper = ((cls == BOTH_FINITE) & (grad <= 0)) | (cls == UPPER_ONLY)
    to_lower = ((cls == BOTH_FINITE) & (grad > 0)) | (cls == LOWER_ONLY)
    d = np.ones_like(x)
    d[to_upper] = (bounds.upper[to_upper] - x[to_upper]) / U[to_upper]
    d[to_lower] = (x[to_lower] - bounds.lower[to_lower]) / V[to_lower]
    d[cls == FREE] = 1.0
    return d


def lower_bound_scaling(x, lower, V, L_min: float, L_max: float) -> np.ndarray:
    """Scaling for pure lower bounds, ``clip((x - l) / V)``."""
    d = (np.asarray(x, dtype=float) - lower) / V
    return np.minimum(np.maximum(L_min, d), L_max)


@dataclass(frozen=True)
class BBState:
    tau: float
    alpha2_history: tuple = ()


def bb_rules(r, w, d):
    """Raw scaled BB values ``(bb1, bb2)``; ``nan`` where the curvature term is <= 0."""
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    d = np.asarray(d, dtype=float)
    rd = r / d
    den1 = rd @ w
    dw = d * w
    den2 = dw @ dw
    num2 = r @ dw
    bb1 = (rd @ rd) / den1 if den1 > 0 else np.nan
    bb2 = num2 / den2 if num2 > 0 else np.nan
    return bb1, bb2


def bb_steplength(r, w, d, state: BBState, config: SolverConfig):
    """Adaptive alternation of the two scaled BB rules; returns ``(alpha, state)``."""
    bb1, bb2 = bb_rules(r, w, d)
    lo, hi = config.alpha_min, config.alpha_max
    a1 = hi if np.isnan(bb1) else min(hi, max(lo, bb1))
    a2 = hi if np.isnan(bb2) else min(hi, max(lo, bb2))
    history = (state.alpha2_history + (a2,))[-(config.M_alpha + 1):]
    if a2 / a1 <= state.tau:
        alpha = min(history)
        tau = state.tau * 0.9
    else:
        alpha = a1
        tau = state.tau * 1.1
    tau = min(max(tau, TAU_RANGE[0]), TAU_RANGE[1])
    return alpha, BBState(tau=tau, alpha2_history=history)


def _prepare(objective, bounds, x0, config):
    x = project_box(np.asarray(x0, dtype=float), bounds)
    f, g0, g1 = objective(x, grad=True)
    g0 = np.asarray(g0, dtype=float)
    g1 = np.asarray(g1, dtype=float)
    if g0.shape != x.shape or g1.shape != x.shape:
        raise DimensionMismatch("objective gradient does not match the point")
    return x, float(f), g0, g1


def sgp_solve(objective: Callable, bounds: Bounds, x0, config: Optional[SolverConfig] = None,
              scaled: bool = True, force_identity: bool = False) -> SolverResult:
    """Scaled gradient projection with monotone Armijo backtracking.

    ``force_identity`` runs the scaled code path with ``D = I``; it exists to
    check that SGP and GP differ only in the scaling.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    x, f, g0, g1 = _prepare(objective, bounds, x0, config)
    g = g0 + g1
    nf = ng = 1
    state = BBState(tau=config.tau1)
    trace = [TraceRecord(0, f, projected_gradient_residual(x, g, bounds), np.nan, np.nan,
                         time.perf_counter() - t0, nf, x.copy())]
    termination = Termination.MAX_ITERATIONS
    stationary = False
    r = w = None
    k = 0
    while k < config.max_iter:
        if scaled and not force_identity:
            V, U = split_gradient(g0, g1, config.zeta)
            d = scaling_matrix(x, bounds, V, U, g, config.L_min, config.L_max)
        else:
            d = np.ones_like(x)
        if r is None:
            alpha = min(config.alpha_max, max(config.alpha_min, config.alpha0))
        else:
            alpha, state = bb_steplength(r, w, d, state, config)

        z = project_box(x - alpha * d * g, bounds)
        dx = z - x
        descent = float(g @ dx)
        if not np.any(dx) or not descent < 0:
            termination, stationary = Termination.RELATIVE_DECREASE, True
            break

        lam = 1.0
        accepted = False
        for _ in range(config.max_backtracks + 1):
            x_trial = project_box(x + lam * dx, bounds)
            f_trial = float(objective(x_trial, grad=False)[0])
            nf += 1
            if f_trial <= f + config.beta * lam * descent:
                accepted = True
                break
            lam *= config.gamma
        if not accepted:
            termination = Termination.LINE_SEARCH_FAILURE
            break

        f_new, g0, g1 = objective(x_trial, grad=True)
        ng += 1
        f_new = float(f_new)
        g_new = g0 + g1
        r, w = x_trial - x, g_new - g
        f_old, x, f, g = f, x_trial, f_new, g_new
        k += 1
        trace.append(TraceRecord(k, f, projected_gradient_residual(x, g, bounds), alpha, lam,
                                 time.perf_counter() - t0, nf, x.copy(), descent,
                                 float(d.min()), float(d.max())))
        if f_old - f < config.stop_tol * abs(f):
            termination = Termination.RELATIVE_DECREASE
            break

    return SolverResult(x_final=x, f_final=f, iterations=k, function_evals=nf,
                        gradient_evals=ng, termination=termination, trace=trace,
                        stationary=stationary, solver="sgp" if scaled else "gp")


def ascbb_direction(x, grad, bounds: Bounds, alpha_bar: float) -> np.ndarray:
    """Affine-scaling direction ``-g_i / (alpha_bar + |g_i| / X_i)``.

    ``X_i`` is the distance to the bound the coordinate moves towards;
    ``|g_i| / inf = 0`` and a zero distance blocks the coordinate.
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    X = np.where(grad <= 0, bounds.upper - x, x - bounds.lower)
    absg = np.abs(grad)
    ratio = np.zeros_like(x)
    finite = np.isfinite(X) & (X > 0)
    ratio[finite] = absg[finite] / X[finite]
    blocked = (X <= 0) & (absg > 0)
    d = np.zeros_like(x)
    ok = ~blocked
    d[ok] = -grad[ok] / (alpha_bar + ratio[ok])
    return d


def ascbb_solve(objective: Callable, bounds: Bounds, x0,
                config: Optional[SolverConfig] = None) -> SolverResult:
    """Affine-scaling cyclic Barzilai-Borwein method with nonmonotone Armijo."""
    config = config or SolverConfig()
    t0 = time.perf_counter()
    x, f, g0, g1 = _prepare(objective, bounds, x0, config)
    g = g0 + g1
    nf = ng = 1
    alpha_bar = 1.0 / config.alpha0
    history = deque([f], maxlen=config.nonmonotone_memory)
    trace = [TraceRecord(0, f, projected_gradient_residual(x, g, bounds), alpha_bar, np.nan,
                         time.perf_counter() - t0, nf, x.copy())]
    termination = Termination.MAX_ITERATIONS
    stationary = False
    k = 0
    while k < config.max_iter:
        d = ascbb_direction(x, g, bounds, alpha_bar)
        descent = float(g @ d)
        if not np.any(d) or not descent < 0:
            termination, stationary = Termination.RELATIVE_DECREASE, True
            break
        f_ref = max(history)
        lam = 1.0
        accepted = False
        for _ in range(config.max_backtracks + 1):
            x_trial = project_box(x + lam * d, bounds)
            f_trial = float(objective(x_trial, grad=False)[0])
            nf += 1
            if f_trial <= f_ref + config.beta * lam * descent:
                accepted = True
                break
            lam *= config.gamma
        if not accepted:
            termination = Termination.LINE_SEARCH_FAILURE
            break
        f_new, g0, g1 = objective(x_trial, grad=True)
        ng += 1
        f_new = float(f_new)
        g_new = g0 + g1
        r, w = x_trial - x, g_new - g
        f_old, x, f, g = f, x_trial, f_new, g_new
        history.append(f)
        k += 1
        if (k - 1) % config.cycle_length == 0:
            rw = float(r @ w)
            bb1 = (r @ r) / rw if rw > 0 else config.alpha_max
            bb1 = min(config.alpha_max, max(config.alpha_min, bb1))
            alpha_bar = max(config.alpha_min, 1.0 / bb1)
        trace.append(TraceRecord(k, f, projected_gradient_residual(x, g, bounds), alpha_bar,
                                 lam, time.perf_counter() - t0, nf, x.copy(), descent))
        if abs(f_old - f) < config.stop_tol * abs(f):
            termination = Termination.RELATIVE_DECREASE
            break

    return SolverResult(x_final=x, f_final=f, iterations=k, function_evals=nf,
                        gradient_evals=ng, termination=termination, trace=trace,
                        stationary=stationary, solver="ascbb")
