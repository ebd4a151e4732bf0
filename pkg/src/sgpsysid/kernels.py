"""Prior covariance (kernel) matrices for impulse-response estimation.

Four families are supported: the tuned/correlated kernel (TC), the second
order stable-spline kernel (SS), the diagonal/correlated kernel (DC) and the
multiple kernel ``P(nu) = sum_i nu_i P_i`` over a fixed basis.  All formulas
use 1-based lags ``k, j = 1..n``.

Every function returns dense arrays: ``eval_kernel`` gives ``(n, n)``,
``kernel_gradient`` gives ``(m, n, n)`` and ``kernel_hessian`` gives
``(m, m, n, n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bounds import Bounds, project_box
from .errors import (DerivativeUndefined, DimensionMismatch, ParamOutOfDomain,
                     UnknownPreset)


class Family(str, enum.Enum):
    TC = "TC"
    SS = "SS"
    DC = "DC"
    MULTIPLE = "Multiple"


_N_PARAMS = {Family.TC: 2, Family.SS: 2, Family.DC: 3}


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family together with the model order ``n``.

    ``basis`` is required for (and only used by) the multiple family; it is
    stored as a read-only ``(m, n, n)`` array.  ``labels`` optionally names
    the basis matrices (used by presets for reporting).
    """

    family: Family
    n: int
    basis: Optional[np.ndarray] = None
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"order n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if family is Family.MULTIPLE:
            if self.basis is None or len(self.basis) == 0:
                raise ValueError("multiple kernel needs a non-empty basis")
            basis = np.array(self.basis, dtype=float)
            if basis.ndim != 3 or basis.shape[1:] != (self.n, self.n):
                raise DimensionMismatch(
                    f"basis must have shape (m, {self.n}, {self.n}), got {basis.shape}")
            if not np.array_equal(basis, basis.transpose(0, 2, 1)):
                raise ValueError("basis matrices must be exactly symmetric")
            basis.flags.writeable = False
            object.__setattr__(self, "basis", basis)
        elif self.basis is not None:
            raise ValueError(f"{family.value} kernel takes no basis")

    @property
    def m(self) -> int:
        """Number of kernel hyperparameters."""
        if self.family is Family.MULTIPLE:
            return self.basis.shape[0]
        return _N_PARAMS[self.family]


def _check_params(spec: KernelSpec, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (spec.m,):
        raise DimensionMismatch(
            f"{spec.family.value} kernel expects {spec.m} parameters, got shape {nu.shape}")
    if not np.all(np.isfinite(nu)):
        raise ParamOutOfDomain(f"non-finite kernel parameters {nu}")
    if spec.family is Family.MULTIPLE:
        if np.any(nu < 0):
            raise ParamOutOfDomain("multiple-kernel scale factors must be non-negative")
        return nu
    c, mu = nu[0], nu[1]
    if c < 0:
        raise ParamOutOfDomain(f"scale c must be >= 0, got {c}")
    if not 0 <= mu < 1:
        raise ParamOutOfDomain(f"decay mu must lie in [0, 1), got {mu}")
    if spec.family is Family.DC and not -1 < nu[2] < 1:
        raise ParamOutOfDomain(f"correlation rho must lie in (-1, 1), got {nu[2]}")
    return nu


def _lags(n):
    k = np.arange(1, n + 1, dtype=float)
    return k[:, None], k[None, :]


def _dpow(base: float, expo: np.ndarray, order: int) -> np.ndarray:
    """``d^order/dbase^order`` of ``base**expo`` evaluated elementwise.

    Entries whose polynomial coefficient vanishes are exactly zero, which
    gives the continuous extension at ``base = 0`` (e.g. ``d(mu^1)/dmu = 1``).
    """
    if order == 0:
        coef = np.ones_like(expo)
    elif order == 1:
        coef = expo.copy()
    else:
        coef = expo * (expo - 1.0)
    shifted = expo - order
    live = coef != 0
    if base == 0 and np.any(live & (shifted < 0)):
        raise DerivativeUndefined(
            f"order-{order} derivative of base**e is unbounded at base = 0")
    out = np.zeros_like(expo)
    out[live] = coef[live] * np.power(base, shifted[live])
    return out


def _mirror(a: np.ndarray) -> np.ndarray:
    """Copy the upper triangle onto the lower one (exact symmetry)."""
    upper = np.triu(a)
    return upper + np.triu(a, 1).swapaxes(-1, -2)


def _tc_terms(n, mu, order):
    k, j = _lags(n)
    return _dpow(mu, np.maximum(k, j), order)


def _ss_terms(n, mu, order):
    k, j = _lags(n)
    hi, lo = np.maximum(k, j), np.minimum(k, j)
    return 0.5 * _dpow(mu, 2 * hi + lo, order) - _dpow(mu, 3 * hi, order) / 6.0


def _dc_parts(n, mu, rho, order_mu, order_rho):
    k, j = _lags(n)
    return _dpow(mu, (k + j) / 2.0, order_mu) * _dpow(rho, np.abs(k - j), order_rho)


def eval_kernel(spec: KernelSpec, nu) -> np.ndarray:
    """Return the ``n x n`` prior covariance ``P(nu)``."""
    nu = _check_params(spec, nu)
    n = spec.n
    if spec.family is Family.MULTIPLE:
        P = np.tensordot(nu, spec.basis, axes=1)
    elif spec.family is Family.TC:
        P = nu[0] * _tc_terms(n, nu[1], 0)
    elif spec.family is Family.SS:
        P = nu[0] * _ss_terms(n, nu[1], 0)
    else:
        P = nu[0] * _dc_parts(n, nu[1], nu[2], 0, 0)
    return _mirror(P)


def kernel_gradient(spec: KernelSpec, nu) -> np.ndarray:
    """Partial derivatives ``dP/dnu_i`` stacked into an ``(m, n, n)`` array."""
    nu = _check_params(spec, nu)
    n = spec.n
    if spec.family is Family.MULTIPLE:
        return spec.basis
    c = nu[0]
    if spec.family is Family.TC:
        grads = [_tc_terms(n, nu[1], 0), c * _tc_terms(n, nu[1], 1)]
    elif spec.family is Family.SS:
        grads = [_ss_terms(n, nu[1], 0), c * _ss_terms(n, nu[1], 1)]
    else:
        mu, rho = nu[1], nu[2]
        grads = [_dc_parts(n, mu, rho, 0, 0),
                 c * _dc_parts(n, mu, rho, 1, 0),
                 c * _dc_parts(n, mu, rho, 0, 1)]
    return _mirror(np.stack(grads))


def kernel_hessian(spec: KernelSpec, nu) -> np.ndarray:
    """Second partials ``d2P/dnu_i dnu_j`` as an ``(m, m, n, n)`` array."""
    nu = _check_params(spec, nu)
    n, m = spec.n, spec.m
    H = np.zeros((m, m, n, n))
    if spec.family is Family.MULTIPLE:
        return H
    c = nu[0]
    if spec.family in (Family.TC, Family.SS):
        terms = _tc_terms if spec.family is Family.TC else _ss_terms
        H[0, 1] = H[1, 0] = terms(n, nu[1], 1)
        H[1, 1] = c * terms(n, nu[1], 2)
    else:
        mu, rho = nu[1], nu[2]
        H[0, 1] = H[1, 0] = _dc_parts(n, mu, rho, 1, 0)
        H[0, 2] = H[2, 0] = _dc_parts(n, mu, rho, 0, 1)
        H[1, 1] = c * _dc_parts(n, mu, rho, 2, 0)
        H[1, 2] = H[2, 1] = c * _dc_parts(n, mu, rho, 1, 1)
        H[2, 2] = c * _dc_parts(n, mu, rho, 0, 2)
    return _mirror(H)


def is_zero_kernel(spec: KernelSpec, nu) -> bool:
    """Structural test for ``P(nu) == 0`` (all scale factors, or ``c``, vanish)."""
    nu = np.asarray(nu, dtype=float)
    if spec.family is Family.MULTIPLE:
        return bool(np.all(nu == 0))
    return bool(nu[0] == 0)


# ---------------------------------------------------------------------------
# Presets

PRESET_NAMES = ("dc-m", "tcss-m", "dc", "tc", "ss")

SIGMA2_LOWER = 1e-2

DCM_MU = tuple(round(0.1 * i, 10) for i in range(1, 10))
DCM_RHO = (-0.95, -0.65, -0.35, 0.35, 0.65, 0.95)
TCSS_TC_MU = (tuple(round(0.05 * i, 10) for i in range(2, 16))
              + tuple(round(0.81 + 0.02 * i, 10) for i in range(7)))
TCSS_SS_MU = tuple(round(0.8 + 0.02 * i, 10) for i in range(8))


def _multiple_basis(n, members):
    mats, labels = [], []
    for family, params in members:
        sub = KernelSpec(family, n)
        mats.append(eval_kernel(sub, params))
        labels.append(f"{family.value}{tuple(float(p) for p in params[1:])}")
    return np.stack(mats), tuple(labels)


def normalize_preset_name(name: str) -> str:
    key = str(name).strip().lower().replace("_", "-")
    if key == "tcss":
        key = "tcss-m"
    if key not in PRESET_NAMES:
        raise UnknownPreset(f"unknown kernel preset {name!r}; expected one of {PRESET_NAMES}")
    return key


def make_preset(name: str, n: int):
    """Assemble one of the five benchmark kernel configurations.

    Returns ``(spec, bounds, x0)`` where ``bounds`` and ``x0`` cover the full
    variable ``x = (nu, sigma2)``.
    """
    key = normalize_preset_name(name)
    inf = np.inf
    if key == "dc-m":
        members = [(Family.DC, (1.0, mu, rho)) for mu in DCM_MU for rho in DCM_RHO]
        basis, labels = _multiple_basis(n, members)
    elif key == "tcss-m":
        members = ([(Family.TC, (1.0, mu)) for mu in TCSS_TC_MU]
                   + [(Family.SS, (1.0, mu)) for mu in TCSS_SS_MU])
        basis, labels = _multiple_basis(n, members)
    if key in ("dc-m", "tcss-m"):
        spec = KernelSpec(Family.MULTIPLE, n, basis, labels)
        m = spec.m
        lower = np.r_[np.zeros(m), SIGMA2_LOWER]
        upper = np.full(m + 1, inf)
        x0 = np.ones(m + 1)
    elif key == "dc":
        spec = KernelSpec(Family.DC, n)
        lower = np.array([0.0, 0.72, -0.99, SIGMA2_LOWER])
        upper = np.array([inf, 0.99, 0.99, inf])
        x0 = np.array([0.5, 0.5, 0.8, 0.5])
    else:
        spec = KernelSpec(Family.TC if key == "tc" else Family.SS, n)
        lower = np.array([0.0, 0.7, SIGMA2_LOWER])
        upper = np.array([inf, 0.99, inf])
        x0 = np.array([0.5, 0.8, 0.5])
    bounds = Bounds(lower, upper)
    # the published DC start has mu below its own lower bound
    return spec, bounds, project_box(x0, bounds)
