"""Negative log marginal likelihood of the impulse-response model.

With ``Sigma(x) = Phi P(nu) Phi^T + sigma2 I`` the objective is

    f(x) = f0(x) + f1(x),   f0 = Y^T Sigma^{-1} Y,   f1 = log det Sigma,

where ``x = (nu, sigma2)``.  Everything is evaluated from the ``n x n``
quantities ``Phi^T Phi`` and ``Phi^T Y`` through the factorizations
``P = L L^T`` and ``sigma2 I + L^T Phi^T Phi L = S S^T``; the ``(N-n)``-sized
covariance is never formed and ``P`` is never inverted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import (CacheMissing, DimensionMismatch, FactorizationFailure,
                     InsufficientData, NonFiniteValue)
from .kernels import (KernelSpec, eval_kernel, is_zero_kernel, kernel_gradient,
                      kernel_hessian)

JITTER_STEPS = (1e-12, 1e-10, 1e-8)


@dataclass(frozen=True)
class HyperPoint:
    """Kernel hyperparameters plus noise variance, ``x = (nu, sigma2)``."""

    nu: np.ndarray
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float).ravel())
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    def as_array(self) -> np.ndarray:
        return np.r_[self.nu, self.sigma2]

    @classmethod
    def from_array(cls, x) -> "HyperPoint":
        x = np.asarray(x, dtype=float)
        return cls(x[:-1], x[-1])


@dataclass(frozen=True)
class ProblemData:
    """Sufficient statistics of one ``(u, y)`` record for a given order.

    ``phi`` and ``y`` are only kept when requested (the dense oracle needs
    them); the fast path uses ``phi_gram``, ``phi_y`` and ``ynorm2``.
    """

    phi_gram: np.ndarray
    phi_y: np.ndarray
    ynorm2: float
    N: int
    n: int
    spec: KernelSpec
    phi: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None

    @property
    def rows(self) -> int:
        return self.N - self.n


@dataclass
class Factors:
    """Cholesky factors at one point plus the derived ``n x n`` quantities.

    ``Z``, ``M`` and ``q`` are filled lazily by ``complete_factors``.
    """

    L: np.ndarray
    S: np.ndarray
    w: np.ndarray  # S^{-T} S^{-1} L^T Phi^T Y
    sigma2: float
    jitter: float = 0.0
    Z: Optional[np.ndarray] = None  # L S^{-T} S^{-1} L^T
    M: Optional[np.ndarray] = None  # Phi^T Sigma^{-1} Phi
    q: Optional[np.ndarray] = None  # Phi^T Sigma^{-1} Y


@dataclass
class Evaluation:
    f: float
    grad_f0: Optional[np.ndarray] = None
    grad_f1: Optional[np.ndarray] = None
    factors: Optional[Factors] = None
    p_is_zero: bool = False
    # ||Sigma^{-1} Y||^2, reused by the Hessian
    resid_norm2: Optional[float] = None

    @property
    def grad(self) -> np.ndarray:
        return self.grad_f0 + self.grad_f1


def regressor(u, n: int) -> np.ndarray:
    """Toeplitz regressor with row ``t-n-1`` equal to ``(u(t-1), ..., u(t-n))``."""
    u = np.asarray(u, dtype=float)
    N = u.size
    if N <= n:
        raise InsufficientData(f"need more than n={n} samples, got {N}")
    return sla.toeplitz(u[n - 1:N - 1], u[n - 1::-1])


def precompute(u, y, n: int, spec: KernelSpec, keep_regressor: bool = False) -> ProblemData:
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.shape != y.shape:
        raise DimensionMismatch(f"u and y lengths differ: {u.size} vs {y.size}")
    if n < 1:
        raise ValueError("order n must be >= 1")
    if spec.n != n:
        raise DimensionMismatch(f"kernel order {spec.n} does not match n={n}")
    N = u.size
    if N <= n:
        raise InsufficientData(f"need N > n, got N={N}, n={n}")
    Phi = regressor(u, n)
    Y = y[n:]
    gram = Phi.T @ Phi
    gram = np.triu(gram) + np.triu(gram, 1).T
    return ProblemData(
        phi_gram=gram,
        phi_y=Phi.T @ Y,
        ynorm2=float(Y @ Y),
        N=N,
        n=n,
        spec=spec,
        phi=Phi if keep_regressor else None,
        y=Y.copy() if keep_regressor else None,
    )


def _split(problem: ProblemData, x):
    if isinstance(x, HyperPoint):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.spec.m + 1,):
        raise DimensionMismatch(
            f"expected a point of length {problem.spec.m + 1}, got shape {x.shape}")
    s2 = x[-1]
    if not s2 > 0:
        raise ValueError(f"sigma2 must be positive, got {s2}")
    return x[:-1], s2


def jittered_cholesky(P: np.ndarray):
    """Lower Cholesky factor of ``P``, retrying with a small diagonal shift.

    Returns ``(L, delta)`` where ``delta`` is the relative shift used (0 if none).
    """
    try:
        return sla.cholesky(P, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = np.mean(np.diag(P))
    eye = np.eye(P.shape[0])
    for delta in JITTER_STEPS:
        try:
            return sla.cholesky(P + delta * scale * eye, lower=True, check_finite=False), delta
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailure("Cholesky of the kernel matrix failed even with jitter")


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"non-finite {what}")


def evaluate(problem: ProblemData, x, gradient: bool = True) -> Evaluation:
    """Objective value and the split gradient ``(grad f0, grad f1)`` at ``x``.

    With ``gradient=False`` only ``f`` (and the factors) are computed.
    """
    nu, s2 = _split(problem, x)
    spec = problem.spec
    N, n = problem.N, problem.n
    rows = N - n

    if is_zero_kernel(spec, nu):
        f = problem.ynorm2 / s2 + rows * np.log(s2)
        _finite(f, "objective")
        ev = Evaluation(f=float(f), p_is_zero=True,
                        resid_norm2=problem.ynorm2 / s2 ** 2)
        if gradient:
            dP = kernel_gradient(spec, nu)
            Yt = problem.phi_y
            g0 = np.empty(spec.m + 1)
            g1 = np.empty(spec.m + 1)
            g0[:-1] = -np.einsum("i,kij,j->k", Yt, dP, Yt) / s2 ** 2
            g1[:-1] = dP.reshape(spec.m, -1) @ problem.phi_gram.ravel() / s2
            g0[-1] = -problem.ynorm2 / s2 ** 2
            g1[-1] = rows / s2
            _finite(g0, "gradient")
            _finite(g1, "gradient")
            ev.grad_f0, ev.grad_f1 = g0, g1
        return ev

    P = eval_kernel(spec, nu)
    L, delta = jittered_cholesky(P)
    gram = problem.phi_gram
    Q = L.T @ gram @ L
    Q = np.triu(Q) + np.triu(Q, 1).T
    Q[np.diag_indices_from(Q)] += s2
    try:
        S = sla.cholesky(Q, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure("Cholesky of sigma2 I + L^T Phi^T Phi L failed") from exc

    # v = S^{-1} L^T Phi^T Y,  w = S^{-T} v
    v = sla.solve_triangular(S, L.T @ problem.phi_y, lower=True, check_finite=False)
    w = sla.solve_triangular(S, v, lower=True, trans="T", check_finite=False)
    vv = float(v @ v)
    ww = float(w @ w)
    # log det Sigma = (N - n) log s2 + log det(Q / s2)
    f = (problem.ynorm2 - vv) / s2 + (rows - n) * np.log(s2) \
        + 2.0 * np.sum(np.log(np.diag(S)))
    _finite(f, "objective")
    resid = problem.ynorm2 / s2 ** 2 - vv / s2 ** 2 - ww / s2

    factors = Factors(L=L, S=S, w=w, sigma2=s2, jitter=delta)
    ev = Evaluation(f=float(f), factors=factors, resid_norm2=float(resid))
    if gradient:
        add_gradient(problem, x, ev)
    return ev


def complete_factors(problem: ProblemData, fac: Factors) -> Factors:
    """Compute ``Z``, ``M`` and ``q`` from the Cholesky factors (once)."""
    if fac.Z is None:
        gram, s2 = problem.phi_gram, fac.sigma2
        B = sla.solve_triangular(fac.S, fac.L.T, lower=True, check_finite=False)
        Z = B.T @ B
        M = (gram - gram @ Z @ gram) / s2
        fac.Z = Z
        fac.M = np.triu(M) + np.triu(M, 1).T
        fac.q = (problem.phi_y - gram @ (fac.L @ fac.w)) / s2
    return fac


def add_gradient(problem: ProblemData, x, ev: Evaluation) -> Evaluation:
    """Fill in the split gradient of an evaluation made with ``gradient=False``."""
    if ev.grad_f0 is not None:
        return ev
    if ev.p_is_zero:
        full = evaluate(problem, x, gradient=True)
        ev.grad_f0, ev.grad_f1 = full.grad_f0, full.grad_f1
        return ev
    nu, s2 = _split(problem, x)
    m, n = problem.spec.m, problem.n
    fac = complete_factors(problem, ev.factors)
    q, M = fac.q, fac.M
    dP = kernel_gradient(problem.spec, nu)
    g0 = np.empty(m + 1)
    g1 = np.empty(m + 1)
    g0[:-1] = -np.einsum("i,kij,j->k", q, dP, q)
    # Tr(M dP_i) as an elementwise sum, no matrix product
    g1[:-1] = dP.reshape(m, -1) @ M.ravel()
    Sinv = sla.solve_triangular(fac.S, np.eye(n), lower=True, check_finite=False)
    g0[-1] = -ev.resid_norm2
    g1[-1] = (problem.N - 2 * n) / s2 + float(np.sum(Sinv * Sinv))
    _finite(g0, "gradient")
    _finite(g1, "gradient")
    ev.grad_f0, ev.grad_f1 = g0, g1
    return ev


class LikelihoodObjective:
    """Solver callback ``(x, grad) -> (f, grad_f0, grad_f1)`` for one problem.

    Keeps the factorization of the last point so that the gradient request
    following an accepted line-search trial costs no new factorization.
    """

    def __init__(self, problem: ProblemData):
        self.problem = problem
        self._key = None
        self._last = None

    def evaluation(self, x, grad: bool = True) -> Evaluation:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key == self._key:
            ev = self._last
        else:
            ev = evaluate(self.problem, x, gradient=False)
            self._key, self._last = key, ev
        if grad:
            add_gradient(self.problem, x, ev)
        return ev

    def __call__(self, x, grad: bool = True):
        ev = self.evaluation(x, grad)
        if grad:
            return ev.f, ev.grad_f0, ev.grad_f1
        return ev.f, None, None


def evaluate_dense_oracle(problem: ProblemData, x):
    """Reference ``(f, grad f)`` from the explicitly formed ``Sigma``.

    Needs a problem built with ``keep_regressor=True``; meant for small
    instances only.
    """
    if problem.phi is None or problem.y is None:
        raise ValueError("dense oracle needs the regressor; use precompute(..., keep_regressor=True)")
    nu, s2 = _split(problem, x)
    spec = problem.spec
    Phi, Y = problem.phi, problem.y
    P = eval_kernel(spec, nu)
    dP = kernel_gradient(spec, nu)
    Sigma = Phi @ P @ Phi.T + s2 * np.eye(Phi.shape[0])
    try:
        cf = sla.cho_factor(Sigma, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure("Sigma is numerically singular") from exc
    alpha = sla.cho_solve(cf, Y)
    Sigma_inv = sla.cho_solve(cf, np.eye(Sigma.shape[0]))
    f = float(Y @ alpha + 2.0 * np.sum(np.log(np.diag(cf[0]))))
    Pa = Phi.T @ alpha
    A = Phi.T @ Sigma_inv @ Phi
    grad = np.empty(spec.m + 1)
    for i in range(spec.m):
        grad[i] = -Pa @ dP[i] @ Pa + np.sum(A * dP[i])
    grad[-1] = -alpha @ alpha + np.trace(Sigma_inv)
    return f, grad


def hessian(problem: ProblemData, x, evaluation: Optional[Evaluation]) -> np.ndarray:
    """Full ``(m+1) x (m+1)`` Hessian of ``f``, reusing the factors of ``evaluation``."""
    nu, s2 = _split(problem, x)
    spec = problem.spec
    m, n = spec.m, problem.n
    rows = problem.N - n
    gram = problem.phi_gram
    if evaluation is None:
        raise CacheMissing("hessian needs the Evaluation returned by evaluate()")
    if evaluation.p_is_zero:
        Z = np.zeros((n, n))
        M = gram / s2
        q = problem.phi_y / s2
    elif evaluation.factors is None:
        raise CacheMissing("evaluation carries no factorization cache")
    else:
        fac = complete_factors(problem, evaluation.factors)
        Z, M, q = fac.Z, fac.M, fac.q
    resid = evaluation.resid_norm2

    dP = kernel_gradient(spec, nu)
    d2P = kernel_hessian(spec, nu)
    H = np.empty((m + 1, m + 1))

    Pq = dP @ q                       # row i: dP_i q
    a = Pq @ M @ Pq.T                 # a_ij = q^T dP_j M dP_i q
    b = np.einsum("a,ijab,b->ij", q, d2P, q)
    MP = M @ dP                       # m products M dP_i
    e = np.einsum("jab,iba->ij", MP, MP)
    g = np.einsum("ijab,ab->ij", d2P, M)
    H[:m, :m] = 2.0 * a - b + g - e

    IGZ = np.eye(n) - gram @ Z
    q2 = IGZ @ q / s2                 # Phi^T Sigma^{-2} Y
    M2 = IGZ @ M / s2                 # Phi^T Sigma^{-2} Phi
    mixed = 2.0 * (Pq @ q2) - dP.reshape(m, -1) @ M2.ravel()
    H[:m, m] = mixed
    H[m, :m] = mixed

    GZ = gram @ Z
    trace_s2 = (rows - 2.0 * np.trace(GZ) + np.sum(GZ * GZ.T)) / s2 ** 2
    cubic = (resid - q @ Z @ q) / s2      # Y^T Sigma^{-3} Y
    H[m, m] = 2.0 * cubic - trace_s2
    H = 0.5 * (H + H.T)
    _finite(H, "Hessian")
    return H


def map_estimate(problem: ProblemData, x) -> np.ndarray:
    """Posterior mean of the impulse response (zero prior mean)."""
    nu, s2 = _split(problem, x)
    if is_zero_kernel(problem.spec, nu):
        return np.zeros(problem.n)
    fac = evaluate(problem, x, gradient=False).factors
    return fac.L @ fac.w
