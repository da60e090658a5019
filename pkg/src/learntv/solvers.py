"""Iterative baselines for 1D TV-regularized least squares.

Every solver works on a single observation ``x`` of shape ``(m,)`` or on a
batch of shape ``(n, m)`` sharing the design matrix, with ``lam`` a scalar or
one value per row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .operators import differentiate, integrate, integrate_adjoint, operator_norm, tv_norm
from .proxtv import shrink, tv_denoise

METHODS = (
    "pgd_analysis",
    "apgd_analysis",
    "ista_synthesis",
    "fista_synthesis",
    "dual_pgd",
    "dual_apgd",
    "primal_dual",
)
DUAL_METHODS = ("dual_pgd", "dual_apgd")


@dataclass
class TVProblem:
    A: np.ndarray
    x: np.ndarray
    lam: float | np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.A.ndim != 2:
            raise ValueError("A must be a 2-D matrix")
        if self.x.shape[-1] != self.A.shape[0]:
            raise ValueError(f"x has length {self.x.shape[-1]}, A has {self.A.shape[0]} rows")
        lam = np.asarray(self.lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("lam must be non-negative")
        if lam.ndim and lam.shape != self.x.shape[:-1]:
            raise ValueError("lam must be a scalar or hold one value per observation")
        self.lam = float(lam) if lam.ndim == 0 else lam

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @cached_property
    def rho(self) -> float:
        return operator_norm(self.A) ** 2

    @cached_property
    def rho_synthesis(self) -> float:
        return operator_norm(self.AL) ** 2

    @cached_property
    def AL(self) -> np.ndarray:
        return integrate_adjoint(self.A)

    @cached_property
    def A_pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.A)

    def default_u0(self) -> np.ndarray:
        return self.x @ self.A_pinv.T

    def lam_col(self):
        return np.asarray(self.lam)[..., None]


@dataclass
class ConvergenceTrace:
    solver_name: str
    objectives: np.ndarray = field(repr=False)

    @property
    def iterations(self) -> int:
        return self.objectives.shape[0] - 1


@dataclass
class SolveResult:
    u: np.ndarray
    trace: ConvergenceTrace


def _check_u(p: TVProblem, u):
    u = np.asarray(u, dtype=float)
    if u.shape != p.x.shape[:-1] + (p.k,):
        raise ValueError(f"u has shape {u.shape}, expected {p.x.shape[:-1] + (p.k,)}")
    return u


def objective_analysis(p: TVProblem, u):
    """``1/2 ||x - A u||^2 + lam ||D u||_1``."""
    u = _check_u(p, u)
    r = p.x - u @ p.A.T
    return 0.5 * (r * r).sum(axis=-1) + p.lam * tv_norm(u)


def objective_synthesis(p: TVProblem, z):
    """``1/2 ||x - A L z||^2 + lam ||R z||_1``."""
    z = _check_u(p, z)
    r = p.x - z @ p.AL.T
    return 0.5 * (r * r).sum(axis=-1) + p.lam * np.abs(z[..., 1:]).sum(axis=-1)


def _momentum(t):
    return (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0


def _grad_analysis(p, u):
    return (u @ p.A.T - p.x) @ p.A


def _pgd_analysis(p, u, T, accelerated, record):
    step = 1.0 / p.rho
    thr = np.asarray(p.lam) * step
    y, t = u, 1.0
    for _ in range(T):
        u_new = tv_denoise(y - step * _grad_analysis(p, y), thr)
        if accelerated:
            t_new = _momentum(t)
            y = u_new + (t - 1.0) / t_new * (u_new - u)
            t = t_new
        else:
            y = u_new
        u = u_new
        record(u)
    return u


def _ista_synthesis(p, u, T, accelerated, record):
    step = 1.0 / p.rho_synthesis
    thr = np.asarray(p.lam) * step
    B = p.AL
    z = differentiate(u)
    y, t = z, 1.0
    for _ in range(T):
        z_new = shrink(y - step * ((y @ B.T - p.x) @ B), thr)
        if accelerated:
            t_new = _momentum(t)
            y = z_new + (t - 1.0) / t_new * (z_new - z)
            t = t_new
        else:
            y = z_new
        z = z_new
        record(integrate(z))
    return integrate(z)


def _diff(u):
    return np.diff(u, axis=-1)


def _diff_adjoint(v):
    # D.T v with D the (k-1, k) forward difference
    pad = np.zeros(v.shape[:-1] + (1,))
    return np.concatenate([pad, v], axis=-1) - np.concatenate([v, pad], axis=-1)


def _dual_pgd(p, u, T, accelerated, record):
    """Projected gradient on the dual of the analysis problem.

    With ``M = A^+ A^+^T = (A^T A)^{-1}`` the dual reads
    ``min_{|v|_inf <= lam} 1/2 v^T D M D^T v - v^T D A^+ x`` and the primal
    point is recovered as ``u(v) = A^+ x - M D^T v``, which minimizes the
    Lagrangian ``f(u) + v^T D u`` over ``u``. Requires ``A`` with full column
    rank; otherwise the conjugate of the data term is not the quadratic above.
    """
    if np.linalg.matrix_rank(p.A) < p.k:
        raise ValueError("dual solvers require a design matrix with full column rank")
    Ap = p.A_pinv
    M = Ap @ Ap.T
    ux = p.default_u0()
    lam = p.lam_col()
    D_T = _diff_adjoint(np.eye(p.k - 1)).T
    step = 1.0 / operator_norm(Ap.T @ D_T) ** 2
    lin = _diff(ux)
    v = np.zeros(ux.shape[:-1] + (p.k - 1,))
    y, t = v, 1.0
    for _ in range(T):
        grad = _diff(_diff_adjoint(y) @ M) - lin
        v_new = np.clip(y - step * grad, -lam, lam)
        if accelerated:
            t_new = _momentum(t)
            y = v_new + (t - 1.0) / t_new * (v_new - v)
            t = t_new
        else:
            y = v_new
        v = v_new
        u = ux - _diff_adjoint(v) @ M
        record(u, v)
    return u


def _primal_dual(p, u, T, accelerated, record):
    """Condat-Vu forward-backward primal-dual splitting.

    ``tau = 1 / rho`` and ``sigma = rho / (4 ||D||^2)`` so that
    ``1 / tau - sigma ||D||^2 > rho / 2``; no relaxation.
    """
    k = p.k
    d_norm2 = 4.0 * math.cos(math.pi / (2 * k)) ** 2
    tau = 1.0 / p.rho
    sigma = p.rho / (4.0 * d_norm2)
    lam = p.lam_col()
    v = np.zeros(u.shape[:-1] + (k - 1,))
    for _ in range(T):
        u_new = u - tau * (_grad_analysis(p, u) + _diff_adjoint(v))
        v = np.clip(v + sigma * _diff(2.0 * u_new - u), -lam, lam)
        u = u_new
        record(u, v)
    return u


_IMPLS = {
    "pgd_analysis": (_pgd_analysis, False),
    "apgd_analysis": (_pgd_analysis, True),
    "ista_synthesis": (_ista_synthesis, False),
    "fista_synthesis": (_ista_synthesis, True),
    "dual_pgd": (_dual_pgd, False),
    "dual_apgd": (_dual_pgd, True),
    "primal_dual": (_primal_dual, False),
}


def solve(p: TVProblem, method: str, T: int, u0=None, trace: bool = True, dual_callback=None) -> SolveResult:
    """Run ``T`` iterations of ``method`` starting from ``u0`` (default ``A^+ x``).

    ``trace.objectives[t]`` is ``P(u^(t))``. ``dual_callback`` receives every
    dual iterate of the dual and primal-dual methods.
    """
    if method not in _IMPLS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    if T < 0:
        raise ValueError("T must be >= 0")
    u0 = p.default_u0() if u0 is None else _check_u(p, u0)
    objectives = [objective_analysis(p, u0)]

    def record(u, v=None):
        if trace:
            objectives.append(objective_analysis(p, u))
        if v is not None and dual_callback is not None:
            dual_callback(v)

    impl, accelerated = _IMPLS[method]
    u = impl(p, u0, T, accelerated, record) if T > 0 else u0
    objs = np.array(objectives) if trace else np.array(objectives[:1])
    return SolveResult(u=u, trace=ConvergenceTrace(method, objs))


def reference_solution(p: TVProblem, iterations: int = 100_000) -> SolveResult:
    """High-accuracy optimum from accelerated analysis PGD, without a full trace."""
    res = solve(p, "apgd_analysis", iterations, trace=False)
    return SolveResult(res.u, ConvergenceTrace("apgd_analysis", np.array([objective_analysis(p, res.u)])))


def best_constant(A, x):
    """Least-squares constant level ``c`` and the residual correlation ``A^T (A c 1 - x)``."""
    A = np.asarray(A, dtype=float)
    x = np.asarray(x, dtype=float)
    S = A.sum(axis=1)
    ss = S @ S
    if ss == 0.0:
        raise ValueError("degenerate design: all row sums of A are zero")
    c = x @ S / ss
    r = (np.multiply.outer(c, S) - x) @ A
    return c, r


def lambda_max(A, x):
    """Smallest ``lam`` whose solution is the constant ``c 1``.

    ``c 1`` is optimal iff some ``w`` with ``|w|_inf <= lam`` satisfies
    ``A^T (A c 1 - x) + D^T w = 0``, whose unique solution is the partial sum
    of the residual correlation.
    """
    _, r = best_constant(A, x)
    return np.abs(np.cumsum(r, axis=-1)[..., :-1]).max(axis=-1, initial=0.0)


@dataclass(frozen=True)
class BudgetReport:
    delta: float
    T: int
    T_in: int
    gamma: float
    C0: float
    C1: float
    T_raw: float
    T_in_raw: float


def inexact_budget(delta, rho, gamma, C0, C1) -> BudgetReport:
    """Outer and inner iteration counts for inexact PGD to reach error ``delta``."""
    if not (delta > 0 and rho > 0 and C0 > 0 and C1 > 0):
        raise ValueError("delta, rho, C0 and C1 must be positive")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    T_in_raw = (math.log(1.0 / delta) + math.log(6.0 * math.sqrt(2.0 * rho) * C1)) / math.log(1.0 / (1.0 - gamma))
    T_raw = 2.0 * rho * C0**2 / delta
    return BudgetReport(
        delta=delta,
        T=max(1, math.ceil(T_raw)),
        T_in=max(1, math.ceil(T_in_raw)),
        gamma=gamma,
        C0=C0,
        C1=C1,
        T_raw=T_raw,
        T_in_raw=T_in_raw,
    )


def condition_gamma(k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    a = math.pi / (2 * k + 1)
    return math.cos(a) / math.sin(a)
