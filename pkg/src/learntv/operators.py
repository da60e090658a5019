"""Finite-difference and integration operators for 1D total variation.

The four operators are

* ``D``      (k-1, k) first order finite differences,
* ``Dtilde`` (k, k)   finite differences keeping the first sample,
* ``L``      (k, k)   discrete integration, the inverse of ``Dtilde``,
* ``R``      (k, k)   identity with the first diagonal entry zeroed.

Dense constructors are provided for analysis and tests; the solvers use the
O(k) kernels :func:`integrate`, :func:`differentiate` and their adjoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

OPERATOR_KINDS = ("D", "Dtilde", "L", "R")


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine exhausts its iteration budget."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


def make_operator(kind: str, k: int) -> np.ndarray:
    """Return the dense operator ``kind`` for signals of length ``k``."""
    if kind not in OPERATOR_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}, expected one of {OPERATOR_KINDS}")
    if int(k) != k or k < 2:
        raise ValueError(f"invalid dimension k={k}, need k >= 2")
    k = int(k)
    if kind == "D":
        return np.eye(k - 1, k, 1) - np.eye(k - 1, k)
    if kind == "Dtilde":
        return np.eye(k) - np.eye(k, k, -1)
    if kind == "L":
        return np.tril(np.ones((k, k)))
    R = np.eye(k)
    R[0, 0] = 0.0
    return R


# O(k) kernels, all acting on the last axis so they broadcast over batches.

def integrate(z):
    """``L @ z``."""
    return np.cumsum(z, axis=-1)


def integrate_adjoint(g):
    """``L.T @ g``: reversed cumulative sum."""
    return np.cumsum(g[..., ::-1], axis=-1)[..., ::-1]


def differentiate(u):
    """``Dtilde @ u``."""
    u = np.asarray(u, dtype=float)
    z = u.copy()
    z[..., 1:] -= u[..., :-1]
    return z


def differentiate_adjoint(g):
    """``Dtilde.T @ g``."""
    g = np.asarray(g, dtype=float)
    out = g.copy()
    out[..., :-1] -= g[..., 1:]
    return out


def tv_norm(u):
    """``||D u||_1`` along the last axis."""
    return np.abs(np.diff(u, axis=-1)).sum(axis=-1)


@dataclass(frozen=True)
class SpectralReport:
    k: int
    singular_values: np.ndarray = field(repr=False)
    operator_norm: float


def singular_values_L(k: int) -> SpectralReport:
    """Closed-form singular values ``1 / (2 cos(pi l / (2k + 1)))`` of ``L``."""
    if k < 1:
        raise ValueError(f"invalid dimension k={k}, need k >= 1")
    l = np.arange(1, k + 1)
    sv = 1.0 / (2.0 * np.cos(np.pi * l / (2 * k + 1)))
    # l = k is evaluated through the sine form, which avoids cancellation in cos near pi/2
    sv[-1] = 1.0 / (2.0 * math.sin(math.pi / (2 * (2 * k + 1))))
    return SpectralReport(k=k, singular_values=sv, operator_norm=float(sv[-1]))


def operator_norm(M, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value of ``M`` by power iteration on ``M.T @ M``.

    Iterates until the relative change of the estimate drops below ``tol``.

    Raises
    ------
    ValueError
        If ``M`` is identically zero or ``tol`` is not positive.
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``; the last unit
        iterate is attached as ``last_iterate``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("operator_norm expects a 2-D matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.any(M):
        raise ValueError("power iteration undefined for the zero matrix")
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    sigma = np.linalg.norm(M @ v)
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space, restart from a fresh direction
            v = rng.standard_normal(M.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        new_sigma = np.linalg.norm(M @ v)
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return float(new_sigma)
        sigma = new_sigma
    raise ConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iter} iterations", last_iterate=v
    )


@dataclass(frozen=True)
class RatioSummary:
    k: int
    m: int
    samples: np.ndarray = field(repr=False)
    mean: float
    q10: float
    q90: float
    lower_bound: float
    conjecture: float


def nearest_rank_quantile(sorted_samples, q: float) -> float:
    n = len(sorted_samples)
    idx = max(math.ceil(q * n), 1) - 1
    return float(sorted_samples[idx])


def ratio_lower_bound(k: int) -> float:
    return (2 * k + 1) / (4 * math.pi**2)


def ratio_conjecture(k: int) -> float:
    return (2 * k + 1) ** 2 / (16 * math.pi**2)


def ratio_sample(A) -> float:
    """``||A L||_2^2 / ||A||_2^2`` for one design matrix."""
    A = np.asarray(A, dtype=float)
    # A @ L sums columns j..k-1 into column j: a reversed cumsum along rows
    AL = integrate_adjoint(A)
    return (operator_norm(AL) / operator_norm(A)) ** 2


def ratio_experiment(k: int, trials: int, seed: int, m: int | None = None) -> RatioSummary:
    """Monte-Carlo estimate of ``E[||A L||^2 / ||A||^2]`` for Gaussian ``A``.

    ``A`` has shape ``(m, k)`` with ``m = k`` unless given. Trial ``i`` draws
    from its own generator seeded with ``seed + i``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    m = k if m is None else m
    samples = np.empty(trials)
    for i in range(trials):
        rng = np.random.Generator(np.random.Philox(seed + i))
        samples[i] = ratio_sample(rng.standard_normal((m, k)))
    s = np.sort(samples)
    return RatioSummary(
        k=k,
        m=m,
        samples=samples,
        mean=float(samples.mean()),
        q10=nearest_rank_quantile(s, 0.1),
        q90=nearest_rank_quantile(s, 0.9),
        lower_bound=ratio_lower_bound(k),
        conjecture=ratio_conjecture(k),
    )
