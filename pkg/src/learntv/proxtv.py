"""Proximal operator of the 1D total variation and its weak Jacobians.

``prox_tv_exact`` solves ``argmin_u 1/2 ||y - u||^2 + mu ||D u||_1`` exactly
with Condat's direct (taut-string) algorithm. The Jacobians only depend on the
support of ``z = Dtilde u`` and the signs of the jumps, which are stored in
:class:`ProxResult`.

``prox_tv_lista`` approximates the same operator with a fixed number of
(learnable) ISTA iterations on the synthesis form
``argmin_z 1/2 ||h - L z||^2 + mu ||R z||_1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .operators import differentiate, differentiate_adjoint, integrate, integrate_adjoint, singular_values_L

SUPPORT_TOL = 1e-12


@numba.njit(cache=True)
def _condat_tv1d(y, lam, out):
    n = y.shape[0]
    if lam <= 0.0:
        for i in range(n):
            out[i] = y[i]
        return
    k = 0
    k0 = 0
    kplus = 0
    kminus = 0
    umin = lam
    umax = -lam
    vmin = y[0] - lam
    vmax = y[0] + lam
    twolam = 2.0 * lam
    minlam = -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = k0
                kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                vmax = y[k0]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return
        umin += y[k + 1] - vmin
        if umin < minlam:
            while True:
                out[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kminus = k0
            kplus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = minlam
            continue
        umax += y[k + 1] - vmax
        if umax > lam:
            while True:
                out[k0] = vmax
                k0 += 1
                if k0 > kplus:
                    break
            k = k0
            kminus = k0
            kplus = k0
            vmax = y[k0]
            vmin = vmax - twolam
            umin = lam
            umax = minlam
            continue
        k += 1
        if umin >= lam:
            kminus = k
            vmin += (umin - lam) / (kminus - k0 + 1)
            umin = lam
        if umax <= minlam:
            kplus = k
            vmax += (umax + lam) / (kplus - k0 + 1)
            umax = minlam


@numba.njit(cache=True)
def _tv1d_rows(Y, lam, out):
    for i in range(Y.shape[0]):
        _condat_tv1d(Y[i], lam[i], out[i])


def tv_denoise(y, mu):
    """Batched exact prox-TV; ``y`` is ``(k,)`` or ``(n, k)``, ``mu`` scalar or ``(n,)``."""
    y = np.asarray(y, dtype=float)
    Y = np.ascontiguousarray(np.atleast_2d(y))
    lam = np.ascontiguousarray(np.broadcast_to(np.asarray(mu, dtype=float), Y.shape[:1]))
    out = np.empty_like(Y)
    _tv1d_rows(Y, lam, out)
    return out.reshape(y.shape)


@dataclass(frozen=True)
class ProxResult:
    """Prox output with the support mask and jump signs of ``z = Dtilde u``.

    Arrays may carry a leading batch axis.
    """

    u: np.ndarray
    support: np.ndarray
    signs: np.ndarray

    @classmethod
    def from_jumps(cls, z, support_tol=SUPPORT_TOL):
        z = np.asarray(z, dtype=float)
        support = np.abs(z) > support_tol
        support[..., 0] = True
        signs = np.where(support, np.sign(z), 0).astype(np.int8)
        signs[..., 0] = 0
        return cls(u=integrate(z), support=support, signs=signs)

    @classmethod
    def from_output(cls, u, support_tol=SUPPORT_TOL):
        res = cls.from_jumps(differentiate(u), support_tol)
        return cls(u=np.asarray(u, dtype=float), support=res.support, signs=res.signs)


@dataclass(frozen=True)
class SoftThresholdGrad:
    d_t: float
    d_tau: float


def soft_threshold(t: float, tau: float):
    """``sign(t) (|t| - tau)_+`` and its weak derivatives in ``t`` and ``tau``."""
    if tau < 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    value = float(np.sign(t) * max(abs(t) - tau, 0.0))
    active = 1.0 if value != 0.0 else 0.0
    return value, SoftThresholdGrad(d_t=active, d_tau=-float(np.sign(value)) * active)


def shrink(a, tau):
    """Soft-thresholding of all coordinates except the first (the action of ``R``)."""
    z = np.sign(a) * np.maximum(np.abs(a) - np.asarray(tau)[..., None], 0.0)
    z[..., 0] = a[..., 0]
    return z


def prox_tv_exact(y, mu) -> ProxResult:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("prox_tv_exact: non-finite input")
    if np.any(np.asarray(mu) < 0) or not np.all(np.isfinite(mu)):
        raise ValueError("prox_tv_exact: mu must be finite and non-negative")
    return ProxResult.from_output(tv_denoise(y, mu))


def _support_gram(idx, k):
    # columns of L are cumulative indicators, <L[:, a], L[:, b]> = k - max(a, b) (0-based)
    return k - np.maximum.outer(idx, idx).astype(float)


def prox_tv_jacobian_x(res: ProxResult) -> np.ndarray:
    """Dense ``L_S (L_S^T L_S)^{-1} L_S^T`` for a single (unbatched) result."""
    support = np.asarray(res.support)
    assert support.ndim == 1 and support[0], "support must be 1-D with the first coordinate active"
    k = support.shape[0]
    idx = np.flatnonzero(support)
    L_S = np.tril(np.ones((k, k)))[:, idx]
    factor = cho_factor(_support_gram(idx, k))
    return L_S @ cho_solve(factor, L_S.T)


def prox_tv_jacobian_mu(res: ProxResult) -> np.ndarray:
    """Dense ``-L_S (L_S^T L_S)^{-1} sign(z)_S`` with a zero entry for coordinate 1."""
    support = np.asarray(res.support)
    assert support.ndim == 1 and support[0], "support must be 1-D with the first coordinate active"
    k = support.shape[0]
    idx = np.flatnonzero(support)
    L_S = np.tril(np.ones((k, k)))[:, idx]
    s = np.asarray(res.signs, dtype=float)[idx]
    factor = cho_factor(_support_gram(idx, k))
    return -L_S @ cho_solve(factor, s)


def _segments(support):
    support = np.atleast_2d(support)
    n, k = support.shape
    seg = np.cumsum(support, axis=-1) - 1 + (np.arange(n) * k)[:, None]
    counts = np.bincount(seg.ravel(), minlength=n * k + 1)
    return seg, counts


def jx_apply(support, g):
    """Matrix-free ``J_x @ g``: average ``g`` over each constant segment of ``u``.

    ``J_x`` is the orthogonal projection onto signals that are constant
    between consecutive support indices, so it is symmetric and applying it
    is a segment mean.
    """
    g = np.asarray(g, dtype=float)
    seg, counts = _segments(support)
    sums = np.bincount(seg.ravel(), weights=np.atleast_2d(g).ravel(), minlength=counts.size)
    return (sums[seg] / counts[seg]).reshape(g.shape)


def jmu_apply(support, signs):
    """Matrix-free ``J_mu``: segment ``j`` moves by ``-(s_in - s_out) / n_j``.

    ``s_in`` and ``s_out`` are the signs of the jumps entering and leaving the
    segment (0 at the signal boundaries).
    """
    signs = np.asarray(signs, dtype=float)
    seg, counts = _segments(support)
    entering = np.bincount(seg.ravel(), weights=np.atleast_2d(signs).ravel(), minlength=counts.size)
    leaving = np.append(entering[1:], 0.0)
    # the slot after a row's last segment is empty or the next row's first segment, both with sign 0
    out = -(entering[seg] - leaving[seg]) / counts[seg]
    return out.reshape(signs.shape)


@dataclass(frozen=True)
class NestedListaParams:
    """Weights of an unrolled ISTA approximating prox-TV.

    ``W_z`` and ``W_h`` have shape ``(t_in, k, k)``; ``mu_in`` has shape
    ``(t_in,)`` and multiplies the outer threshold.
    """

    W_z: np.ndarray
    W_h: np.ndarray
    mu_in: np.ndarray

    @property
    def n_layers(self) -> int:
        return self.mu_in.shape[0]

    @property
    def k(self) -> int:
        return self.W_z.shape[-1]

    def copy(self):
        return NestedListaParams(self.W_z.copy(), self.W_h.copy(), self.mu_in.copy())


def init_nested_params(k: int, t_in: int) -> NestedListaParams:
    """ISTA weights for the synthesis prox problem, step ``1 / ||L||^2``."""
    rho = singular_values_L(k).operator_norm ** 2
    L = np.tril(np.ones((k, k)))
    W_z = np.eye(k) - L.T @ L / rho
    W_h = L.T / rho
    return NestedListaParams(
        W_z=np.repeat(W_z[None], t_in, axis=0),
        W_h=np.repeat(W_h[None], t_in, axis=0),
        mu_in=np.full(t_in, 1.0 / rho),
    )


def _check_nested(H, params, t_in):
    if t_in is not None and t_in != params.n_layers:
        raise ValueError(f"nested params have {params.n_layers} layers, expected t_in={t_in}")
    k = H.shape[-1]
    if params.W_z.shape[1:] != (k, k) or params.W_h.shape[1:] != (k, k):
        raise ValueError(f"nested params do not match signal length k={k}")


def lista_prox_forward(H, thr, params: NestedListaParams):
    """Run the inner recursion on a batch; returns all iterates ``(t_in + 1, n, k)``."""
    H = np.atleast_2d(H)
    thr = np.broadcast_to(np.asarray(thr, dtype=float), H.shape[:1])
    _check_nested(H, params, None)
    zs = np.empty((params.n_layers + 1,) + H.shape)
    zs[0] = differentiate(H)
    mu_in = np.maximum(params.mu_in, 0.0)
    for l in range(params.n_layers):
        a = zs[l] @ params.W_z[l].T + H @ params.W_h[l].T
        zs[l + 1] = shrink(a, mu_in[l] * thr)
    return zs


def lista_prox_vjp(H, thr, params: NestedListaParams, zs, g_z):
    """Backward pass of :func:`lista_prox_forward`.

    ``g_z`` is the gradient with respect to the final iterate. Returns the
    gradients with respect to ``H``, ``thr`` and the nested parameters.
    """
    H = np.atleast_2d(H)
    thr = np.broadcast_to(np.asarray(thr, dtype=float), H.shape[:1])
    g_z = np.array(np.atleast_2d(g_z), dtype=float)
    mu_in = np.maximum(params.mu_in, 0.0)
    g_H = np.zeros_like(H)
    g_thr = np.zeros(H.shape[0])
    gW_z = np.zeros_like(params.W_z)
    gW_h = np.zeros_like(params.W_h)
    gmu_in = np.zeros_like(params.mu_in)
    for l in range(params.n_layers - 1, -1, -1):
        z = zs[l + 1]
        active = z != 0.0
        active[:, 0] = True
        g_a = g_z * active
        sgn = np.sign(z)
        sgn[:, 0] = 0.0
        g_tau = -(g_z * sgn).sum(axis=1)
        if params.mu_in[l] > 0:
            gmu_in[l] = g_tau @ thr
        g_thr += g_tau * mu_in[l]
        gW_z[l] = g_a.T @ zs[l]
        gW_h[l] = g_a.T @ H
        g_H += g_a @ params.W_h[l]
        g_z = g_a @ params.W_z[l]
    g_H += differentiate_adjoint(g_z)
    return g_H, g_thr, NestedListaParams(gW_z, gW_h, gmu_in)


def prox_tv_lista(h, mu, params: NestedListaParams, t_in: int | None = None) -> ProxResult:
    """Approximate prox-TV with the nested unrolled ISTA network."""
    h = np.asarray(h, dtype=float)
    if np.any(np.asarray(mu) < 0):
        raise ValueError("mu must be non-negative")
    try:
        _check_nested(np.atleast_2d(h), params, t_in)
    except ValueError as exc:
        raise ValueError(f"invalid nested params: {exc}") from None
    zs = lista_prox_forward(h, mu, params)
    return ProxResult.from_jumps(zs[-1].reshape(h.shape))


def prox_tv_lista_jacobian(h, mu, params: NestedListaParams):
    """Dense Jacobians ``(J_x, J_mu)`` of the nested network by reverse-mode chaining."""
    h = np.asarray(h, dtype=float)
    k = h.shape[-1]
    H = np.repeat(h[None], k, axis=0)
    zs = lista_prox_forward(H, np.full(k, float(mu)), params)
    # row i of the output holds d u_i / d h, seeded with e_i on u = L z
    g_z = integrate_adjoint(np.eye(k))
    g_H, g_thr, _ = lista_prox_vjp(H, np.full(k, float(mu)), params, zs, g_z)
    return g_H, g_thr


def synthesis_prox_objective(h, z, mu):
    """``1/2 ||h - L z||^2 + mu ||R z||_1`` along the last axis."""
    r = np.asarray(h) - integrate(z)
    return 0.5 * (r * r).sum(axis=-1) + np.asarray(mu) * np.abs(np.asarray(z)[..., 1:]).sum(axis=-1)


def prox_error(h, z_approx, mu):
    """Suboptimality of ``z_approx`` for the synthesis prox problem at ``h``."""
    z_star = differentiate(prox_tv_exact(h, mu).u)
    return synthesis_prox_objective(h, z_approx, mu) - synthesis_prox_objective(h, z_star, mu)
