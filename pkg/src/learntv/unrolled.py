"""Unrolled proximal gradient networks for TV-regularized least squares.

Three architectures share the layer ``u_t = prox(W_x x + W_u u_{t-1}, mu_t)``:

``lpgd_taut``
    analysis PGD, prox computed exactly, backpropagated with the weak
    Jacobian of prox-TV;
``lpgd_lista``
    analysis PGD whose prox is a nested unrolled ISTA on the synthesis form;
``lista_synthesis``
    LISTA on the synthesis (Lasso) form, iterating on ``z = Dtilde u``.

All parameters of a net are stacked per layer in ``net.params``. Thresholds
are scaled per sample by ``lam_i / net.lam``, so a net initialized at
``net.lam`` runs plain PGD for every sample whatever its own ``lam_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import differentiate, integrate, integrate_adjoint, operator_norm, tv_norm
from .proxtv import (
    NestedListaParams,
    ProxResult,
    init_nested_params,
    jmu_apply,
    jx_apply,
    lista_prox_forward,
    lista_prox_vjp,
    shrink,
    tv_denoise,
)

ARCHS = ("lpgd_taut", "lpgd_lista", "lista_synthesis")
OUTER_PARAMS = ("W_x", "W_u", "mu")
INNER_PARAMS = ("W_z", "W_h", "mu_in")


@dataclass(frozen=True)
class LayerParams:
    W_x: np.ndarray
    W_u: np.ndarray
    mu: float


@dataclass
class UnrolledNet:
    arch: str
    lam: float
    params: dict
    m: int
    k: int
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}, expected one of {ARCHS}")
        expected = OUTER_PARAMS + (INNER_PARAMS if self.arch == "lpgd_lista" else ())
        if set(self.params) != set(expected):
            raise ValueError(f"{self.arch} expects parameters {expected}, got {sorted(self.params)}")
        T = self.n_layers
        if self.params["W_x"].shape != (T, self.k, self.m) or self.params["W_u"].shape != (T, self.k, self.k):
            raise ValueError("parameter shapes do not match (T, k, m) / (T, k, k)")

    @property
    def n_layers(self) -> int:
        return self.params["mu"].shape[0]

    @property
    def t_in(self) -> int:
        return self.params["mu_in"].shape[1] if self.arch == "lpgd_lista" else 0

    def layer(self, t: int) -> LayerParams:
        p = self.params
        return LayerParams(W_x=p["W_x"][t], W_u=p["W_u"][t], mu=float(p["mu"][t]))

    def nested(self, t: int) -> NestedListaParams:
        p = self.params
        return NestedListaParams(W_z=p["W_z"][t], W_h=p["W_h"][t], mu_in=p["mu_in"][t])

    def copy(self) -> "UnrolledNet":
        return UnrolledNet(self.arch, self.lam, {k: v.copy() for k, v in self.params.items()}, self.m, self.k, self.seed)

    def with_params(self, params) -> "UnrolledNet":
        return UnrolledNet(self.arch, self.lam, params, self.m, self.k, self.seed)


def _operator_for(arch, A):
    A = np.asarray(A, dtype=float)
    return integrate_adjoint(A) if arch == "lista_synthesis" else A


def init_params(arch: str, A, lam: float, T: int, t_in: int = 0) -> dict:
    """Parameters turning ``T`` layers into ``T`` iterations of the classic solver."""
    B = _operator_for(arch, A)
    rho = operator_norm(B) ** 2
    k = B.shape[1]
    params = {
        "W_x": np.repeat((B.T / rho)[None], T, axis=0),
        "W_u": np.repeat((np.eye(k) - B.T @ B / rho)[None], T, axis=0),
        "mu": np.full(T, lam / rho),
    }
    if arch == "lpgd_lista":
        if t_in < 0:
            raise ValueError("t_in must be >= 0")
        inner = init_nested_params(k, t_in)
        params["W_z"] = np.repeat(inner.W_z[None], T, axis=0)
        params["W_h"] = np.repeat(inner.W_h[None], T, axis=0)
        params["mu_in"] = np.repeat(inner.mu_in[None], T, axis=0)
    return params


def init_net(arch: str, A, lam: float, T: int, t_in: int = 0, seed: int = 0) -> UnrolledNet:
    """Untrained net; ``A`` is the analysis design matrix for every architecture."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}, expected one of {ARCHS}")
    if T < 0:
        raise ValueError("T must be >= 0")
    A = np.asarray(A, dtype=float)
    params = init_params(arch, A, lam, T, t_in)
    return UnrolledNet(arch=arch, lam=float(lam), params=params, m=A.shape[0], k=A.shape[1], seed=seed)


def grow(net: UnrolledNet, A, extra_layers: int) -> UnrolledNet:
    """Append ``extra_layers`` freshly initialized layers after the trained ones."""
    tail = init_params(net.arch, A, net.lam, extra_layers, net.t_in)
    params = {k: np.concatenate([net.params[k], tail[k]], axis=0) for k in net.params}
    return net.with_params(params)


def initial_estimate(A, X):
    """``A^+ x`` for each observation."""
    return np.asarray(X, dtype=float) @ np.linalg.pinv(A).T


@dataclass
class ForwardCache:
    """Everything :func:`backward` needs, one entry per layer.

    ``us[t]`` is the input of layer ``t`` (``us[0] = u0``), ``hs[t]`` the
    pre-prox point. ``support``/``signs`` hold the prox masks for
    ``lpgd_taut``; ``zs`` the inner iterates for ``lpgd_lista`` or the
    synthesis iterates for ``lista_synthesis``.
    """

    x: np.ndarray
    scale: np.ndarray
    thr: np.ndarray
    us: list = field(default_factory=list)
    hs: list = field(default_factory=list)
    support: list = field(default_factory=list)
    signs: list = field(default_factory=list)
    zs: list = field(default_factory=list)


def threshold_scale(net: UnrolledNet, n: int, lam=None):
    if lam is None or net.lam == 0:
        return np.ones(n)
    return np.broadcast_to(np.asarray(lam, dtype=float), (n,)) / net.lam


def forward(net: UnrolledNet, x, u0, lam=None):
    """Run the network on observations ``x`` (``(m,)`` or ``(n, m)``) from ``u0``.

    ``lam`` is the per-sample regularization; thresholds scale with
    ``lam / net.lam``. Returns ``(u, cache)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    u = np.array(np.atleast_2d(u0), dtype=float)
    if X.shape[1] != net.m or u.shape != (X.shape[0], net.k):
        raise ValueError(f"shape mismatch: net expects x (n, {net.m}) and u0 (n, {net.k})")
    p = net.params
    scale = threshold_scale(net, X.shape[0], lam)
    thr = np.maximum(p["mu"], 0.0)[:, None] * scale[None]
    cache = ForwardCache(x=X, scale=scale, thr=thr)
    if net.arch == "lista_synthesis":
        z = differentiate(u)
        cache.zs.append(z)
        for t in range(net.n_layers):
            z = shrink(X @ p["W_x"][t].T + z @ p["W_u"][t].T, thr[t])
            cache.zs.append(z)
        u = integrate(z)
    else:
        for t in range(net.n_layers):
            cache.us.append(u)
            h = X @ p["W_x"][t].T + u @ p["W_u"][t].T
            cache.hs.append(h)
            if net.arch == "lpgd_taut":
                res = ProxResult.from_output(tv_denoise(h, thr[t]))
                cache.support.append(res.support)
                cache.signs.append(res.signs)
                u = res.u
            else:
                zs = lista_prox_forward(h, thr[t], net.nested(t))
                cache.zs.append(zs)
                u = integrate(zs[-1])
    return (u[0] if single else u), cache


def backward(net: UnrolledNet, cache: ForwardCache, grad_u) -> dict:
    """Gradients of a scalar loss with respect to all parameters.

    ``grad_u`` is the gradient of the loss with respect to the network output
    (same shape as the output of :func:`forward`).
    """
    g = np.array(np.atleast_2d(grad_u), dtype=float)
    X = cache.x
    if g.shape != (X.shape[0], net.k):
        raise ValueError("grad_u does not match the cached forward pass")
    n_cached = len(cache.zs) - 1 if net.arch == "lista_synthesis" else len(cache.hs)
    if n_cached != net.n_layers:
        raise ValueError("cache was produced by a network with a different depth")
    p = net.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    mu_active = p["mu"] > 0
    if net.arch == "lista_synthesis":
        g = integrate_adjoint(g)
        for t in range(net.n_layers - 1, -1, -1):
            z = cache.zs[t + 1]
            active = z != 0.0
            active[:, 0] = True
            sgn = np.sign(z)
            sgn[:, 0] = 0.0
            g_a = g * active
            g_thr = -(g * sgn).sum(axis=1)
            if mu_active[t]:
                grads["mu"][t] = g_thr @ cache.scale
            grads["W_x"][t] = g_a.T @ X
            grads["W_u"][t] = g_a.T @ cache.zs[t]
            g = g_a @ p["W_u"][t]
        return grads
    for t in range(net.n_layers - 1, -1, -1):
        if net.arch == "lpgd_taut":
            g_h = jx_apply(cache.support[t], g)
            g_thr = (jmu_apply(cache.support[t], cache.signs[t]) * g).sum(axis=1)
        else:
            g_h, g_thr, inner = lista_prox_vjp(cache.hs[t], cache.thr[t], net.nested(t), cache.zs[t], integrate_adjoint(g))
            grads["W_z"][t] = inner.W_z
            grads["W_h"][t] = inner.W_h
            grads["mu_in"][t] = inner.mu_in
        if mu_active[t]:
            grads["mu"][t] = g_thr @ cache.scale
        grads["W_x"][t] = g_h.T @ X
        grads["W_u"][t] = g_h.T @ cache.us[t]
        g = g_h @ p["W_u"][t]
    return grads


def analysis_objective(A, X, lam, U):
    R = np.asarray(X) - U @ np.asarray(A).T
    return 0.5 * (R * R).sum(axis=-1) + np.asarray(lam) * tv_norm(U)


def analysis_objective_grad(A, X, lam, U):
    """A (sub)gradient of the analysis objective in ``U``, with ``sign(0) = 0``."""
    A = np.asarray(A)
    sgn = np.sign(np.diff(U, axis=-1)) * np.asarray(lam)[..., None]
    tv_grad = np.zeros_like(U)
    tv_grad[..., 1:] += sgn
    tv_grad[..., :-1] -= sgn
    return (U @ A.T - X) @ A + tv_grad


def network_loss(net: UnrolledNet, A, X, lam, u0=None) -> float:
    """Mean analysis objective of the network outputs over the batch."""
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ValueError("network_loss needs a non-empty batch")
    u0 = initial_estimate(A, X) if u0 is None else u0
    lam = np.broadcast_to(np.asarray(lam, dtype=float), X.shape[:1])
    U, _ = forward(net, X, u0, lam)
    return float(analysis_objective(A, X, lam, U).mean())


def loss_and_grad(net: UnrolledNet, A, X, lam, u0=None):
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ValueError("loss_and_grad needs a non-empty batch")
    u0 = initial_estimate(A, X) if u0 is None else u0
    lam = np.broadcast_to(np.asarray(lam, dtype=float), X.shape[:1])
    U, cache = forward(net, X, u0, lam)
    loss = float(analysis_objective(A, X, lam, U).mean())
    grad_u = analysis_objective_grad(A, X, lam, U) / X.shape[0]
    return loss, backward(net, cache, grad_u)


# checkpoints: manifest.txt (key=value) + one little-endian float64 file per tensor

def save_net(net: UnrolledNet, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(arch=net.arch, T=net.n_layers, t_in=net.t_in, m=net.m, k=net.k, lam=repr(net.lam), seed=net.seed)
    (directory / "manifest.txt").write_text("".join(f"{k}={v}\n" for k, v in manifest.items()))
    p = net.params
    for t in range(net.n_layers):
        for name in OUTER_PARAMS:
            np.ascontiguousarray(p[name][t], dtype="<f8").tofile(directory / f"layer{t + 1}.{name}.f64")
        for l in range(net.t_in):
            for name in INNER_PARAMS:
                np.ascontiguousarray(p[name][t, l], dtype="<f8").tofile(directory / f"layer{t + 1}.inner{l + 1}.{name}.f64")
    return directory


def _read_tensor(path: Path, shape):
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint tensor {path}")
    arr = np.fromfile(path, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path.name}: expected {int(np.prod(shape))} values, found {arr.size}")
    return arr.reshape(shape).astype(float)


def load_net(directory) -> UnrolledNet:
    directory = Path(directory)
    path = directory / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint manifest {path}")
    manifest = dict(line.split("=", 1) for line in path.read_text().splitlines() if "=" in line)
    arch = manifest["arch"]
    T, t_in, m, k = (int(manifest[key]) for key in ("T", "t_in", "m", "k"))
    shapes = {"W_x": (k, m), "W_u": (k, k), "mu": ()}
    params = {name: np.stack([_read_tensor(directory / f"layer{t + 1}.{name}.f64", s) for t in range(T)]) if T else np.zeros((0,) + s)
              for name, s in shapes.items()}
    if arch == "lpgd_lista":
        inner_shapes = {"W_z": (k, k), "W_h": (k, k), "mu_in": ()}
        for name, s in inner_shapes.items():
            params[name] = np.array([
                [_read_tensor(directory / f"layer{t + 1}.inner{l + 1}.{name}.f64", s) for l in range(t_in)]
                for t in range(T)
            ]).reshape((T, t_in) + s)
    return UnrolledNet(arch=arch, lam=float(manifest["lam"]), params=params, m=m, k=k, seed=int(manifest.get("seed", 0)))
