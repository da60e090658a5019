"""Full-batch gradient descent with backtracking, and layer-wise curricula."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .unrolled import INNER_PARAMS, UnrolledNet, grow, init_net, initial_estimate, loss_and_grad, network_loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 1e-2
    backtrack_factor: float = 0.5
    eta_limit: float = 1e-20
    max_epochs: int = 300
    seed: int = 0
    freeze_inner: bool = False

    def __post_init__(self):
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not 0 < self.eta_limit < self.eta0:
            raise ValueError("need 0 < eta_limit < eta0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class TrainReport:
    epochs_run: int
    loss_history: list
    final_loss: float
    stop_reason: str
    etas: list = field(default_factory=list)


def train(net: UnrolledNet, A, X, lam, cfg: TrainConfig = TrainConfig(), u0=None):
    """Minimize the mean analysis objective of ``net`` over the batch ``X``.

    Each epoch computes the full-batch gradient and tries a step ``eta``,
    multiplying it by ``backtrack_factor`` until the loss strictly decreases.
    Training stops when ``eta`` falls below ``eta_limit`` or after
    ``max_epochs`` accepted steps. An accepted step is retried at
    ``eta / backtrack_factor`` on the next epoch.

    Returns ``(trained_net, report)``; the input net is not modified.
    """
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.shape[1] != net.m or np.shape(A) != (net.m, net.k):
        raise ValueError("network dimensions do not match the data")
    if not np.all(np.isfinite(X)):
        raise ValueError("training observations must be finite")
    u0 = initial_estimate(A, X) if u0 is None else u0
    net = net.copy()
    loss, grads = loss_and_grad(net, A, X, lam, u0)
    if not math.isfinite(loss):
        raise ValueError("non-finite training loss at initialization")
    history, etas = [loss], []
    eta = cfg.eta0
    stop = "max_epochs"
    epochs = 0
    while epochs < cfg.max_epochs:
        if cfg.freeze_inner:
            for name in INNER_PARAMS:
                if name in grads:
                    grads[name] = np.zeros_like(grads[name])
        while True:
            candidate = net.with_params({k: v - eta * grads[k] for k, v in net.params.items()})
            new_loss = network_loss(candidate, A, X, lam, u0)
            if new_loss < loss:
                break
            eta *= cfg.backtrack_factor
            if eta < cfg.eta_limit:
                stop = "eta_limit"
                break
        if stop == "eta_limit":
            break
        net = candidate
        epochs += 1
        etas.append(eta)
        loss, grads = loss_and_grad(net, A, X, lam, u0)
        history.append(loss)
        logger.debug("epoch %d loss %.12g eta %.3g", epochs, loss, eta)
        eta /= cfg.backtrack_factor
    return net, TrainReport(epochs_run=epochs, loss_history=history, final_loss=history[-1], stop_reason=stop, etas=etas)


def grow_and_train(net: UnrolledNet, extra_layers: int, A, X, lam, cfg: TrainConfig = TrainConfig(), u0=None):
    """Append freshly initialized layers to a trained net and keep training.

    For PGD-initialized tails the grown net starts no worse than ``net``.
    """
    if extra_layers < 0:
        raise ValueError("extra_layers must be >= 0")
    return train(grow(net, A, extra_layers), A, X, lam, cfg, u0)


def evaluate_risk(net: UnrolledNet, A, X_test, lam_test, u0=None) -> float:
    """Mean analysis objective on held-out observations."""
    return network_loss(net, A, X_test, lam_test, u0)


def curriculum(arch, A, X, lam, stages, cfg: TrainConfig = TrainConfig(), t_in: int = 0, lam_ref=None, u0=None, on_stage=None):
    """Train nets of increasing depth, each warm-started from the previous stage.

    ``on_stage(T, net, report)`` is called after every stage. Returns the
    list of ``(T, net, report)``.
    """
    lam_ref = float(np.mean(lam)) if lam_ref is None else lam_ref
    stages = sorted(stages)
    out = []
    net = None
    for T in stages:
        if net is None:
            net = init_net(arch, A, lam_ref, T, t_in, seed=cfg.seed)
            net, report = train(net, A, X, lam, cfg, u0)
        else:
            net, report = grow_and_train(net, T - net.n_layers, A, X, lam, cfg, u0)
        out.append((T, net, report))
        if on_stage is not None:
            on_stage(T, net, report)
    return out
