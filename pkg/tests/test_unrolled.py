import numpy as np
import pytest

from helpers import rel_err, rng
from learntv.data import generate
from learntv.proxtv import init_nested_params
from learntv.solvers import TVProblem, lambda_max, solve
from learntv.unrolled import (
    ARCHS,
    INNER_PARAMS,
    UnrolledNet,
    analysis_objective,
    analysis_objective_grad,
    forward,
    grow,
    init_net,
    initial_estimate,
    load_net,
    loss_and_grad,
    network_loss,
    save_net,
)


@pytest.fixture(scope="module")
def small():
    ds = generate(12, 8, 5, 2, 1.0, seed=3)
    lam = 0.2 * lambda_max(ds.A, ds.X)
    return ds.A, ds.X, lam


def test_untrained_taut_reproduces_pgd(small):
    A, X, lam = small
    net = init_net("lpgd_taut", A, float(lam.mean()), 20)
    u0 = initial_estimate(A, X)
    _, cache = forward(net, X, u0, lam)
    outputs = cache.us[1:] + [forward(net, X, u0, lam)[0]]
    p = TVProblem(A, X, lam)
    for t in (1, 5, 20):
        assert np.max(np.abs(outputs[t - 1] - solve(p, "pgd_analysis", t, u0=u0, trace=False).u)) < 1e-10


def test_untrained_synthesis_reproduces_ista(small):
    A, X, lam = small
    net = init_net("lista_synthesis", A, float(lam.mean()), 15)
    u0 = initial_estimate(A, X)
    p = TVProblem(A, X, lam)
    u, _ = forward(net, X, u0, lam)
    assert np.max(np.abs(u - solve(p, "ista_synthesis", 15, u0=u0, trace=False).u)) < 1e-10


def test_untrained_lista_approaches_pgd_with_many_inner_layers(small):
    A, X, lam = small
    u0 = initial_estimate(A, X)
    exact = solve(TVProblem(A, X, lam), "pgd_analysis", 3, u0=u0, trace=False).u
    errs = [np.max(np.abs(forward(init_net("lpgd_lista", A, float(lam.mean()), 3, t_in), X, u0, lam)[0] - exact)) for t_in in (5, 50, 3000)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-8


def test_single_sample_forward(small):
    A, X, lam = small
    net = init_net("lpgd_taut", A, 0.3, 4)
    u0 = initial_estimate(A, X)
    batch, _ = forward(net, X, u0)
    single, _ = forward(net, X[2], u0[2])
    assert single.shape == (8,)
    assert np.allclose(single, batch[2])


def _fd_check(net, A, X, lam, h=1e-7):
    _, grads = loss_and_grad(net, A, X, lam)
    worst = {}
    for name, arr in net.params.items():
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = net.copy(), net.copy()
            plus.params[name][idx] += h
            minus.params[name][idx] -= h
            fd[idx] = (network_loss(plus, A, X, lam) - network_loss(minus, A, X, lam)) / (2 * h)
        worst[name] = rel_err(grads[name], fd)
    return worst


@pytest.mark.parametrize("arch", ARCHS)
def test_gradients_match_finite_differences(small, arch):
    A, X, lam = small
    g = rng(4)
    net = init_net(arch, A, float(lam.mean()), 2, t_in=5)
    for name, arr in net.params.items():
        arr += 0.01 * g.standard_normal(arr.shape) * (np.abs(arr).max() + 1e-3)
    for name, err in _fd_check(net, A, X[:4], lam[:4]).items():
        assert err < 1e-5, (arch, name, err)


def test_negative_mu_is_clamped(small):
    A, X, lam = small
    net = init_net("lpgd_taut", A, 0.5, 3)
    net.params["mu"][1] = -0.2
    u0 = initial_estimate(A, X)
    _, cache = forward(net, X, u0, lam)
    assert np.all(cache.thr[1] == 0)
    _, grads = loss_and_grad(net, A, X, lam)
    assert grads["mu"][1] == 0


def test_threshold_scales_with_per_sample_lambda(small):
    A, X, _ = small
    net = init_net("lpgd_taut", A, 0.5, 2)
    lam = np.linspace(0.1, 1.0, X.shape[0])
    _, cache = forward(net, X, initial_estimate(A, X), lam)
    assert np.allclose(cache.thr, net.params["mu"][:, None] * lam[None] / 0.5)


def test_grow_appends_pgd_layers(small):
    A, X, lam = small
    net = init_net("lpgd_lista", A, 0.4, 2, t_in=3)
    net.params["W_u"][0] += 0.01
    grown = grow(net, A, 3)
    assert grown.n_layers == 5 and grown.t_in == 3
    assert np.array_equal(grown.params["W_u"][:2], net.params["W_u"])
    fresh = init_net("lpgd_lista", A, 0.4, 3, t_in=3)
    assert np.array_equal(grown.params["W_h"][2:], fresh.params["W_h"])


def test_analysis_objective_gradient(small):
    A, X, lam = small
    U = rng(5).standard_normal((X.shape[0], 8))
    G = analysis_objective_grad(A, X, lam, U)
    h = 1e-7
    fd = np.zeros_like(U)
    for idx in np.ndindex(U.shape):
        E = np.zeros_like(U)
        E[idx] = h
        fd[idx] = (analysis_objective(A, X, lam, U + E) - analysis_objective(A, X, lam, U - E))[idx[0]] / (2 * h)
    assert rel_err(G, fd) < 1e-6


@pytest.mark.parametrize("arch", ARCHS)
def test_checkpoint_roundtrip(tmp_path, small, arch):
    A, X, lam = small
    net = init_net(arch, A, 0.37, 3, t_in=4, seed=7)
    for arr in net.params.values():
        arr += rng(6).standard_normal(arr.shape) * 1e-3
    save_net(net, tmp_path)
    back = load_net(tmp_path)
    assert back.arch == arch and back.lam == 0.37 and back.seed == 7 and back.n_layers == 3
    for name in net.params:
        assert np.array_equal(back.params[name], net.params[name])
    if arch == "lpgd_lista":
        assert (tmp_path / "layer3.inner4.mu_in.f64").exists()
        assert back.t_in == 4


def test_checkpoint_missing_tensor(tmp_path, small):
    A, _, _ = small
    save_net(init_net("lpgd_taut", A, 0.3, 2), tmp_path)
    (tmp_path / "layer2.W_x.f64").unlink()
    with pytest.raises(FileNotFoundError):
        load_net(tmp_path)


def test_validation(small):
    A, X, _ = small
    with pytest.raises(ValueError):
        init_net("lpgd", A, 0.1, 2)
    net = init_net("lpgd_taut", A, 0.1, 2)
    with pytest.raises(ValueError):
        forward(net, X[:, :3], np.zeros((X.shape[0], 8)))
    params = dict(net.params)
    params["W_z"] = np.zeros((2, 1, 8, 8))
    with pytest.raises(ValueError):
        UnrolledNet("lpgd_taut", 0.1, params, 5, 8)
    with pytest.raises(ValueError):
        network_loss(net, A, np.zeros((0, 5)), 0.1)


def test_inner_defaults_match_nested_init(small):
    A, _, _ = small
    net = init_net("lpgd_lista", A, 0.2, 2, t_in=6)
    ref = init_nested_params(8, 6)
    for name in INNER_PARAMS:
        assert np.array_equal(net.params[name][1], getattr(ref, name))
