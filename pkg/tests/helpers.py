"""Independent reference computations shared by the test modules."""
import numpy as np


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def fista_prox_oracle(Y, mu, iterations=100_000):
    """prox of ``mu * TV`` by FISTA on the jump variables, written without the package.

    Minimizes ``1/2 ||y - cumsum(z)||^2 + mu * sum_{i>=1} |z_i|`` row-wise.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, k = Y.shape
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,))[:, None]
    L = np.tril(np.ones((k, k)))
    step = 1.0 / np.linalg.norm(L, 2) ** 2
    z = np.zeros_like(Y)
    z[:, 0] = Y.mean(axis=1)
    w, t = z.copy(), 1.0
    for _ in range(iterations):
        r = np.cumsum(w, axis=1) - Y
        g = np.cumsum(r[:, ::-1], axis=1)[:, ::-1]  # L^T r
        a = w - step * g
        z_new = np.sign(a) * np.maximum(np.abs(a) - step * mu, 0.0)
        z_new[:, 0] = a[:, 0]
        t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
        w = z_new + (t - 1) / t_new * (z_new - z)
        z, t = z_new, t_new
    return np.cumsum(z, axis=1)


def tv_dual(y, u):
    """Dual certificate ``cumsum(y - u)`` on the ``k - 1`` jump positions."""
    return np.cumsum(np.asarray(y) - np.asarray(u), axis=-1)[..., :-1]


def near_boundary(y, mu, u, margin=1e-4, support_tol=1e-12):
    """True when ``y`` sits close to a change of the prox support pattern.

    Either an active jump is almost zero, or an inactive jump has its dual
    certificate almost saturated.
    """
    jumps = np.diff(u)
    active = np.abs(jumps) > support_tol
    if np.any(np.abs(jumps[active]) < margin):
        return True
    slack = mu - np.abs(tv_dual(y, u))
    return bool(np.any(slack[~active] < margin))


def fd_jacobian(f, x, h=1e-6):
    """Central-difference Jacobian of ``f`` at ``x`` (columns = input coordinates)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))).ravel() / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def lambda_max_oracle(A, x):
    """Smallest ``lam`` whose solution is constant, from the optimality of the best constant."""
    A = np.asarray(A, dtype=float)
    k = A.shape[1]
    a = A @ np.ones(k)
    c = (a @ x) / (a @ a)
    g = A.T @ (x - c * a)
    # u = c 1 optimal iff A^T (x - A u) = D^T w with |w| <= lam; D^T w has partial sums -w
    return float(np.max(np.abs(np.cumsum(g)[:-1])))
