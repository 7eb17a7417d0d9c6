"""Optimizer plumbing: log reparameterization, smooth ML maximization and a
multi-start Nelder-Mead driver that tolerates ``-inf`` objective values."""

import numpy as np
from scipy import optimize

from .errors import OptimizationFailure


def to_free(theta, positive):
    theta = np.asarray(theta, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(pos, np.log(theta), theta)


def from_free(x, positive):
    x = np.asarray(x, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    with np.errstate(over="ignore"):
        return np.where(pos, np.exp(x), x)


def free_jacobian(theta, positive):
    """Diagonal of d theta / d x for the log reparameterization."""
    theta = np.asarray(theta, dtype=float)
    return np.where(np.asarray(positive, dtype=bool), theta, 1.0)


def fd_step(x):
    return np.maximum(1e-6, 1e-6 * np.abs(x))


def fd_jacobian(fun, x):
    """Central-difference Jacobian of a vector function, rows = outputs."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h[j]))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def maximize_smooth(loglik, score_sum, theta0, positive, support_check, polish=True):
    """Quasi-Newton maximization of a smooth log-likelihood.

    BFGS runs on the log-reparameterized coordinates, then a few Newton steps
    on the score equations (finite-difference Hessian of the analytic score)
    drive the gradient to round-off level.
    """
    theta0 = np.asarray(theta0, dtype=float)

    def negll(x):
        th = from_free(x, positive)
        if not support_check(th):
            return np.inf
        v = loglik(th)
        return -v if np.isfinite(v) else np.inf

    def neggrad(x):
        th = from_free(x, positive)
        if not support_check(th):
            return np.zeros_like(x)
        g = score_sum(th) * free_jacobian(th, positive)
        return -g if np.all(np.isfinite(g)) else np.zeros_like(x)

    x0 = to_free(theta0, positive)
    if not np.isfinite(negll(x0)):
        raise OptimizationFailure("maximum likelihood start is outside the support")
    res = optimize.minimize(negll, x0, jac=neggrad, method="BFGS",
                            options={"gtol": 1e-9, "maxiter": 2000})
    x = res.x if np.isfinite(res.fun) and res.fun <= negll(x0) else x0
    theta = from_free(x, positive)
    if polish:
        theta = _newton_polish(loglik, score_sum, theta, support_check)
    if not np.all(np.isfinite(theta)) or not support_check(theta):
        raise OptimizationFailure("maximum likelihood fit left the parameter space")
    return theta


def _newton_polish(loglik, score_sum, theta, support_check, max_iter=30):
    best = loglik(theta)
    for _ in range(max_iter):
        g = score_sum(theta)
        H = fd_jacobian(score_sum, theta)
        H = 0.5 * (H + H.T)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        improved = False
        while t > 1e-4:
            cand = theta + t * step
            if support_check(cand):
                val = loglik(cand)
                if np.isfinite(val) and val >= best - 1e-12 * (1 + abs(best)):
                    improved = True
                    break
            t *= 0.5
        if not improved:
            break
        theta, best = cand, max(best, val)
        if np.max(np.abs(t * step) / (1 + np.abs(theta))) < 1e-14:
            break
    return theta


def nelder_mead_multistart(objective, x0, steps, n_restarts=3, jitter=0.05,
                           seed=0, xatol=1e-8, fatol=1e-10, maxiter=4000,
                           extra_points=()):
    """Maximize ``objective`` by Nelder-Mead from ``x0`` plus jittered restarts.

    ``-inf`` values mark infeasible points; the simplex treats them as worst
    vertices. Returns ``(x_best, f_best, n_feasible_runs)``; ``x0`` and
    ``extra_points`` are also candidates in their own right.
    """
    x0 = np.asarray(x0, dtype=float)
    steps = np.asarray(steps, dtype=float)
    rng = np.random.default_rng(seed)

    def neg(x):
        v = objective(x)
        return -v if np.isfinite(v) else np.inf

    starts = [x0]
    for _ in range(n_restarts):
        starts.append(x0 + jitter * np.maximum(np.abs(x0), 1.0) * rng.standard_normal(x0.size))

    best_x, best_f, n_ok = None, -np.inf, 0
    for cand in [x0, *map(np.asarray, extra_points)]:
        v = objective(cand)
        if np.isfinite(v) and v > best_f:
            best_x, best_f = np.array(cand, dtype=float), v
    for s in starts:
        if not np.isfinite(neg(s)):
            continue
        simplex = np.vstack([s, s + np.diag(steps)])
        res = optimize.minimize(neg, s, method="Nelder-Mead", options={
            "initial_simplex": simplex, "xatol": xatol, "fatol": fatol,
            "maxiter": maxiter, "maxfev": 2 * maxiter})
        if np.isfinite(res.fun):
            n_ok += 1
            if -res.fun > best_f:
                best_x, best_f = res.x, -res.fun
    if best_x is None:
        raise OptimizationFailure("every start point is infeasible")
    return best_x, best_f, n_ok
