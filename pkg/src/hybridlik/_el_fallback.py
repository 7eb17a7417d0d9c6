"""Pure-NumPy damped Newton solver for the empirical likelihood dual.

Maximizes ``L(lam) = sum_i log*(1 + lam^T m_i)`` where ``log*`` is the
logarithm continued quadratically below ``eps = 1/n``. Mirrors the compiled
kernel in ``_el_kernel.pyx`` line for line; status codes are shared:
0 converged, 1 diverged or singular Hessian, 2 iteration cap.
"""

import numpy as np

Z_DIVERGED = 1e12
# below this Newton decrement the full step is taken: the objective change
# is at round-off level and cannot arbitrate the line search
DECREMENT_FULL_STEP = 1e-12


def _logstar(z, eps):
    lo = z < eps
    f = np.empty_like(z)
    d1 = np.empty_like(z)
    d2 = np.empty_like(z)
    hi = ~lo
    f[hi] = np.log(z[hi])
    d1[hi] = 1.0 / z[hi]
    d2[hi] = -1.0 / (z[hi] * z[hi])
    zl = z[lo]
    f[lo] = np.log(eps) - 1.5 + 2.0 * zl / eps - zl * zl / (2.0 * eps * eps)
    d1[lo] = 2.0 / eps - zl / (eps * eps)
    d2[lo] = -1.0 / (eps * eps)
    return f, d1, d2


def newton_dual(M, tol=1e-10, max_iter=100):
    M = np.ascontiguousarray(M, dtype=float)
    n, q = M.shape
    eps = 1.0 / n
    lam = np.zeros(q)
    trace = np.full(max_iter + 1, np.nan)
    z = np.ones(n)
    f, d1, d2 = _logstar(z, eps)
    obj = f.sum()
    trace[0] = obj
    for it in range(max_iter):
        g = M.T @ d1 / n
        if np.max(np.abs(g)) <= tol:
            return lam, 0, it, trace[: it + 1]
        H = (M * (-d2)[:, None]).T @ M / n
        try:
            L = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            return lam, 1, it, trace[: it + 1]
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        slope = g @ step
        t = 1.0
        for _ in range(60):
            cand = lam + t * step
            zc = 1.0 + M @ cand
            fc, d1c, d2c = _logstar(zc, eps)
            objc = fc.sum()
            if slope < DECREMENT_FULL_STEP:
                objc = max(objc, obj)
                break
            if objc >= obj + 1e-4 * t * slope * n or t < 1e-12:
                break
            t *= 0.5
        if objc < obj:
            # no ascent possible at round-off level
            return lam, 0 if np.max(np.abs(g)) <= 1e3 * tol else 2, it, trace[: it + 1]
        lam, z, d1, d2, obj = cand, zc, d1c, d2c, objc
        trace[it + 1] = obj
        if np.max(z) > Z_DIVERGED:
            return lam, 1, it + 1, trace[: it + 2]
    g = M.T @ d1 / n
    return lam, 0 if np.max(np.abs(g)) <= tol else 2, max_iter, trace
