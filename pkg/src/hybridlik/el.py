"""Empirical likelihood ratio through its Lagrange dual.

For an ``n x q`` constraint matrix with rows ``m_i`` the solver finds the
multiplier ``lam`` with ``sum_i m_i / (1 + lam^T m_i) = 0`` and returns
``log R = -sum_i log(1 + lam^T m_i)`` with weights ``w_i = 1 / (n (1 + lam^T m_i))``.

The multiplier uses the unscaled convention; the ``1/sqrt(n)``-scaled
multiplier common in asymptotic arguments equals ``sqrt(n) * lam``.

The Newton iteration runs in a compiled kernel when it is built, else in a
NumPy fallback. Set ``HYBRIDLIK_PURE_PYTHON=1`` to force the fallback.
"""

import os
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import _el_fallback
from .controls import sample_constraint_matrix

if os.environ.get("HYBRIDLIK_PURE_PYTHON", "") not in ("", "0"):
    _kernel = None
else:
    try:
        from . import _el_kernel as _kernel
    except ImportError:  # extension not built
        _kernel = None

BACKEND = "compiled" if _kernel is not None else "python"
_BACKENDS = {"python": _el_fallback.newton_dual}
if _kernel is not None:
    _BACKENDS["compiled"] = _kernel.newton_dual

TOL = 1e-10
MAX_ITER = 100

CONVERGED = "converged"
HULL_VIOLATION = "hull_violation"
MAX_ITER_STATUS = "max_iter"


@dataclass(frozen=True)
class ELSolution:
    lam: np.ndarray
    log_ratio: float
    weights: np.ndarray
    status: str
    iterations: int
    trace: np.ndarray = None

    @property
    def converged(self):
        return self.status == CONVERGED


def _hull_interior(M):
    """Largest ``t`` with weights ``w_i >= t``, ``sum w = 1``, ``M^T w = 0``.

    Positive ``t`` means the origin is interior to the convex hull of the rows.
    """
    n, q = M.shape
    # variables (w_1..w_n, t); maximize t
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    A_eq = np.vstack([np.hstack([M.T, np.zeros((q, 1))]),
                      np.hstack([np.ones((1, n)), np.zeros((1, 1))])])
    b_eq = np.concatenate([np.zeros(q), [1.0]])
    res = optimize.linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b_eq,
                           bounds=[(0, None)] * n + [(None, None)], method="highs")
    return -res.fun if res.status == 0 else -np.inf


def _infeasible(n, q, iterations, trace=None):
    return ELSolution(lam=np.full(q, np.nan), log_ratio=-np.inf, weights=np.full(n, np.nan),
                      status=HULL_VIOLATION, iterations=iterations, trace=trace)


def solve_el(M, backend=None, tol=TOL, max_iter=MAX_ITER):
    """Solve the empirical likelihood problem for constraint matrix ``M``.

    Hull violations are reported through ``status`` with ``log_ratio = -inf``
    rather than raised, so callers optimizing over ``mu`` can step past them.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    n, q = M.shape
    if not np.all(np.isfinite(M)):
        raise ValueError("constraint matrix has non-finite entries")
    if n < q + 1:
        raise ValueError(f"need at least q + 1 = {q + 1} rows, got {n}")
    if not np.any(M):
        return ELSolution(lam=np.zeros(q), log_ratio=0.0, weights=np.full(n, 1.0 / n),
                          status=CONVERGED, iterations=0, trace=np.zeros(1))
    if q == 1 and not (M.min() < 0.0 < M.max()):
        return _infeasible(n, q, 0)
    scale = max(1.0, float(np.abs(M).max()))
    fn = _BACKENDS[backend or BACKEND]
    lam, code, iterations, trace = fn(M, tol * scale, max_iter)
    z = 1.0 + M @ lam
    # the gradient also vanishes as lam runs off to infinity outside the hull;
    # a genuine solution has weights summing to one
    if code == 0 and np.all(z >= 1.0 / n) and abs(np.sum(1.0 / (n * z)) - 1.0) <= 1e-8:
        w = 1.0 / (n * z)
        return ELSolution(lam=lam, log_ratio=float(-np.sum(np.log(z))), weights=w,
                          status=CONVERGED, iterations=iterations, trace=trace)
    if code != 1 and (q == 1 or _hull_interior(M) > 1e-12):
        return ELSolution(lam=lam, log_ratio=float(-np.sum(np.log(np.maximum(z, 1.0 / n)))),
                          weights=1.0 / (n * np.maximum(z, 1.0 / n)), status=MAX_ITER_STATUS,
                          iterations=iterations, trace=trace)
    return _infeasible(n, q, iterations, trace)


def el_loglik_at(cs, data, mu, backend=None):
    """``log R_n(mu)`` for control set ``cs``; ``-inf`` when infeasible."""
    return solve_el(sample_constraint_matrix(cs, data, mu), backend=backend).log_ratio
