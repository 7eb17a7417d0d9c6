# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled damped Newton solver for the empirical likelihood dual.

Same algorithm and status codes as ``_el_fallback.newton_dual``. The whole
iteration runs without the GIL, so threads can solve independent problems.
"""

import numpy as np
from libc.math cimport log, fabs, sqrt

cdef double Z_DIVERGED = 1e12
cdef double DECREMENT_FULL_STEP = 1e-12


cdef inline double _logstar(double z, double eps, double* d1, double* d2) noexcept nogil:
    if z >= eps:
        d1[0] = 1.0 / z
        d2[0] = -1.0 / (z * z)
        return log(z)
    d1[0] = 2.0 / eps - z / (eps * eps)
    d2[0] = -1.0 / (eps * eps)
    return log(eps) - 1.5 + 2.0 * z / eps - z * z / (2.0 * eps * eps)


cdef double _evaluate(const double[:, ::1] M, const double* lam, double eps,
                      double* g, double* H, double* zmax, bint want_derivs) noexcept nogil:
    cdef Py_ssize_t n = M.shape[0], q = M.shape[1], i, j, k
    cdef double z, f, d1, d2, obj = 0.0
    zmax[0] = -1e300
    if want_derivs:
        for j in range(q):
            g[j] = 0.0
            for k in range(q):
                H[j * q + k] = 0.0
    for i in range(n):
        z = 1.0
        for j in range(q):
            z += lam[j] * M[i, j]
        if z > zmax[0]:
            zmax[0] = z
        obj += _logstar(z, eps, &d1, &d2)
        if want_derivs:
            for j in range(q):
                g[j] += M[i, j] * d1
                for k in range(j + 1):
                    H[j * q + k] -= d2 * M[i, j] * M[i, k]
    if want_derivs:
        for j in range(q):
            g[j] /= n
            for k in range(j + 1):
                H[j * q + k] /= n
                H[k * q + j] = H[j * q + k]
    return obj


cdef int _cholesky_solve(double* A, const double* b, double* x, Py_ssize_t q) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(q):
        s = A[j * q + j]
        for k in range(j):
            s -= A[j * q + k] * A[j * q + k]
        if not (s > 0.0):
            return -1
        A[j * q + j] = sqrt(s)
        for i in range(j + 1, q):
            s = A[i * q + j]
            for k in range(j):
                s -= A[i * q + k] * A[j * q + k]
            A[i * q + j] = s / A[j * q + j]
    for i in range(q):
        s = b[i]
        for k in range(i):
            s -= A[i * q + k] * x[k]
        x[i] = s / A[i * q + i]
    for i in range(q - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, q):
            s -= A[k * q + i] * x[k]
        x[i] = s / A[i * q + i]
    return 0


def newton_dual(M_in, double tol=1e-10, int max_iter=100):
    cdef const double[:, ::1] M = np.ascontiguousarray(M_in, dtype=np.float64)
    cdef Py_ssize_t n = M.shape[0], q = M.shape[1], j
    cdef double eps = 1.0 / n
    lam_arr = np.zeros(q)
    cand_arr = np.zeros(q)
    step_arr = np.zeros(q)
    g_arr = np.zeros(q)
    gc_arr = np.zeros(q)
    H_arr = np.zeros(q * q)
    Hc_arr = np.zeros(q * q)
    trace_arr = np.full(max_iter + 1, np.nan)
    cdef double[::1] lam = lam_arr, cand = cand_arr, step = step_arr
    cdef double[::1] g = g_arr, gc = gc_arr, H = H_arr, Hc = Hc_arr, trace = trace_arr
    cdef double obj, objc, slope, t, gmax, zmax, zmaxc
    cdef int it = 0, status = 2, ls
    with nogil:
        obj = _evaluate(M, &lam[0], eps, &g[0], &H[0], &zmax, True)
        trace[0] = obj
        while True:
            if it >= max_iter:
                gmax = 0.0
                for j in range(q):
                    if fabs(g[j]) > gmax:
                        gmax = fabs(g[j])
                status = 0 if gmax <= tol else 2
                break
            gmax = 0.0
            for j in range(q):
                if fabs(g[j]) > gmax:
                    gmax = fabs(g[j])
            if gmax <= tol:
                status = 0
                break
            if _cholesky_solve(&H[0], &g[0], &step[0], q) != 0:
                status = 1
                break
            slope = 0.0
            for j in range(q):
                slope += g[j] * step[j]
            t = 1.0
            for ls in range(60):
                for j in range(q):
                    cand[j] = lam[j] + t * step[j]
                # derivatives at the candidate are kept for the next iteration
                objc = _evaluate(M, &cand[0], eps, &gc[0], &Hc[0], &zmaxc, True)
                if slope < DECREMENT_FULL_STEP:
                    if objc < obj:
                        objc = obj
                    break
                if objc >= obj + 1e-4 * t * slope * n or t < 1e-12:
                    break
                t *= 0.5
            if objc < obj:
                status = 0 if gmax <= 1e3 * tol else 2
                break
            for j in range(q):
                lam[j] = cand[j]
                g[j] = gc[j]
            for j in range(q * q):
                H[j] = Hc[j]
            obj = objc
            zmax = zmaxc
            it += 1
            trace[it] = obj
            if zmax > Z_DIVERGED:
                status = 1
                break
    return lam_arr, status, it, trace_arr[: it + 1]
