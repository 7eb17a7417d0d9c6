"""Small symmetric-matrix helpers used by the asymptotic machinery."""

import numpy as np

from .errors import SingularMatrix

EIG_FLOOR = 1e-12


def symmetrize(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return 0.5 * (a + a.T)


def sym_inv(a, what="matrix"):
    """Invert a symmetric matrix through its eigendecomposition.

    Eigenvalues at or below ``EIG_FLOOR * trace`` are treated as zero and
    raise :class:`SingularMatrix` instead of being regularized.
    """
    a = symmetrize(a)
    vals, vecs = np.linalg.eigh(a)
    floor = EIG_FLOOR * max(abs(np.trace(a)), np.finfo(float).tiny)
    if not np.all(np.isfinite(vals)) or vals.min() <= floor:
        raise SingularMatrix(
            f"{what} is singular or not positive definite "
            f"(smallest eigenvalue {vals.min():.3g}, floor {floor:.3g})"
        )
    return symmetrize((vecs / vals) @ vecs.T)


def min_correlation_eigenvalue(a):
    """Smallest eigenvalue of the correlation matrix built from covariance ``a``.

    A scale-free rank diagnostic: 0 means some coordinate is an exact linear
    combination of the others.
    """
    a = symmetrize(a)
    d = np.sqrt(np.clip(np.diag(a), 0.0, None))
    if np.any(d == 0):
        return 0.0
    corr = a / np.outer(d, d)
    return float(np.linalg.eigvalsh(corr).min())


def is_psd(a, tol=1e-10):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.allclose(a, a.T, atol=tol * max(1.0, np.abs(a).max())):
        return False
    vals = np.linalg.eigvalsh(symmetrize(a))
    return bool(vals.min() >= -tol * max(1.0, np.abs(vals).max()))
