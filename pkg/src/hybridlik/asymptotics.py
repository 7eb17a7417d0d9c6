"""Plug-in limit quantities of the hybrid estimator.

With ``J = Var u``, ``W = Var m``, ``C = E u m^T`` and the derivative matrix
``xi0 = d E m(Y, mu(theta)) / d theta`` (q x p)::

    J* = (1-a) J + a xi0^T W^-1 xi0
    K* = (1-a)^2 J + a^2 xi0^T W^-1 xi0 - a(1-a) (C W^-1 xi0 + xi0^T W^-1 C^T)

and the estimator has limit covariance ``J*^-1 K* J*^-1``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._linalg import is_psd, min_correlation_eigenvalue, sym_inv, symmetrize
from .errors import DegenerateControls, InvalidGrid, NumericalFailure, SingularMatrix
from .models import empirical_fisher, fit_ml, integrate_segments

RANK_TOL = 1e-9


def jstar_kstar(J, W, C, xi0, a):
    """Generic ``(J*, K*)`` for balance ``a``."""
    Winv = sym_inv(W, "W")
    B = xi0.T @ Winv @ xi0
    X = C @ Winv @ xi0
    Jstar = (1 - a) * J + a * B
    Kstar = (1 - a) ** 2 * J + a**2 * B - a * (1 - a) * (X + X.T)
    return symmetrize(Jstar), symmetrize(Kstar)


def jstar_kstar_gform(J, W, dmu, a):
    """``(J*, K*)`` for controls of the form ``g(y) - mu`` (``dmu`` is p x q)."""
    P = dmu @ sym_inv(W, "W") @ dmu.T
    return (symmetrize((1 - a) * J + a * P),
            symmetrize((1 - a) ** 2 * J + (1 - (1 - a) ** 2) * P))


@dataclass(frozen=True)
class AsymptoticBlocks:
    """Estimated ``J, W, C, xi0`` at ``theta`` and the derived matrices at ``a``."""

    theta: np.ndarray
    a: float
    J: np.ndarray
    W: np.ndarray
    C: np.ndarray
    xi0: np.ndarray
    Jstar: np.ndarray
    Kstar: np.ndarray
    sandwich: np.ndarray
    method: str = "empirical"
    dmu: Optional[np.ndarray] = None

    @classmethod
    def build(cls, theta, a, J, W, C, xi0, method="empirical", dmu=None):
        J, W = symmetrize(J), symmetrize(W)
        Jstar, Kstar = jstar_kstar(J, W, C, xi0, a)
        try:
            Ji = sym_inv(Jstar, "J*")
        except SingularMatrix as exc:
            raise NumericalFailure(str(exc)) from None
        return cls(theta=np.asarray(theta, dtype=float), a=float(a), J=J, W=W, C=np.asarray(C),
                   xi0=np.asarray(xi0), Jstar=Jstar, Kstar=Kstar,
                   sandwich=symmetrize(Ji @ Kstar @ Ji), method=method, dmu=dmu)

    def at(self, a):
        """Same blocks re-evaluated at another balance parameter."""
        if a == self.a:
            return self
        return AsymptoticBlocks.build(self.theta, a, self.J, self.W, self.C, self.xi0,
                                      self.method, self.dmu)

    @property
    def sigma(self):
        return np.block([[self.J, self.C], [self.C.T, self.W]])

    def to_dict(self):
        def mat(x):
            x = np.atleast_2d(x)
            return {"shape": list(x.shape), "data": x.ravel().tolist()}

        return {"theta": self.theta.tolist(), "a": self.a, "method": self.method,
                **{k: mat(getattr(self, k)) for k in
                   ("J", "W", "C", "xi0", "Jstar", "Kstar", "sandwich")}}


def _check_rank(J, W, C):
    sigma = np.block([[J, C], [C.T, W]])
    if min_correlation_eigenvalue(sigma) <= RANK_TOL:
        raise DegenerateControls(
            "the joint variance of scores and controls is rank deficient: the controls "
            "lie in the span of the score functions, so the parametric and empirical "
            "likelihoods tread on one another's toes")


def estimate_blocks(prob, theta, method="empirical", require_full_rank=True):
    """Blocks at ``theta`` for problem ``prob``.

    ``method="empirical"`` averages over the data (outer products, uncentered);
    ``method="model"`` integrates against ``f(., theta)`` instead.
    """
    theta = np.asarray(theta, dtype=float)
    if method == "model":
        return population_blocks(prob.model, prob.controls, theta, prob.a,
                                 require_full_rank=require_full_rank)
    data = prob.data
    n = data.size
    U = prob.model.score(data, theta)
    J = empirical_fisher(prob.model, data, theta)
    M = prob.controls.matrix(data, theta)
    W = M.T @ M / n
    C = U.T @ M / n
    if require_full_rank:
        _check_rank(J, W, C)
    xi0 = prob.controls.xi0(theta, data)
    return AsymptoticBlocks.build(theta, prob.a, J, W, C, xi0, "empirical",
                                  np.asarray(prob.controls.dmu_dtheta(theta)))


def population_blocks(model, controls, theta, a=0.0, require_full_rank=True):
    """Blocks computed by quadrature under ``f(., theta)``."""
    theta = np.asarray(theta, dtype=float)
    p, q = model.p, controls.q
    mu = controls.mu_of_theta(theta)

    def integrand(y):
        v = np.concatenate([model.score(y, theta)[0], controls.m(y, mu)[0]])
        return np.outer(v, v).ravel() * float(model.pdf(y, theta))

    S = integrate_segments(integrand, model.support,
                           list(model.breakpoints(theta)) + list(controls.jump_points(theta)))
    S = S.reshape(p + q, p + q)
    J, C, W = S[:p, :p], S[:p, p:], S[p:, p:]
    if require_full_rank:
        _check_rank(J, W, C)
    xi0 = controls.xi0(theta)
    return AsymptoticBlocks.build(theta, a, J, W, C, xi0, "model",
                                  np.asarray(controls.dmu_dtheta(theta)))


def kappa_a(blocks, c):
    """Limit standard deviation of ``sqrt(n) (psi_hat - psi0)`` for gradient ``c``."""
    c = np.asarray(c, dtype=float)
    v = float(c @ blocks.sandwich @ c)
    if not np.isfinite(v) or v <= 0:
        raise NumericalFailure(f"focus variance is not positive ({v:.3g})")
    return np.sqrt(v)


def kappa_curve(blocks, c, a_grid):
    return np.array([kappa_a(blocks.at(a), c) for a in a_grid])


def check_grid(a_grid):
    a_grid = np.atleast_1d(np.asarray(a_grid, dtype=float))
    if a_grid.size == 0:
        raise InvalidGrid("empty balance-parameter grid")
    if np.any(a_grid < 0) or np.any(a_grid >= 1):
        raise InvalidGrid("balance parameters must lie in [0, 1)")
    return a_grid


def select_a_efficiency(prob, eps, a_grid, theta=None, method="model"):
    """Largest grid ``a`` whose focus precision is within ``1 + eps`` of ML.

    The curve ``kappa_a`` is evaluated once, at the ML position (model-based
    blocks by default), as a pre-data efficiency statement.
    """
    a_grid = check_grid(a_grid)
    if eps < 0:
        raise InvalidGrid("efficiency threshold must be non-negative")
    if theta is None:
        theta = fit_ml(prob.model, prob.data)
    base = estimate_blocks(prob, theta, method=method)
    c = prob.focus.gradient(theta)
    k0 = kappa_a(base.at(0.0), c)
    ks = kappa_curve(base, c, a_grid)
    ok = a_grid[ks <= (1 + eps) * k0 * (1 + 1e-12)]
    if ok.size == 0:
        raise InvalidGrid("no grid value meets the efficiency cap")
    return float(ok.max())


def blocks_are_valid(blocks, tol=1e-10):
    return is_psd(blocks.J, tol) and is_psd(blocks.W, tol) and is_psd(blocks.sandwich, tol)
