"""Local misspecification: wide-model fit, bias and spread of the hybrid
focus estimator as functions of ``a``, the ``fic(a)`` risk estimate, its
pre-data counterpart ``mse(a)`` and the implied goodness-of-fit test.

With truth ``f(y, theta0, gamma0 + delta / sqrt(n))``, score ``S`` in the
extension direction, ``J01 = E u S^T`` and ``K01 = E m S^T``::

    L01     = (1-a) J01 - a xi0^T W^-1 K01
    omega_a = L01^T J*^-1 dpsi/dtheta - dpsi/dgamma
    tau_a   = kappa_a
    mse(a)  = (omega_a^T delta)^2 + tau_a^2
    fic(a)  = max(omega_a^T (D D^T - Q) omega_a, 0) + tau_a^2
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _optim
from ._linalg import sym_inv, symmetrize
from .asymptotics import check_grid, estimate_blocks, kappa_a, population_blocks
from .errors import (InvalidInput, NumericalFailure, OptimizationFailure, SingularMatrix,
                     UnsupportedControls, WideFitFailure)
from .models import fit_ml, integrate_segments

DEFAULT_A_GRID = np.round(np.arange(0.0, 0.951, 0.01), 10)
GOF_ALPHA = float(stats.chi2.sf(1.0, df=1))


# ---------------------------------------------------------------------------
# Wide fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WideFit:
    theta_gamma_hat: np.ndarray
    D_n: np.ndarray
    J_wide: np.ndarray
    Q: np.ndarray
    n: int
    p: int

    @property
    def J00(self):
        return self.J_wide[:self.p, :self.p]

    @property
    def J01(self):
        return self.J_wide[:self.p, self.p:]

    @property
    def J11(self):
        return self.J_wide[self.p:, self.p:]


def q_from_wide(J_wide, p):
    """``Q = (J11 - J10 J00^-1 J01)^-1``, the lower-right block of ``J_wide^-1``."""
    J00, J01, J11 = J_wide[:p, :p], J_wide[:p, p:], J_wide[p:, p:]
    return sym_inv(J11 - J01.T @ sym_inv(J00, "J00") @ J01, "J11.0")


def fit_wide(wm, data):
    """Maximum likelihood in the wide model and the induced ``D_n`` and ``Q``."""
    data = np.atleast_1d(np.asarray(data, dtype=float))
    p, r, n = wm.narrow.p, wm.r, data.size
    if n < p + r + 1:
        raise InvalidInput(f"need more than p + r = {p + r} observations")
    split = lambda x: (x[:p], x[p:])

    def loglik(x):
        th, g = split(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = float(np.sum(wm.log_density_wide(data, th, g)))
        return v if np.isfinite(v) else -np.inf

    try:
        theta0 = fit_ml(wm.narrow, data)
        x = _optim.maximize_smooth(loglik, lambda x: wm.score_wide(data, *split(x)).sum(axis=0),
                                   np.concatenate([theta0, wm.gamma0]), wm.positive,
                                   lambda x: bool(wm.support_check_wide(*split(x))))
    except OptimizationFailure as exc:
        raise WideFitFailure(f"wide model fit failed: {exc}") from None
    U = wm.score_wide(data, *split(x))
    if not np.all(np.isfinite(U)):
        raise WideFitFailure("non-finite wide score at the fitted value")
    J_wide = symmetrize(U.T @ U / n)
    try:
        Q = q_from_wide(J_wide, p)
    except SingularMatrix as exc:
        raise WideFitFailure(f"wide information is singular: {exc}") from None
    return WideFit(x, np.sqrt(n) * (x[p:] - wm.gamma0), J_wide, Q, n, p)


def population_wide_info(wm, theta0):
    """Model-based ``J_wide`` at ``(theta0, gamma0)`` and its ``Q``."""
    model = wm.narrow
    theta0 = np.asarray(theta0, dtype=float)

    def integrand(y):
        s = wm.score_wide(y, theta0, wm.gamma0)[0]
        return np.outer(s, s).ravel() * float(model.pdf(y, theta0))

    k = model.p + wm.r
    J_wide = integrate_segments(integrand, model.support, model.breakpoints(theta0)).reshape(k, k)
    return symmetrize(J_wide), q_from_wide(J_wide, model.p)


# ---------------------------------------------------------------------------
# Bias and spread
# ---------------------------------------------------------------------------


def cross_blocks(prob, wm, theta):
    """Empirical ``J01 = n^-1 sum u_i S_i^T`` and ``K01 = n^-1 sum m_i S_i^T``."""
    theta = np.asarray(theta, dtype=float)
    S = wm.score_gamma(prob.data, theta)
    U = prob.model.score(prob.data, theta)
    M = prob.controls.matrix(prob.data, theta)
    return U.T @ S / prob.n, M.T @ S / prob.n


def population_cross_blocks(wm, controls, theta0):
    model = wm.narrow
    theta0 = np.asarray(theta0, dtype=float)
    p, q, r = model.p, controls.q, wm.r
    mu = controls.mu_of_theta(theta0)

    def integrand(y):
        s = wm.score_gamma(y, theta0)[0]
        v = np.concatenate([model.score(y, theta0)[0], controls.m(y, mu)[0]])
        return np.outer(v, s).ravel() * float(model.pdf(y, theta0))

    X = integrate_segments(integrand, model.support,
                           list(model.breakpoints(theta0)) + list(controls.jump_points(theta0)))
    X = X.reshape(p + q, r)
    return X[:p], X[p:]


def omega_tau(blocks, J01, K01, dpsi_dtheta, dpsi_dgamma):
    """Limit bias vector ``omega_a`` and standard deviation ``tau_a`` at ``blocks.a``."""
    a = blocks.a
    J01, K01 = np.atleast_2d(J01), np.atleast_2d(K01)
    c = np.asarray(dpsi_dtheta, dtype=float)
    dg = np.atleast_1d(np.asarray(dpsi_dgamma, dtype=float))
    p, q = blocks.J.shape[0], blocks.W.shape[0]
    if J01.shape[0] != p or K01.shape[0] != q or J01.shape[1] != K01.shape[1] \
            or c.size != p or dg.size != J01.shape[1]:
        raise InvalidInput("dimension mismatch among J01, K01 and the focus derivatives")
    L01 = (1 - a) * J01 - a * blocks.xi0.T @ sym_inv(blocks.W, "W") @ K01
    omega = L01.T @ np.linalg.solve(blocks.Jstar, c) - dg
    return omega, kappa_a(blocks, c)


@dataclass(frozen=True)
class FocusedCurves:
    a_grid: np.ndarray
    omega_hl: np.ndarray  # (len(a_grid), r)
    tau0_hl: np.ndarray
    bias2: np.ndarray
    fic: np.ndarray
    a_star: float
    K01: np.ndarray
    bias2_raw: np.ndarray = None  # before truncation at zero

    def rows(self):
        return [{"a": float(a), "fic": float(f), "bias2": float(b), "tau2": float(t * t)}
                for a, f, b, t in zip(self.a_grid, self.fic, self.bias2, self.tau0_hl)]


def argmin_first(values):
    """Index of the minimum; ties go to the earliest entry."""
    v = np.asarray(values, dtype=float)
    return int(np.flatnonzero(v <= v.min())[0])


def fic_curve(prob, wm, a_grid=None, wide_fit=None, theta=None):
    """Estimated risk ``fic(a)`` of the hybrid focus estimator over ``a_grid``.

    Plug-in quantities are evaluated once, at the parametric ML fit.
    """
    a_grid = check_grid(DEFAULT_A_GRID if a_grid is None else a_grid)
    wf = fit_wide(wm, prob.data) if wide_fit is None else wide_fit
    theta = fit_ml(prob.model, prob.data) if theta is None else np.asarray(theta, dtype=float)
    base = estimate_blocks(prob, theta)
    J01, K01 = cross_blocks(prob, wm, theta)
    c = prob.focus.gradient(theta)
    dg = prob.focus.dpsi_dgamma(wm, theta)
    DD = np.outer(wf.D_n, wf.D_n) - wf.Q
    om, tau = [], []
    for a in a_grid:
        o, t = omega_tau(base.at(a), J01, K01, c, dg)
        om.append(o)
        tau.append(t)
    om, tau = np.array(om), np.array(tau)
    raw = np.einsum("ij,jk,ik->i", om, DD, om)
    bias2 = np.maximum(raw, 0.0)
    fic = bias2 + tau**2
    return FocusedCurves(a_grid, om, tau, bias2, fic, float(a_grid[argmin_first(fic)]), K01, raw)


@dataclass(frozen=True)
class OracleCurve:
    a_grid: np.ndarray
    mse: np.ndarray
    omega_hl: np.ndarray
    tau0_hl: np.ndarray
    Q: np.ndarray

    @property
    def root_mse(self):
        return np.sqrt(self.mse)


def mse_oracle(wm, controls, focus, delta, a_grid, theta0):
    """Pre-data limit risk ``mse(a)`` by numerical integration at ``(theta0, gamma0)``."""
    a_grid = check_grid(a_grid)
    theta0 = np.asarray(theta0, dtype=float)
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if delta.size != wm.r:
        raise InvalidInput(f"delta must have length {wm.r}")
    base = population_blocks(wm.narrow, controls, theta0)
    J01, K01 = population_cross_blocks(wm, controls, theta0)
    _, Q = population_wide_info(wm, theta0)
    c = focus.gradient(theta0)
    dg = focus.dpsi_dgamma(wm, theta0)
    om, tau = [], []
    for a in a_grid:
        o, t = omega_tau(base.at(a), J01, K01, c, dg)
        om.append(o)
        tau.append(t)
    om, tau = np.array(om), np.array(tau)
    mse = (om @ delta) ** 2 + tau**2
    if not np.all(np.isfinite(mse)):
        raise NumericalFailure("non-finite limit risk")
    return OracleCurve(a_grid, mse, om, tau, Q)


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GofVerdict:
    reject: bool
    statistic: float
    threshold: float
    rho: float
    alpha: float
    omega: np.ndarray
    D_n: np.ndarray

    def to_dict(self):
        return {"reject": self.reject, "statistic": self.statistic, "threshold": self.threshold,
                "rho": self.rho, "alpha": self.alpha, "omega": self.omega.tolist(),
                "D_n": self.D_n.tolist()}


def gof_test(prob, wm, wide_fit=None, theta=None, h=1e-4):
    """Reject the working model when ``(omega^T D_n)^2 / omega^T Q omega > 1``.

    ``omega`` is the ML bias vector. The rule is the sign of the ``fic``
    slope at ``a = 0``, valid for controls ``g(y) - mu`` with focus on ``mu``;
    ``rho`` is the correlation between ``omega`` and the slope ``nu`` of
    ``omega_a`` at zero.
    """
    if not prob.controls.g_form:
        raise UnsupportedControls("the test needs controls of the form g(y) - mu")
    wf = fit_wide(wm, prob.data) if wide_fit is None else wide_fit
    theta = fit_ml(prob.model, prob.data) if theta is None else np.asarray(theta, dtype=float)
    base = estimate_blocks(prob, theta)
    J01, K01 = cross_blocks(prob, wm, theta)
    c = prob.focus.gradient(theta)
    dg = prob.focus.dpsi_dgamma(wm, theta)
    omega, _ = omega_tau(base.at(0.0), J01, K01, c, dg)
    nu = (omega_tau(base.at(h), J01, K01, c, dg)[0] - omega) / h
    Q = wf.Q
    wqw = float(omega @ Q @ omega)
    if wqw <= 0:
        stat = 0.0
    else:
        stat = float(omega @ wf.D_n) ** 2 / wqw
    nqn = float(nu @ Q @ nu)
    rho = float(omega @ Q @ nu) / np.sqrt(wqw * nqn) if wqw > 0 and nqn > 0 else float("nan")
    return GofVerdict(bool(stat > 1.0), stat, 1.0, rho, GOF_ALPHA, omega, wf.D_n)
