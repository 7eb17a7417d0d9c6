"""The hybrid log-likelihood ``h_n(theta) = (1-a) l_n(theta) + a log R_n(mu(theta))``,
its maximizer, the profiled deviance for a focus parameter and confidence curves."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, stats

from . import _optim
from .asymptotics import AsymptoticBlocks, estimate_blocks, kappa_a
from .controls import ControlSet, cell_control, moment_control
from .el import el_loglik_at
from .errors import DegenerateFocus, InvalidInput, NumericalFailure, ProfileInfeasible
from .models import ParametricModel, empirical_fisher, fit_ml


# ---------------------------------------------------------------------------
# Focus parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Focus:
    """Scalar focus ``psi(theta)`` with an optional analytic gradient.

    ``dgamma(wide, theta)`` gives ``d psi / d gamma`` at the null extension;
    it is needed only by the focused (local misspecification) analysis.
    ``truth(expect, theta)`` evaluates the focus under an arbitrary density,
    given ``expect(fun) = E fun(Y)``; without it the truth is ``value(theta)``.
    """

    name: str
    value: Callable
    grad: Optional[Callable] = None
    dgamma: Optional[Callable] = None
    truth: Optional[Callable] = None

    def __call__(self, theta):
        return float(self.value(np.asarray(theta, dtype=float)))

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(theta), dtype=float)
        return _optim.fd_jacobian(lambda t: np.atleast_1d(self.value(t)), theta)[0]

    def true_value(self, expect, theta):
        if self.truth is None:
            return self(theta)
        return float(self.truth(expect, np.asarray(theta, dtype=float)))

    def dpsi_dgamma(self, wide, theta):
        if self.dgamma is None:
            return np.zeros(wide.r)
        return np.atleast_1d(np.asarray(self.dgamma(wide, np.asarray(theta, dtype=float))))


def theta_focus(j, name=None):
    """Focus on the raw coordinate ``theta_j``."""

    def grad(theta):
        g = np.zeros(theta.size)
        g[j] = 1.0
        return g

    return Focus(name or f"theta[{j}]", lambda th: th[j], grad)


def control_focus(cs, j=0, name=None):
    """Focus on control parameter ``mu_j(theta)``.

    Under an extension ``f(y, theta, gamma)`` the defining equation
    ``E m_j(Y, mu_j) = 0`` gives ``d mu_j / d gamma = -E[m_j S] / E[d m_j / d mu_j]``.
    """

    def dgamma(wide, theta):
        model = cs.model
        mu = cs.mu_of_theta(theta)
        ems = model.expect(lambda y: cs.m(y, mu)[0, j] * wide.score_gamma(y, theta)[0], theta,
                           cs.jump_points(theta))
        return -np.atleast_1d(ems) / cs.mean_dm_dmu(theta)[j]

    def truth(expect, theta):
        if cs.g_form:
            return expect(lambda y: cs.m(y, np.zeros(cs.q))[0, j])
        mu0 = cs.mu_of_theta(theta)

        def eq(v):
            mu = mu0.copy()
            mu[j] = v
            return expect(lambda y: cs.m(y, mu)[0, j])

        lo, hi = mu0[j] - 1.0, mu0[j] + 1.0
        while eq(lo) > 0:
            lo -= 2 * (hi - lo)
        while eq(hi) < 0:
            hi += 2 * (hi - lo)
        return optimize.brentq(eq, lo, hi, xtol=1e-12)

    return Focus(name or (cs.labels[j] if cs.labels else f"mu[{j}]"),
                 lambda th: cs.mu_of_theta(th)[j],
                 lambda th: np.asarray(cs.dmu_dtheta(th))[:, j], dgamma, truth)


def moment_focus(model, power):
    return control_focus(moment_control(model, [power]), 0)


def cell_focus(model, lo, hi):
    return control_focus(cell_control(model, [(lo, hi)]), 0)


# ---------------------------------------------------------------------------
# Problem, objective, maximizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HLProblem:
    model: ParametricModel
    controls: ControlSet
    data: np.ndarray
    a: float
    focus: Focus

    def __post_init__(self):
        data = np.atleast_1d(np.asarray(self.data, dtype=float)).ravel()
        if data.size == 0:
            raise InvalidInput("empty data")
        if not np.all(np.isfinite(data)):
            raise InvalidInput("data contain non-finite values")
        if not 0.0 <= self.a < 1.0:
            raise InvalidInput(f"balance parameter must lie in [0, 1), got {self.a}")
        object.__setattr__(self, "data", data)

    @property
    def n(self):
        return self.data.size

    def with_a(self, a):
        return HLProblem(self.model, self.controls, self.data, a, self.focus)


def hl_loglik(prob, theta):
    """Hybrid log-likelihood; ``-inf`` outside the support or the EL hull."""
    theta = np.asarray(theta, dtype=float)
    ll = prob.model.loglik(prob.data, theta)
    if not np.isfinite(ll):
        return -np.inf
    if prob.a == 0:
        return ll
    mu = prob.controls.mu_of_theta(theta)
    if not np.all(np.isfinite(mu)):
        return -np.inf
    return (1 - prob.a) * ll + prob.a * el_loglik_at(prob.controls, prob.data, mu)


@dataclass(frozen=True)
class HLFit:
    theta_hat: np.ndarray
    h_max: float
    psi_hat: float
    blocks: AsymptoticBlocks
    cov_sandwich: np.ndarray
    kappa: float
    n: int
    theta_ml: np.ndarray
    optimizer_trace: dict = field(default_factory=dict)

    @property
    def se_theta(self):
        return np.sqrt(np.diag(self.cov_sandwich) / self.n)

    @property
    def se_psi(self):
        return self.kappa / np.sqrt(self.n)


def simplex_steps(model, data, theta):
    """Nelder-Mead step sizes of about two standard errors, in free coordinates."""
    theta = np.asarray(theta, dtype=float)
    try:
        J = empirical_fisher(model, data, theta)
        se = np.sqrt(np.diag(np.linalg.inv(J)) / data.size)
    except (np.linalg.LinAlgError, ValueError):
        se = np.full(theta.size, np.nan)
    se = np.where(np.isfinite(se), se, 0.05 * np.maximum(np.abs(theta), 1.0))
    se_free = se / _optim.free_jacobian(theta, model.positive)
    return np.clip(2.0 * se_free, 1e-4, 1.0)


def maximize_objective(objective, model, data, theta_start, theta_ml=None, n_restarts=3,
                       seed=0, jitter=0.05):
    """Shared multi-start simplex search used by the HL and alternative estimators."""
    positive = model.positive
    x0 = _optim.to_free(theta_start, positive)
    steps = simplex_steps(model, data, theta_start)
    extra = [] if theta_ml is None else [_optim.to_free(theta_ml, positive)]
    f = lambda x: objective(_optim.from_free(x, positive))
    x, fbest, n_ok = _optim.nelder_mead_multistart(
        f, x0, steps, n_restarts=n_restarts, jitter=jitter, seed=seed, extra_points=extra)
    return _optim.from_free(x, positive), fbest, n_ok


def maximize_hl(prob, theta_init=None, n_restarts=3, seed=0, blocks=True):
    """Maximum hybrid likelihood estimate with sandwich-based inference.

    The simplex starts at the parametric ML fit (or ``theta_init``) and is
    restarted from ``n_restarts`` jittered points; the best value wins.
    """
    theta_ml = fit_ml(prob.model, prob.data)
    start = theta_ml if theta_init is None else np.asarray(theta_init, dtype=float)
    theta, hmax, n_ok = maximize_objective(lambda th: hl_loglik(prob, th), prob.model,
                                           prob.data, start, theta_ml, n_restarts, seed)
    bl = estimate_blocks(prob, theta) if blocks else None
    kappa = kappa_a(bl, prob.focus.gradient(theta)) if blocks else np.nan
    return HLFit(theta_hat=theta, h_max=float(hmax), psi_hat=prob.focus(theta), blocks=bl,
                 cov_sandwich=bl.sandwich if blocks else None, kappa=float(kappa), n=prob.n,
                 theta_ml=theta_ml,
                 optimizer_trace={"starts": n_restarts + 1, "feasible_runs": n_ok,
                                  "h_at_ml": float(hl_loglik(prob, theta_ml))})


# ---------------------------------------------------------------------------
# Profiling, deviance, confidence curves
# ---------------------------------------------------------------------------


def _root_along(psi, base, direction, target, scale, t_max=None):
    """Scalar ``t`` with ``psi(base + t * direction) = target`` by bracketing + Brent.

    With ``t_max`` the search is one-sided on ``(0, t_max]``.
    """
    def g(t):
        try:
            return psi(base + t * direction) - target
        except NumericalFailure:
            return np.nan

    g0 = g(0.0)
    if not np.isfinite(g0):
        return None
    if g0 == 0:
        return 0.0
    step = scale
    for _ in range(60):
        for sgn in ((1.0,) if t_max is not None else (1.0, -1.0)):
            t = sgn * step if t_max is None else min(step, t_max)
            gt = g(t)
            if np.isfinite(gt) and np.sign(gt) != np.sign(g0):
                a, b = sorted((0.0, t))
                return optimize.brentq(g, a, b, xtol=1e-14, rtol=1e-14, maxiter=200)
        if t_max is not None and step >= t_max:
            break
        step *= 1.6
    return None


def profile_max(objective, psi, theta_hat, value, positive=None, steps=None, n_restarts=1,
                seed=0, return_theta=False):
    """``max objective(theta)`` subject to ``psi(theta) = value``.

    The constraint is solved exactly: search runs over the directions
    orthogonal to the focus gradient at ``theta_hat``, and for each point a
    one-dimensional root along the gradient restores ``psi = value``.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    p = theta_hat.size
    positive = positive if positive is not None else (False,) * p
    x_hat = _optim.to_free(theta_hat, positive)
    psi_x = lambda x: float(psi(_optim.from_free(x, positive)))
    cx = _optim.fd_jacobian(lambda x: np.atleast_1d(psi_x(x)), x_hat)[0]
    norm = np.linalg.norm(cx)
    if not np.isfinite(norm) or norm == 0:
        raise ProfileInfeasible("focus gradient vanishes at the fitted point")
    d = cx / norm
    N = np.linalg.svd(d[None, :])[2][1:].T  # p x (p-1) orthonormal complement
    scale = max(abs(value - psi_x(x_hat)) / norm, 1e-6)

    far = []

    def beyond():
        # a point with psi past the target, found by pushing psi directly
        if not far:
            sgn = 1.0 if value > psi_x(x_hat) else -1.0

            def push(x):
                try:
                    v = psi_x(x)
                except NumericalFailure:
                    return -np.inf
                return -np.inf if not np.isfinite(v) else min(sgn * (v - value), 1.0)

            x, top, _ = _optim.nelder_mead_multistart(push, x_hat, np.full(p, 0.5),
                                                      n_restarts=2, seed=seed)
            far.append(x if top > 0 else None)
        return far[0]

    def point(z):
        base = x_hat + N @ z if p > 1 else x_hat
        t = _root_along(psi_x, base, d, value, scale)
        if t is not None:
            return base + t * d
        xf = beyond()
        if xf is None:
            return None
        t = _root_along(psi_x, base, xf - base, value, 1.0 / 64, t_max=1.0)
        return None if t is None else base + t * (xf - base)

    x0 = point(np.zeros(p - 1))
    if x0 is None:
        raise ProfileInfeasible(f"no parameter value reaches focus value {value}")
    if p == 1:
        th = _optim.from_free(x0, positive)
        val = objective(th)
    else:
        def f(z):
            x = point(z)
            return -np.inf if x is None else objective(_optim.from_free(x, positive))

        st = np.full(p - 1, 0.05) if steps is None else np.abs(N.T @ steps) + 1e-4
        z, val, _ = _optim.nelder_mead_multistart(f, np.zeros(p - 1), st,
                                                  n_restarts=n_restarts, seed=seed)
        th = _optim.from_free(point(z), positive)
    if not np.isfinite(val):
        raise ProfileInfeasible(f"objective is infeasible on the constraint psi = {value}")
    return (val, th) if return_theta else val


def profile_hl(prob, psi_value, fit=None, return_theta=False):
    """Profiled hybrid log-likelihood at focus value ``psi_value``."""
    if fit is None:
        fit = maximize_hl(prob, blocks=False)
    steps = simplex_steps(prob.model, prob.data, fit.theta_hat)
    return profile_max(lambda th: hl_loglik(prob, th), prob.focus, fit.theta_hat, psi_value,
                       prob.model.positive, steps, return_theta=return_theta)


def deviance(prob, psi_value, fit):
    """``2 {h_prof(psi_hat) - h_prof(psi)}``, zero at the estimate."""
    if psi_value == fit.psi_hat:
        return 0.0
    return max(0.0, 2.0 * (fit.h_max - profile_hl(prob, psi_value, fit)))


def deviance_scale(blocks, c):
    """``k = c^T J*^-1 K* J*^-1 c / c^T J*^-1 c``; ``Delta_n / k`` is approx. chi2_1."""
    c = np.asarray(c, dtype=float)
    den = float(c @ np.linalg.solve(blocks.Jstar, c))
    k = float(c @ blocks.sandwich @ c) / den if den > 0 else np.nan
    if not np.isfinite(k) or k <= 0:
        raise DegenerateFocus(f"deviance scale factor is not positive ({k:.3g})")
    return k


@dataclass(frozen=True)
class ConfidenceCurve:
    psi: np.ndarray
    deviance: np.ndarray
    cc: np.ndarray
    k: float


def confidence_curve(prob, fit, psi_grid):
    """``cc(psi) = Gamma_1(Delta_n(psi) / k_hat)`` on ``psi_grid``."""
    grid = np.asarray(psi_grid, dtype=float)
    if not np.all(np.isfinite(grid)):
        raise InvalidInput("psi grid must be finite")
    k = deviance_scale(fit.blocks, prob.focus.gradient(fit.theta_hat))
    dev = np.array([deviance(prob, v, fit) for v in grid])
    return ConfidenceCurve(grid, dev, stats.chi2.cdf(dev / k, df=1), k)
