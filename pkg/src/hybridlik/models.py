"""Parametric working models, their wide extensions, and ML fitting.

Every callable is vectorized over observations: ``log_density(y, theta)``
accepts a scalar or an array ``y`` and returns the same shape, ``score``
returns an ``(n, p)`` array.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from . import _optim
from .errors import NumericalFailure, UnsupportedModel

LOG_2PI = np.log(2.0 * np.pi)
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-10


def numerical_score(log_density):
    """Central-difference score for a log-density lacking an analytic one."""

    def score(y, theta):
        theta = np.asarray(theta, dtype=float)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        h = _optim.fd_step(theta)
        out = np.empty((y.size, theta.size))
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h[j]
            out[:, j] = (log_density(y, theta + e) - log_density(y, theta - e)) / (2 * h[j])
        return out

    return score


@dataclass(frozen=True)
class ParametricModel:
    """A parametric family ``f(y, theta)`` with ``p`` parameters.

    ``positive`` flags the coordinates that optimizers move on the log scale.
    ``center_scale(theta)`` gives a rough location and spread used to place
    quadrature breakpoints; ``cdf`` is needed by quantile and cell controls.
    """

    name: str
    p: int
    log_density: Callable
    score: Optional[Callable] = None
    support_check: Callable = lambda theta: True
    sampler: Optional[Callable] = None
    support: tuple = (-np.inf, np.inf)
    cdf: Optional[Callable] = None
    positive: tuple = ()
    param_names: tuple = ()
    center_scale: Optional[Callable] = None
    start: Optional[Callable] = None

    def __post_init__(self):
        if self.score is None:
            object.__setattr__(self, "score", numerical_score(self.log_density))
        if not self.positive:
            object.__setattr__(self, "positive", (False,) * self.p)
        if not self.param_names:
            object.__setattr__(self, "param_names",
                               tuple(f"theta{j}" for j in range(self.p)))

    def pdf(self, y, theta):
        return np.exp(self.log_density(y, theta))

    def loglik(self, data, theta):
        theta = np.asarray(theta, dtype=float)
        if not self.support_check(theta):
            return -np.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            v = float(np.sum(self.log_density(data, theta)))
        return v if np.isfinite(v) else -np.inf

    def score_sum(self, data, theta):
        return self.score(data, theta).sum(axis=0)

    def sample(self, theta, n, seed=None):
        return self.sampler(np.asarray(theta, dtype=float), n, seed)

    def breakpoints(self, theta):
        lo, hi = self.support
        pts = []
        if self.center_scale is not None:
            c, s = self.center_scale(np.asarray(theta, dtype=float))
            pts = [c + k * s for k in (-8.0, -2.0, 0.0, 2.0, 8.0)]
        return [x for x in pts if lo < x < hi]

    def expect(self, fun, theta, breakpoints=()):
        """``E_theta fun(Y)`` by adaptive Gauss-Kronrod quadrature.

        ``fun`` maps a scalar ``y`` to a scalar or an array; the result has
        the same shape. Extra ``breakpoints`` (cell edges, quantiles) split
        the range where the integrand jumps.
        """
        theta = np.asarray(theta, dtype=float)

        def integrand(y):
            return np.asarray(fun(y), dtype=float) * float(self.pdf(y, theta))

        return integrate_segments(integrand, self.support,
                                  list(self.breakpoints(theta)) + list(breakpoints))

    def quantile(self, level, theta):
        return invert_cdf(self, level, theta)


def integrate_segments(integrand, support, breakpoints=()):
    lo, hi = support
    pts = sorted({float(x) for x in breakpoints if lo < x < hi})
    edges = [lo, *pts, hi]
    probe = np.asarray(integrand(_finite_probe(lo, hi, pts)), dtype=float)
    scalar = probe.ndim == 0
    total = 0.0 if scalar else np.zeros(probe.shape)
    with warnings.catch_warnings():
        # round-off notices are expected near integrable endpoint singularities
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        total = _sum_segments(integrand, edges, scalar, total)
    if not np.all(np.isfinite(total)):
        raise NumericalFailure("quadrature diverged")
    return total


def _sum_segments(integrand, edges, scalar, total):
    for a, b in zip(edges[:-1], edges[1:]):
        if a == b:
            continue
        if scalar:
            val, _ = integrate.quad(lambda y: float(integrand(y)), a, b,
                                    epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
        else:
            val, _ = integrate.quad_vec(lambda y: np.asarray(integrand(y), dtype=float),
                                        a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                                        limit=200)
        total = total + val
    return total


def _finite_probe(lo, hi, pts):
    if pts:
        return pts[len(pts) // 2]
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    if np.isfinite(lo):
        return lo + 1.0
    if np.isfinite(hi):
        return hi - 1.0
    return 0.0


def invert_cdf(model, level, theta, tol=1e-10, max_iter=200):
    """Solve ``F(x; theta) = level`` by Newton steps safeguarded with bisection."""
    theta = np.asarray(theta, dtype=float)
    lo, hi = model.support
    F = lambda x: float(model.cdf(x, theta)) - level
    if model.center_scale is not None:
        x, s = model.center_scale(theta)
    else:
        x, s = 0.5 * (lo + hi), 0.25 * (hi - lo)
    s = max(s, 1e-12)
    # bracket
    a = lo if np.isfinite(lo) else x - s
    while not np.isfinite(lo) and F(a) > 0:
        s *= 2
        a = x - s
    b = hi if np.isfinite(hi) else x + s
    while not np.isfinite(hi) and F(b) < 0:
        s *= 2
        b = x + s
    x = min(max(x, a), b)
    if not a < x < b:
        x = 0.5 * (a + b)
    for _ in range(max_iter):
        fx = F(x)
        if abs(fx) <= tol:
            return x
        if fx < 0:
            a = x
        else:
            b = x
        d = float(model.pdf(x, theta))
        nx = x - fx / d if d > 0 else np.nan
        if not (a < nx < b):
            nx = 0.5 * (a + b)
        if abs(nx - x) <= 1e-15 * max(1.0, abs(x)):
            return nx
        x = nx
    return x


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------


def _normal():
    def logpdf(y, th):
        xi, sig = th
        z = (np.asarray(y, dtype=float) - xi) / sig
        return -0.5 * LOG_2PI - np.log(sig) - 0.5 * z * z

    def score(y, th):
        xi, sig = th
        d = np.atleast_1d(np.asarray(y, dtype=float)) - xi
        return np.column_stack([d / sig**2, -1.0 / sig + d * d / sig**3])

    def sampler(th, n, seed):
        return np.random.default_rng(seed).normal(th[0], th[1], n)

    return ParametricModel(
        name="normal", p=2, log_density=logpdf, score=score,
        support_check=lambda th: np.isfinite(th[0]) and th[1] > 0,
        sampler=sampler, support=(-np.inf, np.inf),
        cdf=lambda y, th: special.ndtr((np.asarray(y, dtype=float) - th[0]) / th[1]),
        positive=(False, True), param_names=("xi", "sigma"),
        center_scale=lambda th: (th[0], th[1]),
        start=lambda y: np.array([np.mean(y), np.std(y)]),
    )


def _gamma():
    # shape b, rate c
    def logpdf(y, th):
        b, c = th
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return b * np.log(c) - special.gammaln(b) + (b - 1) * np.log(y) - c * y

    def score(y, th):
        b, c = th
        y = np.atleast_1d(np.asarray(y, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.column_stack([np.log(c) - special.digamma(b) + np.log(y), b / c - y])

    def sampler(th, n, seed):
        return np.random.default_rng(seed).gamma(th[0], 1.0 / th[1], n)

    def start(y):
        m, v = np.mean(y), np.var(y)
        return np.array([m * m / v, m / v])

    return ParametricModel(
        name="gamma", p=2, log_density=logpdf, score=score,
        support_check=lambda th: th[0] > 0 and th[1] > 0 and np.all(np.isfinite(th)),
        sampler=sampler, support=(0.0, np.inf),
        cdf=lambda y, th: special.gammainc(th[0], th[1] * np.clip(np.asarray(y, dtype=float), 0, None)),
        positive=(True, True), param_names=("shape", "rate"),
        center_scale=lambda th: (th[0] / th[1], np.sqrt(th[0]) / th[1]),
        start=start,
    )


def _beta_start(y):
    m, v = np.mean(y), np.var(y)
    k = m * (1 - m) / v - 1
    return np.array([max(m * k, 0.05), max((1 - m) * k, 0.05)])


def _beta():
    def logpdf(y, th):
        b, c = th
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (special.gammaln(b + c) - special.gammaln(b) - special.gammaln(c)
                    + (b - 1) * np.log(y) + (c - 1) * np.log1p(-y))

    def score(y, th):
        b, c = th
        y = np.atleast_1d(np.asarray(y, dtype=float))
        dbc = special.digamma(b + c)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.column_stack([dbc - special.digamma(b) + np.log(y),
                                    dbc - special.digamma(c) + np.log1p(-y)])

    def sampler(th, n, seed):
        return np.random.default_rng(seed).beta(th[0], th[1], n)

    return ParametricModel(
        name="beta", p=2, log_density=logpdf, score=score,
        support_check=lambda th: th[0] > 0 and th[1] > 0 and np.all(np.isfinite(th)),
        sampler=sampler, support=(0.0, 1.0),
        cdf=lambda y, th: special.betainc(th[0], th[1], np.clip(np.asarray(y, dtype=float), 0, 1)),
        positive=(True, True), param_names=("b", "c"), start=_beta_start,
    )


def _beta_one():
    def logpdf(y, th):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(th[0]) + (th[0] - 1) * np.log(y)

    def score(y, th):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        with np.errstate(divide="ignore"):
            return (1.0 / th[0] + np.log(y))[:, None]

    def sampler(th, n, seed):
        return np.random.default_rng(seed).beta(th[0], 1.0, n)

    return ParametricModel(
        name="beta_one", p=1, log_density=logpdf, score=score,
        support_check=lambda th: th[0] > 0 and np.isfinite(th[0]),
        sampler=sampler, support=(0.0, 1.0),
        cdf=lambda y, th: np.clip(np.asarray(y, dtype=float), 0, 1) ** th[0],
        positive=(True,), param_names=("theta",),
        start=lambda y: np.array([-1.0 / np.mean(np.log(y))]),
    )


_BUILTINS = {"normal": _normal, "gamma": _gamma, "beta": _beta, "beta_one": _beta_one}


def builtin_model(name):
    """Return a built-in family by name: normal, gamma, beta, beta_one."""
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise UnsupportedModel(f"unknown model {name!r}; choose from {sorted(_BUILTINS)}") from None


# ---------------------------------------------------------------------------
# Wide (extended) models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WideModel:
    """Extension ``f(y, theta, gamma)`` that reduces to ``narrow`` at ``gamma0``.

    ``score_gamma(y, theta)`` is the score in the extension direction at
    ``gamma0``; ``score_wide(y, theta, gamma)`` the full ``(n, p + r)`` score.
    """

    name: str
    narrow: ParametricModel
    r: int
    gamma0: np.ndarray
    _log_density_wide: Callable = field(repr=False)
    score_wide: Callable = field(repr=False)
    sampler_wide: Optional[Callable] = field(default=None, repr=False)
    positive_gamma: tuple = ()
    support_check_wide: Callable = field(default=lambda th, g: True, repr=False)
    note: str = ""

    def log_density_wide(self, y, theta, gamma):
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        if np.array_equal(gamma, self.gamma0):
            return self.narrow.log_density(y, theta)
        return self._log_density_wide(y, np.asarray(theta, dtype=float), gamma)

    def score_gamma(self, y, theta):
        return self.score_wide(y, theta, self.gamma0)[:, self.narrow.p:]

    def pdf_wide(self, y, theta, gamma):
        return np.exp(self.log_density_wide(y, theta, gamma))

    def sample(self, theta, gamma, n, seed=None):
        return self.sampler_wide(np.asarray(theta, dtype=float),
                                 np.atleast_1d(np.asarray(gamma, dtype=float)), n, seed)

    @property
    def positive(self):
        return tuple(self.narrow.positive) + tuple(self.positive_gamma or (False,) * self.r)


def _beta_one_in_beta():
    narrow = _beta_one()

    def logpdf(y, th, g):
        t, gg = th[0], g[0]
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return (special.gammaln(t + gg) - special.gammaln(t) - special.gammaln(gg)
                    + (t - 1) * np.log(y) + (gg - 1) * np.log1p(-y))

    def score(y, th, g):
        t, gg = th[0], np.atleast_1d(g)[0]
        y = np.atleast_1d(np.asarray(y, dtype=float))
        d = special.digamma(t + gg)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.column_stack([d - special.digamma(t) + np.log(y),
                                    d - special.digamma(gg) + np.log1p(-y)])

    def sampler(th, g, n, seed):
        return np.random.default_rng(seed).beta(th[0], g[0], n)

    return WideModel(
        name="beta_one_in_beta", narrow=narrow, r=1, gamma0=np.array([1.0]),
        _log_density_wide=logpdf, score_wide=score, sampler_wide=sampler,
        positive_gamma=(True,),
        support_check_wide=lambda th, g: th[0] > 0 and g[0] > 0,
        note="Beta(theta, gamma) around Beta(theta, 1)",
    )


def _gamma_in_gengamma():
    # (c Y)^gamma ~ Gamma(b, 1); gamma = 1 is the shape/rate gamma family.
    narrow = _gamma()

    def logpdf(y, th, g):
        b, c = th
        gg = g[0]
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lcy = np.log(c * y)
            return np.log(gg) + np.log(c) + (gg * b - 1) * lcy - np.exp(gg * lcy) - special.gammaln(b)

    def score(y, th, g):
        b, c = th
        gg = np.atleast_1d(g)[0]
        y = np.atleast_1d(np.asarray(y, dtype=float))
        with np.errstate(divide="ignore", invalid="ignore"):
            lcy = np.log(c * y)
            pw = np.exp(gg * lcy)
            return np.column_stack([gg * lcy - special.digamma(b),
                                    gg * b / c - gg * pw / c,
                                    1.0 / gg + b * lcy - pw * lcy])

    def sampler(th, g, n, seed):
        x = np.random.default_rng(seed).gamma(th[0], 1.0, n)
        return x ** (1.0 / g[0]) / th[1]

    return WideModel(
        name="gamma_in_gengamma", narrow=narrow, r=1, gamma0=np.array([1.0]),
        _log_density_wide=logpdf, score_wide=score, sampler_wide=sampler,
        positive_gamma=(True,),
        support_check_wide=lambda th, g: th[0] > 0 and th[1] > 0 and g[0] > 0,
        note="stand-in extension: (cY)^gamma ~ Gamma(b, 1)",
    )


_WIDE = {"beta_one_in_beta": _beta_one_in_beta, "gamma_in_gengamma": _gamma_in_gengamma}


def builtin_wide(name):
    """Return a built-in wide model: beta_one_in_beta or gamma_in_gengamma."""
    try:
        return _WIDE[name]()
    except KeyError:
        raise UnsupportedModel(f"unknown wide model {name!r}; choose from {sorted(_WIDE)}") from None


# ---------------------------------------------------------------------------
# Estimation helpers
# ---------------------------------------------------------------------------


def empirical_fisher(model, data, theta):
    """Outer-product information ``n^-1 sum u_i u_i^T`` at ``theta``."""
    data = np.atleast_1d(np.asarray(data, dtype=float))
    U = model.score(data, np.asarray(theta, dtype=float))
    bad = ~np.all(np.isfinite(U), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalFailure(f"non-finite score at observation {i}", index=i)
    return U.T @ U / data.size


def fit_ml(model, data, theta0=None):
    """Parametric maximum likelihood estimate (quasi-Newton plus Newton polish)."""
    data = np.atleast_1d(np.asarray(data, dtype=float))
    if theta0 is None:
        theta0 = model.start(data) if model.start is not None else np.ones(model.p)
    return _optim.maximize_smooth(
        lambda th: model.loglik(data, th),
        lambda th: model.score_sum(data, th),
        theta0, model.positive, model.support_check,
    )
