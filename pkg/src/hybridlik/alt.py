"""Alternative hybrid estimator based on a quadratic stand-in for the EL term::

    N_n(theta) = (1-a) l_n(theta) - (a/2) V_n^T W_n^-1 V_n

with ``V_n = n^-1/2 sum m(Y_i, mu(theta))`` and ``W_n = n^-1 sum m m^T``.
It stays defined where the empirical likelihood is hull-infeasible, and under
the model it agrees with the hybrid estimator to first order.
"""

from dataclasses import dataclass

import numpy as np

from ._linalg import sym_inv
from .asymptotics import estimate_blocks, kappa_a
from .errors import InvalidInput, NumericalFailure, SingularMatrix
from .hl import maximize_objective
from .models import fit_ml, integrate_segments

CAVEAT = "by first-order equivalence only"


def _v_w(prob, theta):
    M = prob.controls.matrix(prob.data, theta)
    n = prob.n
    return M.sum(axis=0) / np.sqrt(n), M.T @ M / n


def alt_objective(prob, theta):
    """``N_n(theta)``; ``-inf`` off the support or when ``W_n`` is singular."""
    theta = np.asarray(theta, dtype=float)
    ll = prob.model.loglik(prob.data, theta)
    if not np.isfinite(ll):
        return -np.inf
    if prob.a == 0:
        return ll
    mu = prob.controls.mu_of_theta(theta)
    if not np.all(np.isfinite(mu)):
        return -np.inf
    V, W = _v_w(prob, theta)
    try:
        quad = float(V @ sym_inv(W, "W") @ V)
    except SingularMatrix:
        return -np.inf
    return (1 - prob.a) * ll - 0.5 * prob.a * quad


def pearson_form(prob, theta):
    """Closed form of ``N_n`` for partition controls.

    ``(1-a) l_n - (a/2) n Q/(1+Q)`` with ``Q = sum_j (phat_j - p_j)^2 / phat_j``
    over all cells, the dropped one included.
    """
    cs = prob.controls
    if cs.kind != "partition":
        raise InvalidInput("the closed form applies to partition controls only")
    theta = np.asarray(theta, dtype=float)
    p = cs.mu_of_theta(theta)
    phat = cs.m(prob.data, np.zeros(cs.q)).mean(axis=0)
    p_all = np.append(p, 1.0 - p.sum())
    phat_all = np.append(phat, 1.0 - phat.sum())
    if np.any(phat_all <= 0):
        return -np.inf
    Q = float(np.sum((phat_all - p_all) ** 2 / phat_all))
    return (1 - prob.a) * prob.model.loglik(prob.data, theta) - 0.5 * prob.a * prob.n * Q / (1 + Q)


@dataclass(frozen=True)
class AltHLFit:
    theta_tilde: np.ndarray
    N_max: float
    V_n: np.ndarray
    divergence_estimate: float
    psi_tilde: float
    theta_ml: np.ndarray
    kappa: float
    se_psi: float
    caveat: str = CAVEAT


def _da(kl, x, a):
    return (1 - a) * kl + 0.5 * a * x / (1 + x)


def _pearson_x(v, sigma):
    return float(v @ sym_inv(sigma, "Sigma") @ v)


def maximize_alt(prob, n_restarts=3, seed=0):
    """Maximizer of ``N_n`` with a plug-in estimate of ``d_a``.

    The divergence estimate uses the excess log-likelihood of the ML fit
    over ``theta_tilde`` for the Kullback-Leibler part and the sample mean
    and covariance of ``m(Y, mu(theta_tilde))`` for the control part.
    Standard errors reuse the hybrid sandwich, flagged by ``caveat``.
    """
    theta_ml = fit_ml(prob.model, prob.data)
    theta, nmax, _ = maximize_objective(lambda th: alt_objective(prob, th), prob.model,
                                        prob.data, theta_ml, theta_ml, n_restarts, seed)
    V, _ = _v_w(prob, theta)
    M = prob.controls.matrix(prob.data, theta)
    kl = (prob.model.loglik(prob.data, theta_ml) - prob.model.loglik(prob.data, theta)) / prob.n
    try:
        x = _pearson_x(M.mean(axis=0), np.cov(M, rowvar=False, bias=True).reshape(prob.controls.q, -1))
    except SingularMatrix:
        x = np.inf
    d = _da(max(kl, 0.0), x, prob.a) if np.isfinite(x) else (1 - prob.a) * max(kl, 0.0) + 0.5 * prob.a
    try:
        kappa = kappa_a(estimate_blocks(prob, theta), prob.focus.gradient(theta))
    except NumericalFailure:
        kappa = float("nan")
    return AltHLFit(theta, float(nmax), V, float(d), prob.focus(theta), theta_ml, float(kappa),
                    float(kappa / np.sqrt(prob.n)))


def divergence_da(truth_pdf, model, controls, theta, a, support=None, breakpoints=()):
    """``d_a(f, f_theta) = (1-a) KL(f, f_theta) + (a/2) x / (1 + x)``.

    ``x = v^T Sigma^-1 v`` with ``v = E_f m(Y, mu(theta))`` and ``Sigma`` its
    covariance under ``f``; all integrals by quadrature against ``truth_pdf``.
    """
    theta = np.asarray(theta, dtype=float)
    support = model.support if support is None else support
    mu = controls.mu_of_theta(theta)
    pts = list(model.breakpoints(theta)) + list(controls.jump_points(theta)) + list(breakpoints)

    def kl_integrand(y):
        f = float(truth_pdf(y))
        if f <= 0:
            return 0.0
        return f * (np.log(f) - float(model.log_density(y, theta)))

    kl = float(integrate_segments(kl_integrand, support, pts))
    if not np.isfinite(kl):
        raise NumericalFailure("Kullback-Leibler integral diverged")
    q = controls.q
    mom = integrate_segments(lambda y: np.concatenate([controls.m(y, mu)[0],
                                                       np.outer(controls.m(y, mu)[0],
                                                                controls.m(y, mu)[0]).ravel()])
                             * float(truth_pdf(y)), support, pts)
    v = mom[:q]
    sigma = mom[q:].reshape(q, q) - np.outer(v, v)
    return _da(max(kl, 0.0), _pearson_x(v, sigma), a)
