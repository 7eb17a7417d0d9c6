"""Alternative hybrid estimator, its closed form for partitions and the divergence d_a."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hybridlik.alt import CAVEAT, alt_objective, divergence_da, maximize_alt, pearson_form
from hybridlik.controls import cell_control, moment_control
from hybridlik.el import el_loglik_at
from hybridlik.errors import InvalidInput
from hybridlik.hl import HLProblem, control_focus, maximize_hl, theta_focus
from hybridlik.models import builtin_model, fit_ml


def gamma_partition_problem(n, a=0.5, seed=0):
    model = builtin_model("gamma")
    y = model.sample([2.0, 0.5], n, seed)
    cs = cell_control(model, [(0, 2), (2, 4), (4, 7), (7, np.inf)], partition=True)
    return HLProblem(model, cs, y, a, control_focus(cs))


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


class TestObjective:
    def test_a_zero_is_loglik(self):
        prob = gamma_partition_problem(200, a=0.0)
        th = np.array([1.8, 0.45])
        assert alt_objective(prob, th) == prob.model.loglik(prob.data, th)

    def test_quadratic_term_vanishes(self):
        model = builtin_model("beta_one")
        y = model.sample([2.0], 120, seed=1)
        m1 = y.mean()
        th = np.array([m1 / (1 - m1)])  # theta / (theta + 1) = ybar
        prob = HLProblem(model, moment_control(model, [1]), y, 0.4, theta_focus(0))
        assert alt_objective(prob, th) == pytest.approx(0.6 * model.loglik(y, th), abs=1e-9)

    def test_matches_definition(self):
        prob = gamma_partition_problem(300, a=0.3, seed=2)
        th = np.array([2.2, 0.6])
        M = prob.controls.matrix(prob.data, th)
        V = M.sum(0) / np.sqrt(prob.n)
        W = M.T @ M / prob.n
        ref = 0.7 * prob.model.loglik(prob.data, th) - 0.15 * V @ np.linalg.solve(W, V)
        assert alt_objective(prob, th) == pytest.approx(ref, rel=1e-10)

    def test_close_to_hybrid_near_truth(self):
        # -2 log R and V^T W^-1 V agree to first order near mu-hat
        model = builtin_model("beta_one")
        y = model.sample([2.0], 2000, seed=3)
        cs = moment_control(model, [2])
        prob = HLProblem(model, cs, y, 0.5, theta_focus(0))
        th = np.array([2.05])
        el = el_loglik_at(cs, y, cs.mu_of_theta(th))
        quad = (alt_objective(prob, th) - 0.5 * model.loglik(y, th)) / 0.5
        assert quad == pytest.approx(el, rel=0.05, abs=0.05)

    def test_singular_w_is_minus_inf(self):
        # every observation in the first cell: all rows of M coincide, so W has rank one
        model = builtin_model("normal")
        y = np.array([0.1, 0.4, 0.7, 0.9])
        prob = HLProblem(model, cell_control(model, [(0, 1), (1, 2)]), y, 0.5, theta_focus(0))
        assert np.isfinite(model.loglik(y, [0.5, 1.0]))
        assert alt_objective(prob, [0.5, 1.0]) == -np.inf


class TestPearsonForm:
    @pytest.mark.parametrize("n", [1000, 5000])
    def test_agrees_with_general_form(self, n):
        prob = gamma_partition_problem(n, seed=4)
        rng = np.random.default_rng(n)
        for _ in range(5):
            th = np.array([2.0, 0.5]) * np.exp(0.1 * rng.standard_normal(2))
            assert pearson_form(prob, th) == pytest.approx(alt_objective(prob, th), abs=0.5)

    def test_pearson_sum_by_hand(self):
        prob = gamma_partition_problem(400, a=0.5, seed=5)
        th = np.array([1.9, 0.55])
        edges = [0, 2, 4, 7, np.inf]
        dist = stats.gamma(1.9, scale=1 / 0.55)
        p = np.diff(dist.cdf(edges))
        phat = np.histogram(prob.data, edges)[0] / prob.n
        Q = np.sum((phat - p) ** 2 / phat)
        ref = prob.model.loglik(prob.data, th) * (1 - prob.a) - 0.5 * prob.a * prob.n * Q / (1 + Q)
        assert pearson_form(prob, th) == pytest.approx(ref, rel=1e-9)

    def test_partition_only(self):
        model = builtin_model("gamma")
        y = model.sample([2.0, 0.5], 50, 6)
        with pytest.raises(InvalidInput):
            pearson_form(HLProblem(model, moment_control(model, [3]), y, 0.5, theta_focus(0)),
                         [2.0, 0.5])


# ---------------------------------------------------------------------------
# Maximizer
# ---------------------------------------------------------------------------


class TestMaximize:
    def test_a_zero_is_ml(self):
        prob = gamma_partition_problem(300, a=0.0, seed=7)
        fit = maximize_alt(prob)
        np.testing.assert_allclose(fit.theta_tilde, fit_ml(prob.model, prob.data), atol=1e-6)
        assert fit.caveat == CAVEAT

    def test_beats_probed_points(self):
        prob = gamma_partition_problem(300, a=0.6, seed=8)
        fit = maximize_alt(prob)
        rng = np.random.default_rng(0)
        for _ in range(100):
            th = fit.theta_tilde * np.exp(0.05 * rng.standard_normal(2))
            assert alt_objective(prob, th) <= fit.N_max + 1e-9
        assert fit.divergence_estimate >= 0
        np.testing.assert_allclose(fit.V_n, prob.controls.matrix(prob.data, fit.theta_tilde)
                                   .sum(0) / np.sqrt(prob.n))

    def test_close_to_hybrid_fit(self):
        model = builtin_model("beta_one")
        y = model.sample([2.0], 2000, seed=9)
        prob = HLProblem(model, moment_control(model, [2]), y, 0.5, theta_focus(0))
        hl, alt = maximize_hl(prob), maximize_alt(prob)
        assert abs(hl.theta_hat[0] - alt.theta_tilde[0]) <= 0.5 * hl.se_theta[0]
        assert alt.se_psi == pytest.approx(hl.se_psi, rel=0.05)

    def test_gross_misspecification(self):
        # lognormal data, gamma model: the quadratic stand-in stays finite everywhere
        model = builtin_model("gamma")
        y = stats.lognorm(1.2).rvs(size=300, random_state=10)
        cs = moment_control(model, [3])
        prob = HLProblem(model, cs, y, 0.5, control_focus(cs))
        fit = maximize_alt(prob)
        assert np.all(np.isfinite(fit.theta_tilde)) and np.isfinite(fit.N_max)
        grid = [np.array([b, c]) for b in (0.5, 1.0, 2.0) for c in (0.05, 0.2, 1.0)]
        assert all(np.isfinite(alt_objective(prob, th)) for th in grid)
        # the EL term is hull-infeasible for part of the same grid
        el = [el_loglik_at(cs, y, cs.mu_of_theta(th)) for th in grid]
        assert any(not np.isfinite(v) for v in el)


# ---------------------------------------------------------------------------
# Divergence
# ---------------------------------------------------------------------------


class TestDivergence:
    def test_zero_at_model(self):
        model = builtin_model("gamma")
        cs = moment_control(model, [2])
        th = np.array([2.0, 0.5])
        d = divergence_da(lambda y: model.pdf(y, th), model, cs, th, 0.5)
        assert d == pytest.approx(0.0, abs=1e-8)

    def test_a_zero_is_kl(self):
        model = builtin_model("normal")
        cs = moment_control(model, [3])
        th = np.array([0.0, 1.0])
        # KL(N(m, s^2) || N(0, 1)) = log(1/s) + (s^2 + m^2)/2 - 1/2
        m, s = 0.3, 1.4
        d = divergence_da(stats.norm(m, s).pdf, model, cs, th, 0.0)
        assert d == pytest.approx(np.log(1 / s) + (s**2 + m**2) / 2 - 0.5, rel=1e-7)

    def test_control_term_by_hand(self):
        model = builtin_model("normal")
        cs = moment_control(model, [1])
        th = np.array([0.0, 1.0])
        truth = stats.norm(0.5, 1.0)
        # v = 0.5, Sigma = 1, x = 0.25, KL = 0.125
        d = divergence_da(truth.pdf, model, cs, th, 0.4)
        assert d == pytest.approx(0.6 * 0.125 + 0.2 * 0.25 / 1.25, rel=1e-7)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-3, 3), st.floats(0.3, 3), st.floats(0.01, 0.99))
    def test_bounds(self, m, s, a):
        model = builtin_model("normal")
        cs = moment_control(model, [1])
        th = np.array([0.0, 1.0])
        truth = stats.norm(m, s)
        d = divergence_da(truth.pdf, model, cs, th, a)
        kl = np.log(1 / s) + (s**2 + m**2) / 2 - 0.5
        assert d >= 0
        assert d - (1 - a) * kl < a / 2
