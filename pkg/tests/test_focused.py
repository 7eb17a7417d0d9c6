"""Wide fits, bias/spread curves, fic(a), the mse(a) oracle and the GOF test."""

import math
from dataclasses import replace

import numpy as np
import pytest

from hybridlik.asymptotics import estimate_blocks
from hybridlik.controls import moment_control, quantile_control
from hybridlik.errors import InvalidInput, UnsupportedControls
from hybridlik.focused import (DEFAULT_A_GRID, GOF_ALPHA, fic_curve, fit_wide, gof_test,
                               mse_oracle, omega_tau, population_wide_info, q_from_wide)
from hybridlik.hl import HLProblem, control_focus, theta_focus
from hybridlik.models import builtin_wide, fit_ml

WM = builtin_wide("beta_one_in_beta")
CS = moment_control(WM.narrow, [2])
FOCUS = control_focus(CS)
THETA0 = 2.0


def delta_one_sd():
    _, Q = population_wide_info(WM, [THETA0])
    return np.sqrt(Q[0, 0])


def beta_problem(n=100, seed=0, gamma=None):
    gamma = 1.0 + delta_one_sd() / np.sqrt(n) if gamma is None else gamma
    y = WM.sample([THETA0], [gamma], n, seed)
    return HLProblem(WM.narrow, CS, y, 0.0, FOCUS)


# ---------------------------------------------------------------------------
# Wide fit
# ---------------------------------------------------------------------------


class TestWideFit:
    def test_q_is_inverse_block(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((4, 4))
        J = A @ A.T + np.eye(4)
        np.testing.assert_allclose(q_from_wide(J, 2), np.linalg.inv(J)[2:, 2:], rtol=1e-10)

    def test_block_diagonal(self):
        J = np.diag([2.0, 3.0, 5.0])
        np.testing.assert_allclose(q_from_wide(J, 2), [[0.2]])

    def test_fit_and_score_equations(self):
        prob = beta_problem(n=300, seed=1)
        wf = fit_wide(WM, prob.data)
        score = WM.score_wide(prob.data, wf.theta_gamma_hat[:1], wf.theta_gamma_hat[1:]).sum(0)
        np.testing.assert_allclose(score, 0.0, atol=1e-6)
        assert np.all(np.linalg.eigvalsh(wf.Q) > 0)
        # J00 agrees with the narrow information at the narrow fit
        th = fit_ml(WM.narrow, prob.data)
        J_narrow = estimate_blocks(prob, th).J
        np.testing.assert_allclose(wf.J00, J_narrow, rtol=0.1)

    @pytest.mark.slow
    def test_dn_calibrated_under_null(self):
        stat = []
        for s in range(1000):
            y = WM.sample([THETA0], WM.gamma0, 200, 10_000 + s)
            wf = fit_wide(WM, y)
            stat.append(float(wf.D_n @ np.linalg.solve(wf.Q, wf.D_n)))
        assert np.mean(stat) == pytest.approx(WM.r, rel=0.10)

    @pytest.mark.slow
    def test_dn_centered_at_delta(self):
        # the gamma MLE carries an O(1/n) bias that is visible at n = 100, so use n = 1000
        n, d, reps = 1000, delta_one_sd(), 300
        dn = [fit_wide(WM, beta_problem(n, 20_000 + s).data).D_n[0] for s in range(reps)]
        assert abs(np.mean(dn) - d) <= 3 * np.std(dn) / np.sqrt(reps)


# ---------------------------------------------------------------------------
# omega and tau
# ---------------------------------------------------------------------------


class TestOmegaTau:
    def setup_method(self):
        self.prob = beta_problem(n=200, seed=2)
        self.theta = fit_ml(self.prob.model, self.prob.data)
        self.base = estimate_blocks(self.prob, self.theta)
        S = WM.score_gamma(self.prob.data, self.theta)
        U = self.prob.model.score(self.prob.data, self.theta)
        M = self.prob.controls.matrix(self.prob.data, self.theta)
        self.J01, self.K01 = U.T @ S / self.prob.n, M.T @ S / self.prob.n
        self.c = FOCUS.gradient(self.theta)
        self.dg = FOCUS.dpsi_dgamma(WM, self.theta)

    def test_a_zero_is_ml_bias(self):
        om, tau = omega_tau(self.base.at(0.0), self.J01, self.K01, self.c, self.dg)
        J = self.base.J
        np.testing.assert_allclose(om, self.J01.T @ np.linalg.solve(J, self.c) - self.dg,
                                   atol=1e-10)
        assert tau == pytest.approx(np.sqrt(self.c @ np.linalg.solve(J, self.c)), abs=1e-10)

    def test_orthogonal_extension(self):
        for a in (0.0, 0.3, 0.9):
            om, _ = omega_tau(self.base.at(a), np.zeros((1, 1)), np.zeros((1, 1)), self.c, [0.0])
            np.testing.assert_allclose(om, 0.0, atol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInput):
            omega_tau(self.base, np.zeros((2, 1)), self.K01, self.c, self.dg)

    def test_dpsi_dgamma_for_second_moment(self):
        # E Y^2 under Beta(theta, gamma) = theta(theta+1) / ((theta+gamma)(theta+gamma+1))
        t, h = THETA0, 1e-6
        m2 = lambda g: t * (t + 1) / ((t + g) * (t + g + 1))
        fd = (m2(1 + h) - m2(1 - h)) / (2 * h)
        assert FOCUS.dpsi_dgamma(WM, [t])[0] == pytest.approx(fd, rel=1e-6)


# ---------------------------------------------------------------------------
# fic and mse curves
# ---------------------------------------------------------------------------


class TestCurves:
    def test_fic_structure(self):
        prob = beta_problem(seed=3)
        fc = fic_curve(prob, WM)
        np.testing.assert_array_equal(fc.a_grid, DEFAULT_A_GRID)
        assert np.all(np.isfinite(fc.fic))
        assert np.all(fc.fic >= fc.tau0_hl**2)
        np.testing.assert_allclose(fc.fic, fc.bias2 + fc.tau0_hl**2)
        assert fc.a_star in fc.a_grid

    def test_fic_zero_is_classical(self):
        prob = beta_problem(seed=4)
        wf = fit_wide(WM, prob.data)
        th = fit_ml(prob.model, prob.data)
        fc = fic_curve(prob, WM, [0.0], wide_fit=wf, theta=th)
        U = prob.model.score(prob.data, th)
        S = WM.score_gamma(prob.data, th)
        J00, J10 = U.T @ U / prob.n, S.T @ U / prob.n
        c, dg = FOCUS.gradient(th), FOCUS.dpsi_dgamma(WM, th)
        omega = J10 @ np.linalg.solve(J00, c) - dg
        classical = max(float(omega @ (np.outer(wf.D_n, wf.D_n) - wf.Q) @ omega), 0.0) \
            + float(c @ np.linalg.solve(J00, c))
        assert fc.fic[0] == pytest.approx(classical, rel=1e-10)

    def test_truncated_regime(self):
        prob = beta_problem(seed=5)
        wf = replace(fit_wide(WM, prob.data), D_n=np.zeros(1))
        fc = fic_curve(prob, WM, wide_fit=wf)
        np.testing.assert_allclose(fc.fic, fc.tau0_hl**2)
        assert fc.a_star == fc.a_grid[np.argmin(fc.tau0_hl)]

    def test_oracle_no_bias(self):
        oc = mse_oracle(WM, CS, FOCUS, [0.0], DEFAULT_A_GRID, [THETA0])
        np.testing.assert_allclose(oc.mse, oc.tau0_hl**2)
        assert int(np.argmin(oc.mse)) == 0

    def test_oracle_improves_on_ml(self):
        d = delta_one_sd()
        oc = mse_oracle(WM, CS, FOCUS, [d], DEFAULT_A_GRID, [THETA0])
        assert np.all(np.isfinite(oc.mse))
        assert oc.mse.min() < oc.mse[0]
        assert oc.mse[0] == pytest.approx((oc.omega_hl[0] @ [d]) ** 2 + oc.tau0_hl[0] ** 2)

    def test_omega_shrinks(self):
        oc = mse_oracle(WM, CS, FOCUS, [1.0], DEFAULT_A_GRID, [THETA0])
        size = np.abs(oc.omega_hl[:, 0])
        assert np.all(np.diff(size) <= 1e-12)
        assert size[-1] < 0.1 * size[0]

    def test_oracle_delta_length(self):
        with pytest.raises(InvalidInput):
            mse_oracle(WM, CS, FOCUS, [1.0, 2.0], [0.0], [THETA0])


GRID = np.arange(0.0, 0.51, 0.05)


def _slopes(seed):
    fc = fic_curve(beta_problem(1000, seed), WM, GRID)
    raw = fc.bias2_raw + fc.tau0_hl**2
    return np.polyfit(GRID, fc.fic, 1)[0], np.polyfit(GRID, raw, 1)[0]


@pytest.mark.slow
class TestFicTracksMse:
    """Mean fic(a) minus mse(a) should be flat in a; compared through fitted slopes.

    A mean of per-dataset slopes equals the slope of the mean curve, so the
    per-dataset slopes are what is stored.
    """

    @staticmethod
    @pytest.fixture(scope="class")
    def slopes():
        s = np.array([_slopes(1000 + k) for k in range(2000)])
        oracle = mse_oracle(WM, CS, FOCUS, [delta_one_sd()], GRID, [THETA0]).mse
        return s, np.polyfit(GRID, oracle, 1)[0]

    def test_untruncated_estimate_tracks_oracle(self, slopes):
        # 2000 datasets: the Monte Carlo error of the mean slope is below 10% of the oracle slope
        s, target = slopes
        assert s[:, 1].mean() == pytest.approx(target, rel=0.15)

    @pytest.mark.xfail(strict=True, reason="truncation at zero adds an a-dependent upward "
                       "bias, so the offset to mse(a) is not constant")
    def test_truncated_fic_tracks_oracle(self, slopes):
        s, target = slopes
        assert s[:500, 0].mean() == pytest.approx(target, rel=0.15)


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------


class TestGof:
    def test_alpha(self):
        # P{chi2_1 > 1} = P{|Z| > 1} = erfc(1 / sqrt 2)
        assert GOF_ALPHA == pytest.approx(math.erfc(1 / math.sqrt(2)), abs=1e-14)
        assert GOF_ALPHA == pytest.approx(0.31731, abs=1e-5)

    def test_zero_statistic(self):
        prob = beta_problem(seed=6)
        wf = replace(fit_wide(WM, prob.data), D_n=np.zeros(1))
        v = gof_test(prob, WM, wide_fit=wf)
        assert v.statistic == 0.0 and not v.reject

    def test_statistic_formula(self):
        prob = beta_problem(seed=7)
        wf = fit_wide(WM, prob.data)
        v = gof_test(prob, WM, wide_fit=wf)
        w = v.omega
        assert v.statistic == pytest.approx(float(w @ wf.D_n) ** 2 / float(w @ wf.Q @ w))
        assert v.reject == (v.statistic > 1)
        # omega_a shrinks along -omega for g - mu controls
        assert v.rho == pytest.approx(-1.0, abs=1e-6)

    def test_quantile_controls_unsupported(self):
        cs = quantile_control(WM.narrow, [0.5])
        y = WM.sample([THETA0], [1.0], 50, 8)
        with pytest.raises(UnsupportedControls):
            gof_test(HLProblem(WM.narrow, cs, y, 0.0, theta_focus(0)), WM)
