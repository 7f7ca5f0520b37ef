import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from entclock.dicke import covariance
from entclock.metrics import gain_bound_check, squeezing_report, to_db
from entclock.squeezing import (
    GaussianSpin,
    MeasurementModel,
    apply_feedback,
    golden_section_min,
    measurement_report,
    measurement_squeeze,
    oat_squeeze_optimal,
    oat_state,
    shear_for_gain,
)

from oracles import dense_wineland_sq, dense_xi_minus_sq


def test_golden_section_quadratic():
    x, fx = golden_section_min(lambda t: (t - 0.3) ** 2 + 1.0, 0.0, 1.0, rtol=1e-8)
    assert x == pytest.approx(0.3, abs=1e-7)
    assert fx == pytest.approx(1.0, abs=1e-12)


class TestOatOptimum:
    def test_two_atoms_dense_grid(self):
        # the supremum G = 2 is approached as the contrast vanishes at pi/2;
        # stay where the contrast exceeds 1e-3 like the optimizer does
        grid = np.arange(1e-4, math.pi / 2 - 1e-3, 1e-4)
        best = min(dense_wineland_sq(2, s) for s in grid)
        _, rep = oat_squeeze_optimal(2)
        assert rep.gain_db == pytest.approx(to_db(1.0 / best), abs=1e-5)
        assert rep.gain_db <= 10 * math.log10(2) + 1e-9
        assert rep.gain_db == pytest.approx(10 * math.log10(2), abs=1e-5)
        assert gain_bound_check(rep)

    def test_n100_against_dense(self):
        shear, rep = oat_squeeze_optimal(100)
        # same shear, independent evolution
        assert rep.xi_minus_sq == pytest.approx(dense_xi_minus_sq(100, shear), abs=1e-9)
        # independently located optimum
        res = minimize_scalar(lambda s: dense_wineland_sq(100, s), bounds=(0.02, 0.1), method="bounded", options={"xatol": 1e-9})
        assert 1.0 / rep.wineland_inv_sq == pytest.approx(res.fun, rel=1e-6)
        assert shear == pytest.approx(res.x, rel=1e-3)
        assert rep.xi_minus_sq == pytest.approx(0.0490, abs=2e-4)

    def test_rejects_single_atom(self):
        with pytest.raises(ValueError):
            oat_squeeze_optimal(1)

    def test_shear_for_gain(self):
        s = shear_for_gain(100, 4.4)
        assert squeezing_report(oat_state(100, s)).gain_db == pytest.approx(4.4, abs=1e-9)
        best, _ = oat_squeeze_optimal(100)
        assert s < best
        assert shear_for_gain(100, 0.0) == 0.0
        with pytest.raises(ValueError):
            shear_for_gain(100, 20.0)

    def test_orient_puts_squeezing_on_signal_axis(self):
        st = oat_state(50, 0.05, orient=True)
        rep = squeezing_report(st)
        cov = covariance(st)
        # Ramsey signal direction of a spin along +x is +y
        assert 2 * cov[1, 1] / 25 == pytest.approx(rep.xi_minus_sq, rel=1e-9)


class TestMeasurementModel:
    def test_information_identity(self):
        m = MeasurementModel(40, slope=0.7, detection_efficiency=0.6)
        assert m.light_qfi_normalized == pytest.approx((2 / 20) * 4 * 0.49 * 0.6, rel=1e-12)

    def test_from_light_qfi(self):
        m = MeasurementModel.from_light_qfi(100, 3.0)
        assert m.light_qfi_normalized == pytest.approx(3.0, rel=1e-12)

    def test_rejects(self):
        with pytest.raises(ValueError):
            MeasurementModel(10, 1.0, 0.0)
        with pytest.raises(ValueError):
            MeasurementModel.from_light_qfi(10, -1.0)


class TestMeasurementSqueeze:
    @pytest.mark.parametrize("info,xi", [(0.0, 1.0), (1.0, 0.5), (3.0, 0.25)])
    def test_gaussian_posterior(self, info, xi):
        n = 1000
        res = measurement_squeeze(GaussianSpin.coherent(n), MeasurementModel.from_light_qfi(n, info), seed=1)
        assert res.posterior_var_sz / (n / 4) == pytest.approx(xi, rel=1e-12)
        assert res.xi_sq == pytest.approx(xi, rel=1e-12)
        assert res.posterior_var_sz <= n / 4

    def test_monte_carlo_i3(self):
        n = 1000
        res = measurement_squeeze(GaussianSpin.coherent(n), MeasurementModel.from_light_qfi(n, 3.0), seed=5, size=100_000)
        # after feedback the true Sz is the estimation residual
        emp = np.var(res.summary.true_sz) / (n / 4)
        assert emp == pytest.approx(0.25, abs=0.01)
        assert abs(np.mean(res.summary.mean_sz)) < 1e-9

    def test_two_rounds(self):
        n = 1000
        model = MeasurementModel.from_light_qfi(n, 1.0)
        first = measurement_squeeze(GaussianSpin.coherent(n), model, seed=11, size=100_000)
        second = measurement_squeeze(first.summary, model, seed=12, size=100_000)
        assert second.posterior_var_sz / (n / 4) == pytest.approx(1 / 3, rel=1e-12)
        emp = np.var(second.summary.true_sz) / (n / 4)
        assert emp == pytest.approx(1 / 3, rel=0.02)

    def test_efficiency_equivalence(self):
        n = 200
        a = measurement_squeeze(GaussianSpin.coherent(n), MeasurementModel.from_light_qfi(n, 4.0, 0.25), seed=3, size=50)
        b = measurement_squeeze(GaussianSpin.coherent(n), MeasurementModel.from_light_qfi(n, 1.0, 1.0), seed=3, size=50)
        assert np.allclose(a.outcome, b.outcome, rtol=1e-12)
        assert a.posterior_var_sz == pytest.approx(b.posterior_var_sz, rel=1e-12)

    def test_deterministic(self):
        n = 100
        m = MeasurementModel.from_light_qfi(n, 2.0)
        a = measurement_squeeze(GaussianSpin.coherent(n), m, seed=9, size=10)
        b = measurement_squeeze(GaussianSpin.coherent(n), m, seed=9, size=10)
        assert np.array_equal(a.outcome, b.outcome)

    def test_report(self):
        rep = measurement_report(100, 1.0)
        assert rep.xi_minus_sq == pytest.approx(0.5)
        assert rep.gain_db == pytest.approx(3.0103, abs=1e-4)


class TestFeedback:
    def test_zero(self):
        g = GaussianSpin(100, 50.0, 1.5, 10.0)
        assert apply_feedback(g, 0.0) == g

    def test_recenters(self):
        m0 = 2.3
        g = GaussianSpin(100, 50.0, m0, 12.5)
        out = apply_feedback(g, -2 * m0 / 100)
        assert out.mean_sz == pytest.approx(0.0, abs=1e-9)
        assert out.var_sz == g.var_sz
        assert not out.small_angle_violation

    def test_large_angle_flag(self):
        g = GaussianSpin(100, 50.0, 0.0, 12.5)
        out = apply_feedback(g, 0.5)
        assert out.small_angle_violation
        with pytest.warns(RuntimeWarning):
            apply_feedback(g, 0.5, warn=True)
        with pytest.raises(ValueError):
            apply_feedback(g, math.pi)
