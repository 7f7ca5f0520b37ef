import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from entclock.config import dump_config, parse_config
from entclock.decoherence import DickeDensityMatrix, SpinMoments, collective_dephase, gain_ceiling, moment_decoherence
from entclock.dicke import Z_AXIS, DickeState, css, mean_spin, moments, oat_evolve, rotate
from entclock.metrics import qfi_linear_max, squeezing_report
from entclock.squeezing import GaussianSpin, MeasurementModel, measurement_squeeze

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

atoms = st.integers(min_value=1, max_value=40)
angle = st.floats(min_value=-2 * math.pi, max_value=2 * math.pi, allow_nan=False)
polar = st.floats(min_value=0.0, max_value=math.pi)
unit = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))
shear = st.floats(min_value=0.0, max_value=0.5)


@st.composite
def states(draw, n=None):
    n = draw(atoms) if n is None else n
    kind = draw(st.sampled_from(["css", "oat", "random"]))
    if kind == "random":
        seed = draw(st.integers(0, 2**32 - 1))
        rng = np.random.default_rng(seed)
        psi = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
        return DickeState(n, psi / np.linalg.norm(psi))
    st0 = css(n, draw(polar), draw(angle))
    return oat_evolve(st0, draw(shear)) if kind == "oat" else st0


@SETTINGS
@given(atoms.flatmap(lambda n: st.tuples(states(n), states(n))), unit, angle, shear)
def test_unitarity(pair, axis, ang, mu):
    a, b = pair
    ra, rb = rotate(a, axis, ang), rotate(b, axis, ang)
    assert abs(np.linalg.norm(ra.amps) - 1) < 1e-12
    assert abs(np.vdot(ra.amps, rb.amps) - np.vdot(a.amps, b.amps)) < 1e-12
    oa, ob = oat_evolve(a, mu), oat_evolve(b, mu)
    assert abs(np.linalg.norm(oa.amps) - 1) < 1e-12
    assert abs(np.vdot(oa.amps, ob.amps) - np.vdot(a.amps, b.amps)) < 1e-12


@SETTINGS
@given(states(), shear)
def test_oat_conserves_sz(state, mu):
    out = oat_evolve(state, mu)
    # a unit-modulus phase factor changes |a|^2 by at most rounding
    assert np.allclose(out.populations, state.populations, rtol=0, atol=1e-15)
    assert math.isclose(mean_spin(out)[2], mean_spin(state)[2], abs_tol=1e-12)


@SETTINGS
@given(states())
def test_robertson(state):
    mean = mean_spin(state)
    assume(np.linalg.norm(mean) > 1e-3)
    mom = moments(state)
    assert mom.var_min * mom.var_max >= mom.mean_length**2 / 4 - 1e-9


@SETTINGS
@given(states(), angle)
def test_rotation_covariance(state, phi):
    assume(np.linalg.norm(mean_spin(state)) > 1e-3)
    a = moments(state)
    b = moments(rotate(state, Z_AXIS, phi))
    c, s = math.cos(phi), math.sin(phi)
    rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    assert np.allclose(b.mean, rz @ a.mean, atol=1e-9)
    assert math.isclose(b.var_min, a.var_min, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(b.var_max, a.var_max, rel_tol=1e-9, abs_tol=1e-9)


@SETTINGS
@given(st.integers(2, 40), st.floats(0.0, math.pi / 2), polar, angle)
def test_gain_below_qfi(n, mu, th, ph):
    state = oat_evolve(css(n, th, ph), mu)
    assume(np.linalg.norm(mean_spin(state)) > 1e-3 * n / 2)
    rep = squeezing_report(state)
    assert qfi_linear_max(state) >= n * rep.wineland_inv_sq - 1e-9


@SETTINGS
@given(st.integers(100, 400), st.floats(0.0, 1.0))
def test_oat_near_minimum_uncertainty(n, mu_n):
    rep = squeezing_report(oat_evolve(css(n, math.pi / 2, 0), mu_n / n))
    prod, c4 = rep.xi_minus_sq * rep.xi_plus_sq, rep.contrast**4
    assert prod >= c4 - 1e-9
    assert prod <= 1.05 * c4


@SETTINGS
@given(st.integers(10, 10_000), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_conditional_variance_monotone(n, i1, i2):
    lo, hi = sorted((i1, i2))
    prior = GaussianSpin.coherent(n)
    a = measurement_squeeze(prior, MeasurementModel.from_light_qfi(n, lo), seed=0)
    b = measurement_squeeze(prior, MeasurementModel.from_light_qfi(n, hi), seed=0)
    assert b.posterior_var_sz <= a.posterior_var_sz * (1 + 1e-12)
    assert math.isclose(a.xi_sq * (1 + lo), 1.0, rel_tol=1e-12)


rates = st.floats(0.0, 5.0)


@SETTINGS
@given(st.integers(10, 10**6), st.floats(0.01, 1.0), st.floats(1.0, 100.0), st.floats(0.05, 1.0), rates, rates, rates, st.floats(1e-4, 2.0))
def test_decoherence_never_adds_gain(n, xm, xp, c, g1, g2, g3, tau):
    # states at or below the projection-noise level of the input atom number
    mom = SpinMoments.from_xi(n, xm, max(xp, 1.0 / xm), c)
    out = moment_decoherence(mom, g1, g2, g3, tau)
    assert out.wineland_inv_sq <= mom.wineland_inv_sq * (1 + 1e-12)


@SETTINGS
@given(st.floats(1.0, 1e6), st.floats(1e-4, 1.0), rates, rates, rates, st.floats(1.0, 3.0))
def test_ceiling_monotone(n, tau, g1, g2, g3, k):
    c = gain_ceiling(n, tau, g1, g2, g3).g_max
    assert c <= n
    assert gain_ceiling(n, k * tau, g1, g2, g3).g_max <= c * (1 + 1e-12)
    assert gain_ceiling(n, tau, k * g1, g2, g3).g_max <= c * (1 + 1e-12)
    assert gain_ceiling(n, tau, g1, g2 + 0.1, g3).g_max <= c * (1 + 1e-12)
    assert gain_ceiling(k * n, tau, g1, g2, g3).g_max >= c * (1 - 1e-12)


@SETTINGS
@given(st.integers(1, 12).flatmap(lambda n: states(n)), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_dephasing_cptp(state, rate, t):
    out = collective_dephase(DickeDensityMatrix.from_state(state), rate, t)
    assert abs(np.trace(out.rho).real - 1) < 1e-10
    assert out.min_eigenvalue >= -1e-10
    assert np.allclose(out.rho, out.rho.conj().T, atol=1e-12)


@SETTINGS
@given(st.integers(1, 30), st.integers(0, 2**32 - 1), st.floats(-1e-10, 1e-10))
def test_state_normalized(n, seed, eps):
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
    amps *= math.sqrt(1 + eps) / np.linalg.norm(amps)
    assert abs(np.linalg.norm(DickeState(n, amps).amps) - 1) < 1e-12
    with pytest.raises(ValueError):
        DickeState(n, 2 * amps)


@SETTINGS
@given(
    st.integers(1, 10**5),
    st.floats(1e-6, 10.0),
    st.floats(0.0, 1.0),
    st.sampled_from(["css", "oat(0.01)", "gaussian(3.0, 6.5)", "measurement(2.0)"]),
    st.integers(0, 2**31),
    st.floats(0.0, 100.0),
)
def test_config_roundtrip(n, tau, gain, state, seed, rate):
    assume(0 < gain < 2)
    text = f"n_atoms = {n}\nramsey_time = {tau!r} s\nservo_gain = {gain!r}\ninput_state = {state}\nseed = {seed}\ngamma_deph = {rate!r} 1/s\n"
    cfg = parse_config(text)
    dumped = dump_config(cfg)
    assert parse_config(dumped) == cfg
    assert dump_config(parse_config(dumped)) == dumped
