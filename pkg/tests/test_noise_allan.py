import math
import zlib

import numpy as np
import pytest

from entclock.allan import AllanAccumulator, allan_deviation, octave_factors, white_fm_edf
from entclock.noise import LOSynth, NoiseModel, flicker_adev_sq, flicker_rates, gamma_lo_to_h0, synthesize_lo
from entclock.seeding import child_seeds, env_seed, env_workers, label_hash, task_seed

from oracles import allan_direct


class TestNoiseModel:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            NoiseModel(gamma_lo=-1.0)
        with pytest.raises(ValueError):
            NoiseModel(h0=float("nan"))

    def test_flags(self):
        assert not NoiseModel().has_lo_noise
        assert NoiseModel(h_m1=1e-30).has_lo_noise
        assert NoiseModel(gamma_deph=0.1, gamma_loss=0.2).gamma_total == pytest.approx(0.3)


class TestSynthesis:
    def test_zero_noise(self):
        assert np.array_equal(synthesize_lo(NoiseModel(), 10.0, 0.1, seed=1), np.zeros(100))

    def test_white_level(self):
        h0, dt = 2e-30, 0.1
        y = synthesize_lo(NoiseModel(h0=h0), 2e4, dt, seed=3)
        assert np.var(y) == pytest.approx(h0 / (2 * dt), rel=0.02)
        adev = allan_deviation(y, dt, taus=[dt, 10 * dt, 100 * dt])
        for t, a in zip(adev.taus, adev.adev):
            assert a**2 == pytest.approx(h0 / (2 * t), rel=0.05)

    def test_flicker_floor(self):
        h_m1, dt, dur = 1e-32, 1.0, 2**17
        y = synthesize_lo(NoiseModel(h_m1=h_m1), dur, dt, seed=7)
        floor = 2 * math.log(2) * h_m1
        taus = [8.0, 32.0, 128.0, 512.0]
        adev = allan_deviation(y, dt, taus=taus)
        rates = flicker_rates(dt, dur)
        for t, a in zip(taus, adev.adev):
            assert a**2 == pytest.approx(floor, rel=0.10)
            assert flicker_adev_sq(h_m1, rates, t) == pytest.approx(floor, rel=0.10)

    def test_random_walk_level(self):
        h_m2, dt = 1e-34, 1.0
        y = synthesize_lo(NoiseModel(h_m2=h_m2), 20000, dt, seed=2)
        steps = np.diff(y)
        assert np.var(steps) == pytest.approx(2 * math.pi**2 * h_m2 * dt, rel=0.05)

    def test_gamma_lo_phase(self):
        tau, gamma, f_a = 0.1, 3.0, 5.18e14
        y = synthesize_lo(NoiseModel(gamma_lo=gamma), 4000.0, tau, seed=4, ramsey_time=tau, f_a=f_a)
        phase = 2 * math.pi * f_a * y * tau
        assert np.std(phase) == pytest.approx(tau * gamma, rel=0.03)
        assert gamma_lo_to_h0(gamma, tau, f_a) == pytest.approx(2 * tau * gamma**2 / (2 * math.pi * f_a) ** 2)

    def test_gamma_lo_needs_tau(self):
        with pytest.raises(ValueError):
            synthesize_lo(NoiseModel(gamma_lo=1.0), 1.0, 0.1, seed=0)

    def test_chunked_equals_single(self):
        noise = NoiseModel(h0=1e-30, h_m1=1e-32, h_m2=1e-34)
        whole = LOSynth(noise, 0.5, 500.0, seed=11).take(1000)
        gen = LOSynth(noise, 0.5, 500.0, seed=11)
        parts = np.concatenate([gen.take(k) for k in (1, 99, 400, 500)])
        assert np.array_equal(whole, parts)

    def test_deterministic(self):
        noise = NoiseModel(h0=1e-30, h_m1=1e-32)
        a = synthesize_lo(noise, 100.0, 1.0, seed=5)
        assert np.array_equal(a, synthesize_lo(noise, 100.0, 1.0, seed=5))
        assert not np.array_equal(a, synthesize_lo(noise, 100.0, 1.0, seed=6))


class TestAllan:
    def test_constant_series(self):
        adev = allan_deviation(np.full(64, 3.5), 1.0)
        assert np.all(adev.adev == 0)

    def test_hand_case(self):
        y = np.array([1.0, 3.0, 2.0, 5.0, 4.0, 4.0, 6.0, 2.0, 0.0, 1.0])
        adev = allan_deviation(y, 0.5, taus=[0.5, 1.0, 2.0])
        for m, a in zip((1, 2, 4), adev.adev):
            assert a**2 == pytest.approx(allan_direct(y, m), rel=1e-12)
        # m = 1 by hand: first differences squared / 2
        assert adev.adev[0] ** 2 == pytest.approx(np.mean(np.diff(y) ** 2) / 2, rel=1e-12)

    def test_random_against_direct(self):
        y = np.random.default_rng(0).normal(size=300)
        adev = allan_deviation(y, 2.0)
        for m, a in zip(octave_factors(300), adev.adev):
            assert a**2 == pytest.approx(allan_direct(y, m), rel=1e-10)

    def test_white_slope(self):
        y = np.random.default_rng(1).normal(size=2**16)
        adev = allan_deviation(y, 1.0, taus=[1, 4, 16, 64, 256])
        slope = np.polyfit(np.log(adev.taus), np.log(adev.adev), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.05)

    def test_confidence_brackets(self):
        y = np.random.default_rng(2).normal(size=4096)
        adev = allan_deviation(y, 1.0)
        assert np.all(adev.ci_low <= adev.adev) and np.all(adev.adev <= adev.ci_high)
        assert np.all(np.diff(adev.half_width / adev.adev) > 0)

    def test_edf(self):
        assert white_fm_edf(1025, 1) > white_fm_edf(1025, 64) >= 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            allan_deviation([1.0], 1.0)
        with pytest.raises(ValueError):
            allan_deviation(np.zeros(10), 1.0, taus=[6.0])
        with pytest.raises(ValueError):
            allan_deviation(np.zeros(10), 1.0, taus=[1.5])
        with pytest.raises(KeyError):
            allan_deviation(np.arange(16.0), 1.0).at(3.0)

    def test_merge_associative(self):
        rng = np.random.default_rng(3)
        chunks = [rng.normal(size=n) for n in (64, 100, 80)]
        f = (1, 2, 4, 8)
        acc = [AllanAccumulator(0.1, f).add(c) for c in chunks]
        left = acc[0].merge(acc[1]).merge(acc[2]).series()
        right = acc[0].merge(acc[1].merge(acc[2])).series()
        assert np.allclose(left.adev, right.adev, rtol=1e-14)
        assert np.array_equal(left.n_terms, right.n_terms)
        with pytest.raises(ValueError):
            acc[0].merge(AllanAccumulator(0.2, f))

    def test_merge_pools_terms(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=50), rng.normal(size=70)
        merged = AllanAccumulator(1.0, (1, 2)).add(a).merge(AllanAccumulator(1.0, (1, 2)).add(b)).series()
        # pooled mean of squared second differences, weighted by term count
        n_a, n_b = 50 - 1, 70 - 1
        pooled = (allan_direct(a, 1) * n_a + allan_direct(b, 1) * n_b) / (n_a + n_b)
        assert merged.adev[0] ** 2 == pytest.approx(pooled, rel=1e-12)


class TestSeeding:
    def test_task_seed_stable(self):
        a = np.random.default_rng(task_seed(7, "clock", 3)).integers(1 << 30, size=4)
        b = np.random.default_rng(task_seed(7, "clock", 3)).integers(1 << 30, size=4)
        c = np.random.default_rng(task_seed(7, "clock", 4)).integers(1 << 30, size=4)
        assert np.array_equal(a, b) and not np.array_equal(a, c)
        assert label_hash("clock") == zlib.crc32(b"clock")

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            task_seed(-1, "x")

    def test_child_seeds(self):
        assert len(child_seeds(3, 4)) == 4
        a = [s.generate_state(1)[0] for s in child_seeds(3, 2)]
        b = [s.generate_state(1)[0] for s in child_seeds(np.random.SeedSequence(3), 2)]
        assert a == b

    def test_env(self, monkeypatch):
        monkeypatch.delenv("ENTCLOCK_SEED", raising=False)
        monkeypatch.delenv("ENTCLOCK_WORKERS", raising=False)
        assert env_seed(5) == 5 and env_workers() == 1
        monkeypatch.setenv("ENTCLOCK_SEED", "42")
        monkeypatch.setenv("ENTCLOCK_WORKERS", "3")
        assert env_seed(5) == 42 and env_workers() == 3
        monkeypatch.setenv("ENTCLOCK_WORKERS", "0")
        with pytest.raises(ValueError):
            env_workers()
