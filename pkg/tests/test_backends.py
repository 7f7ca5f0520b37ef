import importlib.util
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from entclock import _servo
from entclock.clock import ClockConfig, simulate
from entclock.noise import NoiseModel

needs_ext = pytest.mark.skipif("cython" not in _servo.BACKENDS, reason="compiled extension not built")

CASES = {
    "css_lo": (ClockConfig(100, 0.1, n_cycles=400, dead_time=0.05), NoiseModel(gamma_lo=3.0, h_m1=1e-32)),
    "oat": (ClockConfig(60, 0.1, n_cycles=300, input_state="oat(0.03)"), NoiseModel(gamma_lo=1.0)),
    "gaussian_decohered": (ClockConfig(500, 0.1, n_cycles=300, input_state="gaussian(8, 12)"), NoiseModel(gamma_lo=2.0, gamma_deph=0.3, gamma_loss=0.1)),
    "qnd": (ClockConfig(200, 0.1, n_cycles=300, input_state="gaussian(8, 12)", qnd_resolution=3.0), NoiseModel(gamma_lo=6.0)),
    "satin": (ClockConfig(32, 0.1, n_cycles=300, input_state="satin(0.18)"), NoiseModel(gamma_lo=1.0)),
    "detection": (ClockConfig(100, 0.1, n_cycles=300, detection_sigma=2.5), NoiseModel(gamma_lo=1.0)),
    "satin_detection": (ClockConfig(32, 0.1, n_cycles=300, input_state="satin(0.18)", detection_sigma=2.0), NoiseModel(gamma_lo=1.0)),
    "abort": (ClockConfig(100, 0.1, n_cycles=2000, lock_loss_cycles=3), NoiseModel(gamma_lo=30.0)),
}


@needs_ext
@pytest.mark.parametrize("name", sorted(CASES))
def test_backends_agree(name):
    cfg, noise = CASES[name]
    a = simulate(cfg, noise, backend="cython").record
    b = simulate(cfg, noise, backend="python").record
    assert a.aborted == b.aborted
    for field in ("true_phase", "phi_hat", "sz", "steering", "wrap", "y"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field


@needs_ext
def test_backends_agree_two_ensembles():
    cfg = ClockConfig(100, 0.1, n_cycles=300, input_state="oat(0.02)")
    extra = (ClockConfig(100, 0.1, n_cycles=300),)
    a = simulate(cfg, NoiseModel(gamma_lo=2.0), configs_extra=extra, backend="cython").record
    b = simulate(cfg, NoiseModel(gamma_lo=2.0), configs_extra=extra, backend="python").record
    assert np.array_equal(a.phi_hat, b.phi_hat)
    assert np.array_equal(a.y, b.y)


def test_pure_python_env_forces_fallback():
    code = "from entclock import _servo; print(_servo.BACKEND)"
    env = {**os.environ, "ENTCLOCK_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_benchmark_runs():
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_servo.py"
    spec = importlib.util.spec_from_file_location("bench_servo", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    inputs = mod.make_inputs(20, 200)
    _, out = mod.run_once(_servo.BACKENDS["python"], *inputs)
    assert np.all(np.isfinite(out[0]))
