"""Time the compiled and pure-Python servo loops on identical inputs.

    python benchmarks/bench_servo.py [--cycles 20000] [--atoms 100] [--repeat 3]

Only the loop is timed; table construction and noise synthesis are shared.
The two backends must return identical records, which is checked first.
"""

import argparse
import time

import numpy as np

from entclock import _servo
from entclock.clock import ClockConfig, build_readout, build_table, table_points, _stack_tables
from entclock.noise import NoiseModel


def make_inputs(n_atoms, cycles, seed=1):
    cfg = ClockConfig(n_atoms=n_atoms, ramsey_time=0.1, input_state="oat(0.02)", n_cycles=cycles)
    model = build_readout(cfg, NoiseModel())
    stacked = _stack_tables([build_table(model, table_points(cfg, len(model.values)))])
    rng = np.random.default_rng(seed)
    lo_phase = 0.3 * rng.standard_normal(cycles)
    lo_freq = 1e-16 * rng.standard_normal(cycles)
    draws = [rng.random((cycles, 1)), rng.random((cycles, 1)), rng.standard_normal((cycles, 1))]
    return cfg, stacked, lo_phase, lo_freq, draws


def run_once(kernel, cfg, stacked, lo_phase, lo_freq, draws):
    cdf, est, values, mean, var, length, kinds, resp_mu, resp_phi, n_resp = stacked
    n = len(lo_phase)
    out = [np.zeros(n), np.zeros((n, 1)), np.zeros((n, 1)), np.zeros(n), np.zeros(n, dtype=np.uint8), np.zeros(n)]
    t0 = time.perf_counter()
    kernel(
        lo_phase, lo_freq, cfg.phase_scale, cfg.servo_gain, cdf, est, values, *draws, -1.0,
        mean, var, length, 0, 0.0, np.zeros((1, 1)), kinds, resp_mu, resp_phi, n_resp, *out,
    )
    return time.perf_counter() - t0, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cycles", type=int, default=20000)
    ap.add_argument("--atoms", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    inputs = make_inputs(args.atoms, args.cycles)
    if "cython" not in _servo.BACKENDS:
        print("compiled backend not built; only the Python loop is available")
    results = {}
    for name, kernel in sorted(_servo.BACKENDS.items()):
        best = min(run_once(kernel, *inputs)[0] for _ in range(args.repeat))
        results[name] = (best, run_once(kernel, *inputs)[1])
        print(f"{name:>7s}: {best * 1e3:9.2f} ms  ({args.cycles / best:,.0f} cycles/s)")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(results["cython"][1], results["python"][1]))
        print(f"speedup: {results['python'][0] / results['cython'][0]:.1f}x  identical records: {same}")


if __name__ == "__main__":
    main()
