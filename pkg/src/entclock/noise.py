"""Local-oscillator noise synthesis in fractional-frequency units.

Power-law components use one-sided PSDs ``S_y(f) = h_a f^a``:

* white FM (``h0``): i.i.d. Gaussian samples of variance ``h0 / (2 dt)``;
* random-walk FM (``h_m2``): Wiener process with increment variance
  ``2 pi^2 h_m2 dt``;
* flicker FM (``h_m1``): sum of Ornstein-Uhlenbeck processes with rates
  log-spaced at four per decade.  A rate ratio ``r`` and per-process variance
  ``h_m1 ln r`` reproduce ``h_m1 / f`` between the extreme corner frequencies.

The dephasing rate ``gamma_lo`` adds white FM chosen so that the LO phase
accumulated over one Ramsey time ``tau`` has standard deviation
``tau * gamma_lo``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy.signal import lfilter

from .seeding import child_seeds

F_A_DEFAULT = 5.18e14  # Hz
FLICKER_PER_DECADE = 4
FLICKER_MIN_DECADES = 4.0


@dataclass(frozen=True)
class NoiseModel:
    """LO noise and atomic decoherence rates.

    ``gamma_*`` are in 1/s; ``h0``, ``h_m1``, ``h_m2`` are coefficients of the
    fractional-frequency PSD (units 1/Hz, dimensionless and Hz respectively).
    """

    gamma_lo: float = 0.0
    h0: float = 0.0
    h_m1: float = 0.0
    h_m2: float = 0.0
    gamma_nat: float = 0.0
    gamma_deph: float = 0.0
    gamma_loss: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if not (val >= 0.0 and math.isfinite(val)):
                raise ValueError(f"{f.name} must be a finite non-negative number, got {val}")

    @property
    def has_lo_noise(self) -> bool:
        return any(v > 0 for v in (self.gamma_lo, self.h0, self.h_m1, self.h_m2))

    @property
    def has_decoherence(self) -> bool:
        return any(v > 0 for v in (self.gamma_nat, self.gamma_deph, self.gamma_loss))

    @property
    def gamma_total(self) -> float:
        return self.gamma_nat + self.gamma_deph + self.gamma_loss


def gamma_lo_to_h0(gamma_lo: float, ramsey_time: float, f_a: float = F_A_DEFAULT) -> float:
    """White-FM level giving ``std(phase over tau) = tau * gamma_lo``."""
    return 2.0 * ramsey_time * gamma_lo**2 / (2.0 * math.pi * f_a) ** 2


def flicker_rates(dt: float, duration: float) -> np.ndarray:
    """OU relaxation rates for the flicker approximation (rad/s)."""
    hi = 1.0 / dt
    lo = min(0.1 * 2.0 * math.pi / duration, hi * 10.0**-FLICKER_MIN_DECADES)
    decades = math.log10(hi / lo)
    count = int(math.ceil(decades * FLICKER_PER_DECADE)) + 1
    return np.geomspace(lo, hi, count)


def flicker_adev_sq(h_m1: float, rates: np.ndarray, tau: float) -> float:
    """Allan variance at ``tau`` of the OU sum, by numerical PSD integration.

    ``sigma^2(tau) = 2 int S_y(f) sin^4(pi f tau) / (pi f tau)^2 df``.
    """
    from scipy.integrate import quad

    ratio = rates[1] / rates[0]
    c = h_m1 * math.log(ratio)

    def psd(f):
        w = 2.0 * math.pi * f
        return float(np.sum(4.0 * c * rates / (rates**2 + w * w)))

    def integrand(logf):
        f = math.exp(logf)
        x = math.pi * f * tau
        return 2.0 * psd(f) * math.sin(x) ** 4 / x**2 * f

    lo, hi = math.log(rates[0] * 1e-4), math.log(rates[-1] * 1e3)
    pts = np.linspace(lo, hi, 64)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += quad(integrand, a, b, limit=200)[0]
    return total


class LOSynth:
    """Chunked LO noise generator with carried filter state.

    Successive calls to :meth:`take` continue the same realization, so the
    concatenation of chunks equals a single long draw.
    """

    def __init__(self, noise: NoiseModel, dt: float, duration: float, seed, ramsey_time=None, f_a=F_A_DEFAULT):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if duration < dt:
            raise ValueError("duration must be at least dt")
        self.dt = dt
        h0 = noise.h0
        if noise.gamma_lo > 0:
            if ramsey_time is None:
                raise ValueError("gamma_lo needs the Ramsey time that defines it")
            h0 += gamma_lo_to_h0(noise.gamma_lo, ramsey_time, f_a)
        self.white_std = math.sqrt(h0 / (2.0 * dt))
        self.rw_std = math.sqrt(2.0 * math.pi**2 * noise.h_m2 * dt)
        s_white, s_rw, s_flick = child_seeds(seed, 3)
        self._rng_white = np.random.default_rng(s_white)
        self._rng_rw = np.random.default_rng(s_rw)
        self._rng_flick = np.random.default_rng(s_flick)
        self._rw_level = 0.0
        self.rates = None
        if noise.h_m1 > 0:
            self.rates = flicker_rates(dt, duration)
            ratio = self.rates[1] / self.rates[0]
            self._ou_var = noise.h_m1 * math.log(ratio)
            self._ou_a = np.exp(-self.rates * dt)
            self._ou_b = np.sqrt(self._ou_var * (1.0 - self._ou_a**2))
            self._ou_state = math.sqrt(self._ou_var) * self._rng_flick.standard_normal(len(self.rates))

    def take(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        if self.white_std > 0:
            out += self.white_std * self._rng_white.standard_normal(n)
        if self.rw_std > 0:
            steps = self.rw_std * self._rng_rw.standard_normal(n)
            walk = np.cumsum(np.concatenate(([self._rw_level], steps)))[1:]
            self._rw_level = float(walk[-1])
            out += walk
        if self.rates is not None:
            # time-major draws keep chunked and single-shot output identical
            eps = self._rng_flick.standard_normal((n, len(self.rates))).T
            for i in range(len(self.rates)):
                a = self._ou_a[i]
                # x_k = a x_{k-1} + b eps_k with carried state
                x, zf = lfilter([self._ou_b[i]], [1.0, -a], eps[i], zi=[a * self._ou_state[i]])
                self._ou_state[i] = x[-1]
                out += x
        return out


def synthesize_lo(noise: NoiseModel, duration: float, dt: float, seed, ramsey_time=None, f_a=F_A_DEFAULT) -> np.ndarray:
    """Fractional-frequency samples ``y(k dt)`` for ``k < round(duration/dt)``.

    Parameters
    ----------
    noise : NoiseModel
        ``gamma_lo`` requires ``ramsey_time`` to fix its white-FM level.
    seed : int or SeedSequence
        Each component draws from its own child stream.
    """
    n = int(round(duration / dt))
    return LOSynth(noise, dt, duration, seed, ramsey_time, f_a).take(max(n, 1))
