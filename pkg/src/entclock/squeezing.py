"""State preparation: unitary one-axis twisting and measurement-based squeezing.

Measurement-based (QND) squeezing is modeled at the level of Gaussian
moments.  The probe measures ``Sz`` with a readout noise whose variance is
the coherent-state projection noise ``S/2`` divided by the normalized light
information ``I``; a Bayesian update then gives the conditional variance
``(S/2) / (1 + I)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .dicke import DickeState, FrameUndefinedError, css, moments, oat_evolve, orient_squeezing
from .metrics import SqueezingReport, squeezing_report

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
MIN_CONTRAST = 1e-3


def golden_section_min(func, lo: float, hi: float, rtol: float = 1e-4, max_iter: int = 200):
    """Minimize a unimodal function on ``[lo, hi]`` to relative tolerance ``rtol``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if b - a <= rtol * 0.5 * (abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = func(d)
    x = 0.5 * (a + b)
    return x, func(x)


def oat_state(n_atoms: int, shear: float, orient: bool = False) -> DickeState:
    """Twisted coherent state ``exp(-i shear Sz^2) |CSS along +x>``.

    With ``orient=True`` the state is additionally rotated about its mean
    spin so that the squeezed quadrature lies along the Ramsey signal
    direction (``+y`` for a spin along ``+x``).
    """
    state = oat_evolve(css(n_atoms, math.pi / 2, 0.0), shear)
    if orient and shear != 0.0:
        state = orient_squeezing(state)
    return state


def _wineland_sq(n_atoms: int, shear: float) -> float:
    try:
        mom = moments(oat_state(n_atoms, shear))
    except FrameUndefinedError:
        return math.inf
    if mom.mean_length < MIN_CONTRAST * n_atoms / 2.0:
        # var_min and C^2 both vanish here; their ratio is cancellation noise
        return math.inf
    return n_atoms * mom.var_min / mom.mean_length**2


def shear_scan_grid(n_atoms: int, points: int = 256) -> np.ndarray:
    return np.geomspace(min(1e-3, 0.01 / n_atoms), math.pi / 2, points)


def oat_squeeze_optimal(n_atoms: int, rtol: float = 1e-4) -> tuple[float, SqueezingReport]:
    """Shear minimizing the Wineland parameter of a twisted CSS.

    A coarse log-spaced scan brackets the optimum, then golden-section search
    refines it to relative tolerance ``rtol``.
    """
    if n_atoms < 2:
        raise ValueError("twisting needs at least two atoms")
    grid = shear_scan_grid(n_atoms)
    values = np.array([_wineland_sq(n_atoms, s) for s in grid])
    k = int(np.argmin(values))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    best, _ = golden_section_min(lambda s: _wineland_sq(n_atoms, s), lo, hi, rtol=rtol)
    if _wineland_sq(n_atoms, grid[k]) < _wineland_sq(n_atoms, best):
        best = float(grid[k])
    return float(best), squeezing_report(oat_state(n_atoms, best))


def shear_for_gain(n_atoms: int, gain_db: float) -> float:
    """Smallest shear whose twisted CSS reaches the requested Wineland gain."""
    best, report = oat_squeeze_optimal(n_atoms)
    if gain_db > report.gain_db + 1e-9:
        raise ValueError(
            f"N={n_atoms} twisting peaks at {report.gain_db:.3f} dB, cannot reach {gain_db} dB"
        )
    if gain_db <= 0:
        return 0.0
    target = 10.0 ** (-gain_db / 10.0)
    return float(brentq(lambda s: _wineland_sq(n_atoms, s) - target, 1e-12, best, xtol=1e-14, rtol=1e-13))


# ---------------------------------------------------------------------------
# Measurement-based squeezing


@dataclass(frozen=True)
class MeasurementModel:
    """Probe-light model for a QND measurement of ``Sz``.

    ``slope`` is ``d alpha / d Sz`` of the outgoing coherent light amplitude.
    The raw light Fisher information is ``4 |slope|^2`` and its normalized
    usable part is ``I = (2/S) 4 |slope|^2 q`` with detection efficiency ``q``.
    """

    n_atoms: int
    slope: float
    detection_efficiency: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise ValueError("detection efficiency must lie in (0, 1]")
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")

    @classmethod
    def from_light_qfi(cls, n_atoms: int, light_qfi: float, detection_efficiency: float = 1.0):
        """Build a model whose raw normalized information is ``light_qfi``."""
        if light_qfi < 0:
            raise ValueError("light Fisher information must be non-negative")
        s = n_atoms / 2.0
        return cls(n_atoms, math.sqrt(light_qfi * s / 8.0), detection_efficiency)

    @property
    def raw_light_qfi(self) -> float:
        return 4.0 * abs(self.slope) ** 2

    @property
    def light_qfi_normalized(self) -> float:
        return (2.0 / (self.n_atoms / 2.0)) * self.raw_light_qfi * self.detection_efficiency


@dataclass(frozen=True)
class GaussianSpin:
    """Moment-level collective spin near the equator.

    ``mean_length`` is ``|<S>|``; ``mean_sz``/``var_sz`` describe the
    observer's knowledge of ``Sz``.  ``true_sz`` is the value the simulated
    ensemble actually carries (``None`` until sampled).  Fields may hold
    arrays when many outcomes are simulated at once.
    """

    n_atoms: int
    mean_length: float
    mean_sz: float | np.ndarray = 0.0
    var_sz: float | np.ndarray = 0.0
    true_sz: float | np.ndarray | None = None
    small_angle_violation: bool | np.ndarray = False

    @classmethod
    def coherent(cls, n_atoms: int) -> "GaussianSpin":
        s = n_atoms / 2.0
        return cls(n_atoms, s, 0.0, s / 2.0)

    @property
    def xi_sq(self):
        return self.var_sz / (self.n_atoms / 4.0)


@dataclass(frozen=True)
class ConditionalState:
    posterior_mean_sz: float | np.ndarray
    posterior_var_sz: float
    feedback_angle: float | np.ndarray
    true_sz: float | np.ndarray
    outcome: float | np.ndarray
    summary: GaussianSpin

    @property
    def xi_sq(self) -> float:
        return self.summary.xi_sq


def measurement_squeeze(
    prior: GaussianSpin,
    model: MeasurementModel,
    seed,
    size: int | None = None,
) -> ConditionalState:
    """Simulate one QND probe of ``Sz`` and the Bayesian update.

    The readout noise variance is ``(S/2) / I``.  The true ``Sz`` is drawn from
    the prior unless the prior already carries one.  The returned summary is
    re-centered to ``Sz = 0`` by the feedback rotation ``beta``.
    """
    info = model.light_qfi_normalized
    if info < 0:
        raise ValueError("light Fisher information must be non-negative")
    if model.n_atoms != prior.n_atoms:
        raise ValueError("model and prior describe different atom numbers")
    rng = np.random.default_rng(seed)
    s = prior.n_atoms / 2.0
    if prior.true_sz is None:
        true_sz = prior.mean_sz + math.sqrt(prior.var_sz) * rng.standard_normal(size)
    else:
        true_sz = prior.true_sz
    # information form stays finite for vanishingly weak probes
    precision = info / (s / 2.0)
    if precision == 0.0:
        outcome = np.full_like(np.asarray(true_sz, dtype=float), np.nan) if size else math.nan
        post_mean = prior.mean_sz + 0.0 * np.asarray(true_sz) if size else prior.mean_sz
        post_var = prior.var_sz
    else:
        z = rng.standard_normal(size)
        outcome = true_sz + z / math.sqrt(precision)
        post_var = prior.var_sz / (1.0 + prior.var_sz * precision)
        post_mean = prior.mean_sz + post_var * (precision * (true_sz - prior.mean_sz) + math.sqrt(precision) * z)
    posterior = replace(prior, mean_sz=post_mean, var_sz=post_var, true_sz=true_sz)
    beta = -np.asarray(post_mean) / prior.mean_length
    if size is None:
        beta = float(beta)
    recentered = apply_feedback(posterior, beta)
    return ConditionalState(
        posterior_mean_sz=post_mean,
        posterior_var_sz=float(post_var),
        feedback_angle=beta,
        true_sz=true_sz,
        outcome=outcome,
        summary=recentered,
    )


def apply_feedback(summary: GaussianSpin, beta, warn: bool = False) -> GaussianSpin:
    """Rotate the mean spin by ``beta`` toward the equator (linearized).

    ``Sz`` shifts by ``beta |<S>|``; variances are unchanged.  Angles beyond
    ``5 sqrt(var_sz) / S`` flag ``small_angle_violation``.
    """
    beta_arr = np.asarray(beta, dtype=float)
    if np.any(np.abs(beta_arr) >= math.pi):
        raise ValueError("feedback angle must satisfy |beta| < pi")
    s = summary.n_atoms / 2.0
    limit = 5.0 * math.sqrt(summary.var_sz) / s
    violation = np.abs(beta_arr) > limit
    if np.ndim(violation) == 0:
        violation = bool(violation)
    if warn and np.any(violation):
        warnings.warn("feedback angle outside the small-angle regime", RuntimeWarning, stacklevel=2)
    shift = beta_arr * summary.mean_length
    if np.ndim(shift) == 0:
        shift = float(shift)
    true_sz = None if summary.true_sz is None else summary.true_sz + shift
    return replace(
        summary,
        mean_sz=summary.mean_sz + shift,
        true_sz=true_sz,
        small_angle_violation=violation,
    )


def measurement_report(n_atoms: int, light_qfi: float, detection_efficiency: float = 1.0) -> SqueezingReport:
    """Gaussian squeezing report after one QND probe with feedback.

    The conjugate quadrature carries the measurement back-action at the
    minimum-uncertainty level, ``xi_+^2 = 1 + I``.
    """
    from .metrics import gaussian_report

    info = light_qfi * detection_efficiency
    return gaussian_report(n_atoms, 1.0 / (1.0 + info), 1.0 + info, 1.0)
