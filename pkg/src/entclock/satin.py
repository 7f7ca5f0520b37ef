"""Interaction-based readout by time reversal (twist, imprint, untwist).

The sequence is ``css(pi/2, 0) -> OAT(+chi t) -> R_n(phi) -> OAT(-(1+eps) chi t)``
followed by a projective measurement of the collective spin along the
readout direction ``r``.  ``r`` is the direction in which the final mean spin
moves when ``phi`` departs from zero, so the measured signal is
``<S.r>(phi)`` and the phase variance follows from linear error propagation

    Var(phi) = (Var(S.r) + sigma_det^2) / |d<S.r>/dphi|^2 .

The imprint axis defaults to ``y``: it is orthogonal both to the twisting
axis ``z`` and to the initial mean spin ``x``.  A rotation about ``z``
commutes with the twist and is undone by the echo, so it carries no
amplification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dicke import (
    Y_AXIS,
    DickeState,
    FrameUndefinedError,
    covariance,
    css,
    mean_spin,
    moments,
    oat_evolve,
    rotate,
)
from .squeezing import golden_section_min, oat_state

FD_STEP = 1e-5


@dataclass(frozen=True)
class SatinResult:
    n_atoms: int
    shear: float
    imprinted_phase: float
    readout_mean: float
    readout_var: float
    slope: float
    amplification: float
    gain_db: float
    detection_noise_sigma: float
    readout_axis: tuple = (0.0, 0.0, 1.0)

    @property
    def gain(self) -> float:
        return 10.0 ** (self.gain_db / 10.0)

    def row(self) -> tuple:
        return (
            self.n_atoms,
            self.shear,
            self.imprinted_phase,
            self.slope,
            self.readout_var,
            self.detection_noise_sigma,
            self.gain_db,
        )


def echo_state(
    n_atoms: int,
    shear: float,
    phase: float,
    imprint_axis=Y_AXIS,
    mismatch: float = 0.0,
) -> DickeState:
    """Final state of the twist / imprint / untwist sequence."""
    if n_atoms < 2:
        raise ValueError("the echo sequence needs at least two atoms")
    if shear < 0:
        raise ValueError("shear must be non-negative")
    state = oat_state(n_atoms, shear)
    if phase != 0.0:
        state = rotate(state, imprint_axis, phase)
    return oat_evolve(state, -(1.0 + mismatch) * shear)


@lru_cache(maxsize=512)
def _readout_geometry(n_atoms, shear, axis_key, mismatch, step):
    """Readout direction and signed slope at ``phi = 0``."""
    axis = np.array(axis_key)
    plus = mean_spin(echo_state(n_atoms, shear, step, axis, mismatch))
    minus = mean_spin(echo_state(n_atoms, shear, -step, axis, mismatch))
    center = mean_spin(echo_state(n_atoms, shear, 0.0, axis, mismatch))
    deriv = (plus - minus) / (2.0 * step)
    norm0 = np.linalg.norm(center)
    if norm0 > 0:
        unit = center / norm0
        deriv = deriv - (deriv @ unit) * unit
    slope = float(np.linalg.norm(deriv))
    if slope == 0.0:
        return np.array([0.0, 0.0, 1.0]), 0.0
    return deriv / slope, slope


def readout_geometry(n_atoms: int, shear: float, imprint_axis=Y_AXIS, mismatch: float = 0.0, step: float = FD_STEP):
    """Readout unit vector ``r`` and slope ``|d<S.r>/dphi|`` at ``phi -> 0``.

    The derivative is a centered finite difference with step ``step``; only
    its component transverse to the final mean spin is kept.
    """
    key = tuple(float(v) for v in np.asarray(imprint_axis, dtype=float))
    r, slope = _readout_geometry(int(n_atoms), float(shear), key, float(mismatch), float(step))
    return r.copy(), slope


def satin_run(
    n_atoms: int,
    shear: float,
    phase: float,
    detection_noise_sigma: float = 0.0,
    imprint_axis=Y_AXIS,
    mismatch: float = 0.0,
) -> SatinResult:
    """Run the echo sequence for one imprinted phase.

    The slope, readout direction and variance entering the gain are taken at
    ``phi -> 0`` (the operating point of the linear estimator); the reported
    ``readout_mean`` is the signal ``<S.r>`` at the requested ``phase``.

    Parameters
    ----------
    detection_noise_sigma : float
        Standard deviation of additive readout noise, in units of spin.
    mismatch : float
        Fractional error ``eps`` of the backward shear, ``-(1+eps) chi t``.
    """
    if detection_noise_sigma < 0:
        raise ValueError("detection noise must be non-negative")
    r, slope = readout_geometry(n_atoms, shear, imprint_axis, mismatch)
    final = echo_state(n_atoms, shear, phase, imprint_axis, mismatch)
    signal = float(mean_spin(final) @ r)
    at_zero = echo_state(n_atoms, shear, 0.0, imprint_axis, mismatch)
    var = float(r @ covariance(at_zero) @ r)
    total = var + detection_noise_sigma**2
    gain = slope**2 / (n_atoms * total) if total > 0 else math.inf
    return SatinResult(
        n_atoms=n_atoms,
        shear=shear,
        imprinted_phase=phase,
        readout_mean=signal,
        readout_var=var,
        slope=slope,
        amplification=slope / (n_atoms / 2.0),
        gain_db=10.0 * math.log10(gain) if gain > 0 else -math.inf,
        detection_noise_sigma=detection_noise_sigma,
        readout_axis=tuple(float(v) for v in r),
    )


def satin_gain(n_atoms: int, shear: float, detection_noise_sigma: float = 0.0, **kwargs) -> float:
    """Linear gain of the echo protocol at ``phi -> 0``."""
    return satin_run(n_atoms, shear, 0.0, detection_noise_sigma, **kwargs).gain


def satin_optimal_shear(
    n_atoms: int,
    detection_noise_sigma: float = 0.0,
    points: int = 96,
    rtol: float = 1e-4,
    **kwargs,
) -> SatinResult:
    """Shear maximizing the echo gain: log-spaced scan plus golden refinement."""
    grid = np.geomspace(min(1e-3, 0.05 / n_atoms), math.pi / 4, points)
    gains = np.array([satin_gain(n_atoms, s, detection_noise_sigma, **kwargs) for s in grid])
    k = int(np.argmax(gains))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
    best, _ = golden_section_min(
        lambda s: -satin_gain(n_atoms, s, detection_noise_sigma, **kwargs), lo, hi, rtol=rtol
    )
    if satin_gain(n_atoms, best, detection_noise_sigma, **kwargs) < gains[k]:
        best = float(grid[k])
    return satin_run(n_atoms, float(best), 0.0, detection_noise_sigma, **kwargs)


def satin_gain_curve(n_list, detection_noise_sigma=0.0) -> list[tuple[int, float]]:
    """Optimal-shear echo gain for each ``N``.

    ``detection_noise_sigma`` is either a number or a callable ``N -> sigma``
    (for example ``lambda n: sqrt(n)/2`` for SQL-scale detection noise).
    """
    out = []
    for n in n_list:
        if n < 2:
            raise ValueError("every N must be >= 2")
        sigma = detection_noise_sigma(n) if callable(detection_noise_sigma) else detection_noise_sigma
        out.append((int(n), satin_optimal_shear(int(n), sigma).gain_db))
    return out


def direct_readout_gain(n_atoms: int, shear: float, detection_noise_sigma: float = 0.0) -> float:
    """Gain of a twisted state read out directly along its squeezed quadrature.

    ``G = |<S>|^2 / (N (Var_min + sigma^2))`` with no reversal step.
    """
    try:
        mom = moments(oat_state(n_atoms, shear))
    except FrameUndefinedError:
        return 0.0
    return mom.mean_length**2 / (n_atoms * (mom.var_min + detection_noise_sigma**2))


def direct_readout_optimal(n_atoms: int, detection_noise_sigma: float = 0.0, points: int = 96):
    """Best direct-readout gain over a log-spaced shear scan with golden refinement."""
    grid = np.geomspace(min(1e-3, 0.01 / n_atoms), math.pi / 4, points)
    gains = np.array([direct_readout_gain(n_atoms, s, detection_noise_sigma) for s in grid])
    k = int(np.argmax(gains))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
    best, neg = golden_section_min(lambda s: -direct_readout_gain(n_atoms, s, detection_noise_sigma), lo, hi)
    if -neg < gains[k]:
        return float(grid[k]), float(gains[k])
    return float(best), float(-neg)


def echo_fidelity(n_atoms: int, shear: float, perturbation: float, axis=Y_AXIS, mismatch: float = 0.0) -> float:
    """``|<CSS| U(-chi t) R(phi) U(chi t) |CSS>|^2`` for a rotation perturbation."""
    initial = css(n_atoms, math.pi / 2, 0.0)
    final = echo_state(n_atoms, shear, perturbation, axis, mismatch)
    return min(initial.fidelity(final), 1.0)
