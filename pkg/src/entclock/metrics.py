"""Metrological figures of merit: QFI, squeezing parameters, gain and scaling fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dicke import CollectiveOperator, DickeState, covariance, moments

REPORT_COLUMNS = (
    "N",
    "xi_minus_sq",
    "xi_plus_sq",
    "contrast",
    "wineland_inv_sq",
    "qfi",
    "gain_db",
)


def to_db(ratio: float) -> float:
    return 10.0 * math.log10(ratio)


def from_db(db: float) -> float:
    return 10.0 ** (db / 10.0)


def averaging_time_factor(gain_db: float) -> float:
    """Reduction of the averaging time needed to reach a fixed instability.

    The instability scales as ``1/sqrt(N G T)`` so the factor is ``G`` itself.
    """
    return from_db(gain_db)


def cramer_rao_bound(qfi: float) -> float:
    """Smallest single-shot phase uncertainty ``1/sqrt(F_Q)``."""
    if qfi <= 0:
        raise ValueError("QFI must be positive")
    return 1.0 / math.sqrt(qfi)


def sql_phase_uncertainty(n_atoms: int) -> float:
    return 1.0 / math.sqrt(n_atoms)


def qfi_pure(state: DickeState, generator: CollectiveOperator | np.ndarray) -> float:
    """``4 Var(G)`` for a pure state and Hermitian generator ``G``."""
    mat = generator.matrix if isinstance(generator, CollectiveOperator) else np.asarray(generator)
    if mat.shape != (state.n_atoms + 1, state.n_atoms + 1):
        raise ValueError("generator dimension does not match the state")
    if not np.allclose(mat, mat.conj().T, atol=1e-12, rtol=0.0):
        raise ValueError("generator must be Hermitian")
    g_psi = mat @ state.amps
    mean = np.vdot(state.amps, g_psi).real
    second = np.vdot(g_psi, g_psi).real
    return float(max(4.0 * (second - mean * mean), 0.0))


def qfi_linear_max(state: DickeState) -> float:
    """QFI maximized over linear generators ``n.S``: ``4 lambda_max(cov)``."""
    return float(4.0 * np.linalg.eigvalsh(covariance(state))[-1])


def qfi_mixed(rho: np.ndarray, generator: CollectiveOperator | np.ndarray, cutoff: float = 1e-12) -> float:
    """QFI of a density matrix from its eigendecomposition.

    ``F = 2 sum_{ij} (p_i - p_j)^2 / (p_i + p_j) |<i|G|j>|^2``; pairs with
    ``p_i + p_j < cutoff`` are skipped.
    """
    mat = generator.matrix if isinstance(generator, CollectiveOperator) else np.asarray(generator)
    if not np.allclose(mat, mat.conj().T, atol=1e-12, rtol=0.0):
        raise ValueError("generator must be Hermitian")
    p, vecs = np.linalg.eigh(rho)
    g = vecs.conj().T @ mat @ vecs
    psum = p[:, None] + p[None, :]
    pdiff = p[:, None] - p[None, :]
    mask = psum >= cutoff
    terms = np.zeros_like(psum)
    terms[mask] = pdiff[mask] ** 2 / psum[mask]
    return float(2.0 * np.sum(terms * np.abs(g) ** 2))


@dataclass(frozen=True)
class SqueezingReport:
    n_atoms: int
    xi_minus_sq: float
    xi_plus_sq: float
    contrast: float
    wineland_inv_sq: float
    qfi: float
    gain_db: float
    angle: float = 0.0

    def row(self) -> tuple:
        return (
            self.n_atoms,
            self.xi_minus_sq,
            self.xi_plus_sq,
            self.contrast,
            self.wineland_inv_sq,
            self.qfi,
            self.gain_db,
        )

    def as_dict(self) -> dict:
        return asdict(self)


def squeezing_report(state: DickeState) -> SqueezingReport:
    """Squeezing parameters of a pure state.

    ``xi^2 = (2/S) (Delta S)^2`` for the extreme transverse quadratures,
    ``C = |<S>|/S`` and the Wineland gain ``C^2 / xi_-^2``.  The QFI entry is
    maximized over linear generators.
    """
    mom = moments(state)  # raises FrameUndefinedError for zero mean spin
    s = state.spin
    xi_minus = 2.0 * mom.var_min / s
    xi_plus = 2.0 * mom.var_max / s
    contrast = min(mom.mean_length / s, 1.0)
    wineland = contrast**2 / xi_minus
    return SqueezingReport(
        n_atoms=state.n_atoms,
        xi_minus_sq=xi_minus,
        xi_plus_sq=xi_plus,
        contrast=contrast,
        wineland_inv_sq=wineland,
        qfi=qfi_linear_max(state),
        gain_db=to_db(wineland),
        angle=mom.angle,
    )


def gaussian_report(n_atoms: int, xi_minus_sq: float, xi_plus_sq: float, contrast: float = 1.0) -> SqueezingReport:
    """Report for a moment-level Gaussian state (no underlying Dicke vector).

    The QFI is the largest transverse variance times four, ``N xi_+^2``.
    """
    wineland = contrast**2 / xi_minus_sq
    return SqueezingReport(
        n_atoms=n_atoms,
        xi_minus_sq=xi_minus_sq,
        xi_plus_sq=xi_plus_sq,
        contrast=contrast,
        wineland_inv_sq=wineland,
        qfi=n_atoms * max(xi_plus_sq, xi_minus_sq),
        gain_db=to_db(wineland),
    )


def gain_bound_check(report: SqueezingReport, tol: float = 1e-9) -> bool:
    """True iff the gain respects ``G <= F_Q / N``."""
    bound = report.qfi / report.n_atoms
    return bool(report.wineland_inv_sq <= bound + tol * max(1.0, bound))


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    offset_db: float
    residual_db: float
    n_points: int


def heisenberg_scaling_fit(points) -> ScalingFit:
    """Fit ``log10 G = exponent * log10 N + intercept`` by least squares.

    ``offset_db`` is the mean distance below the Heisenberg limit
    ``10 log10 N - gain_db``; ``residual_db`` is the rms fit residual in dB.
    """
    pts = [(float(n), float(g)) for n, g in points]
    if len(pts) < 3:
        raise ValueError("need at least three (N, gain_db) points")
    n = np.array([p[0] for p in pts])
    if np.any(n <= 0):
        raise ValueError("atom numbers must be positive")
    if len(np.unique(n)) != len(n):
        raise ValueError("atom numbers must be distinct")
    gain_db = np.array([p[1] for p in pts])
    x = np.log10(n)
    y = gain_db / 10.0
    slope, intercept = np.polyfit(x, y, 1)
    resid = 10.0 * (y - (slope * x + intercept))
    return ScalingFit(
        exponent=float(slope),
        intercept=float(intercept),
        offset_db=float(np.mean(10.0 * x - gain_db)),
        residual_db=float(np.sqrt(np.mean(resid**2))),
        n_points=len(pts),
    )
