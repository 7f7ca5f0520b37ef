"""Decoherence channels and decoherence-limited gain ceilings.

Two levels of description are provided:

* an exact collective-dephasing channel on Dicke density matrices, limited to
  small ensembles and used to validate moment-level results;
* a moment-level model for individual-atom dephasing and atom loss, which
  cannot be represented inside the symmetric subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dicke import DickeState, m_values, moments, spin_operators

MAX_DENSITY_ATOMS = 64
TRACE_TOL = 1e-10
HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class DickeDensityMatrix:
    n_atoms: int
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        dim = self.n_atoms + 1
        if self.n_atoms < 1 or rho.shape != (dim, dim):
            raise ValueError(f"density matrix must be {dim}x{dim}")
        if self.n_atoms > MAX_DENSITY_ATOMS:
            raise ValueError(f"density matrices are limited to N <= {MAX_DENSITY_ATOMS}")
        if abs(np.trace(rho) - 1.0) > TRACE_TOL:
            raise ValueError("density matrix must have unit trace")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
            raise ValueError("density matrix must be Hermitian")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_state(cls, state: DickeState) -> "DickeDensityMatrix":
        return cls(state.n_atoms, np.outer(state.amps, state.amps.conj()))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho)[0])

    def expect(self, matrix: np.ndarray) -> complex:
        return complex(np.trace(self.rho @ matrix))

    def mean_spin(self) -> np.ndarray:
        ops = spin_operators(self.n_atoms)
        return np.array([self.expect(ops[k].matrix).real for k in ("Sx", "Sy", "Sz")])

    def contrast(self) -> float:
        return float(np.linalg.norm(self.mean_spin()) / (self.n_atoms / 2.0))


def collective_dephase(rho: DickeDensityMatrix, rate: float, time: float) -> DickeDensityMatrix:
    """Collective dephasing: ``rho_mm' -> rho_mm' exp(-rate t (m - m')^2 / 2)``."""
    if rate < 0 or time < 0:
        raise ValueError("rate and time must be non-negative")
    m = m_values(rho.n_atoms)
    damp = np.exp(-0.5 * rate * time * (m[:, None] - m[None, :]) ** 2)
    out = rho.rho * damp
    return DickeDensityMatrix(rho.n_atoms, 0.5 * (out + out.conj().T))


@dataclass(frozen=True)
class SpinMoments:
    """Moment-level summary of a collective spin.

    Variances are in spin units squared; ``mean_length`` is ``|<S>|``.
    ``n_atoms`` may be fractional after loss (expected survivor number).
    """

    n_atoms: float
    mean_length: float
    var_min: float
    var_max: float
    var_parallel: float = 0.0

    @classmethod
    def from_state(cls, state: DickeState) -> "SpinMoments":
        mom = moments(state)
        return cls(float(state.n_atoms), mom.mean_length, mom.var_min, mom.var_max, mom.var_parallel)

    @classmethod
    def coherent(cls, n_atoms: float) -> "SpinMoments":
        return cls(float(n_atoms), n_atoms / 2.0, n_atoms / 4.0, n_atoms / 4.0, 0.0)

    @classmethod
    def from_xi(cls, n_atoms: float, xi_minus_sq: float, xi_plus_sq: float, contrast: float = 1.0):
        s = n_atoms / 2.0
        return cls(float(n_atoms), contrast * s, xi_minus_sq * s / 2.0, xi_plus_sq * s / 2.0, 0.0)

    @property
    def spin(self) -> float:
        return self.n_atoms / 2.0

    @property
    def contrast(self) -> float:
        return self.mean_length / self.spin if self.spin > 0 else 0.0

    @property
    def xi_minus_sq(self) -> float:
        return 2.0 * self.var_min / self.spin

    @property
    def xi_plus_sq(self) -> float:
        return 2.0 * self.var_max / self.spin

    @property
    def wineland_inv_sq(self) -> float:
        """Gain ``C^2 / xi_-^2`` referenced to the surviving atom number."""
        return self.mean_length**2 / (self.n_atoms * self.var_min)


def moment_decoherence(
    mom: SpinMoments,
    gamma_nat: float,
    gamma_deph: float,
    gamma_loss: float,
    tau: float,
) -> SpinMoments:
    """Individual decoherence and binomial atom loss over a Ramsey time ``tau``.

    Loss is applied first: survivors ``p = exp(-gamma_loss tau)`` form a
    binomial sample, so a collective variance ``v`` becomes
    ``p^2 v + p (1-p) N/4`` and the mean spin shrinks by ``p``.  Dephasing at
    ``Gamma = gamma_nat + gamma_deph`` then scales the mean spin by
    ``exp(-Gamma tau)`` and relaxes every variance toward the coherent value
    of the survivors, ``v -> v e^{-2 Gamma tau} + (S'/2)(1 - e^{-2 Gamma tau})``
    with ``S' = p N / 2``.
    """
    for name, val in (("gamma_nat", gamma_nat), ("gamma_deph", gamma_deph), ("gamma_loss", gamma_loss), ("tau", tau)):
        if val < 0:
            raise ValueError(f"{name} must be non-negative")
    n = mom.n_atoms
    p = math.exp(-gamma_loss * tau)
    shot = p * (1.0 - p) * n / 4.0

    def lose(v):
        return p * p * v + shot

    n_new = p * n
    s_new = n_new / 2.0
    decay = math.exp(-(gamma_nat + gamma_deph) * tau)
    relax = decay * decay

    def dephase(v, target):
        return v * relax + target * (1.0 - relax)

    var_min = dephase(lose(mom.var_min), s_new / 2.0)
    var_max = dephase(lose(mom.var_max), s_new / 2.0)
    # the longitudinal variance relaxes toward N'/4 as well (fully mixed single atoms)
    var_par = dephase(lose(mom.var_parallel), n_new / 4.0)
    return replace(
        mom,
        n_atoms=n_new,
        mean_length=mom.mean_length * p * decay,
        var_min=var_min,
        var_max=var_max,
        var_parallel=var_par,
    )


@dataclass(frozen=True)
class GainCeiling:
    n_atoms: float
    tau: float
    gamma_total: float
    eta: float
    g_max: float
    coherence: str = "linewidth"

    @property
    def g_max_db(self) -> float:
        return 10.0 * math.log10(self.g_max)

    @property
    def plateau(self) -> float:
        return _plateau(self.eta, self.coherence)


def _plateau(eta: float, coherence: str) -> float:
    if eta >= 1.0:
        return math.inf
    if coherence == "linewidth":
        return eta / (1.0 - eta)
    if coherence == "amplitude":
        return eta * eta / (1.0 - eta * eta)
    raise ValueError("coherence must be 'linewidth' or 'amplitude'")


def gain_ceiling(
    n_atoms: float,
    tau: float,
    gamma_nat: float = 0.0,
    gamma_deph: float = 0.0,
    gamma_loss: float = 0.0,
    coherence: str = "linewidth",
) -> GainCeiling:
    """Largest gain over the SQL allowed by uncorrelated decoherence.

    ``g_max = min(N, B)`` with ``eta = exp(-Gamma_tot tau)``.  The plateau
    ``B`` is the uncorrelated-dephasing bound ``c^2 / (1 - c^2)`` for a
    single-atom coherence ``c``.  With ``coherence="linewidth"`` the rates are
    read as linewidths, so the coherence amplitude decays at half the rate,
    ``c^2 = eta`` and ``B = eta / (1 - eta)``.  ``coherence="amplitude"`` uses
    ``c = eta`` and ``B = eta^2 / (1 - eta^2)``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    for val in (gamma_nat, gamma_deph, gamma_loss):
        if val < 0:
            raise ValueError("rates must be non-negative")
    gamma = gamma_nat + gamma_deph + gamma_loss
    eta = math.exp(-gamma * tau)
    g_max = min(float(n_atoms), _plateau(eta, coherence))
    return GainCeiling(float(n_atoms), tau, gamma, eta, g_max, coherence)


def crossover_atom_number(tau: float, gamma_total: float, coherence: str = "linewidth") -> float:
    """Atom number at which the Heisenberg cap meets the dephasing plateau."""
    return _plateau(math.exp(-gamma_total * tau), coherence)


def ceiling_table(n_list, tau_list, rates: dict, coherence: str = "linewidth") -> list[tuple[float, float, float]]:
    """Rows ``(N, tau, g_max_db)`` for every combination."""
    rows = []
    for tau in tau_list:
        for n in n_list:
            c = gain_ceiling(n, tau, coherence=coherence, **rates)
            rows.append((float(n), float(tau), c.g_max_db))
    return rows
