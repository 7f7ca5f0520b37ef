"""Collective spin states of N spin-1/2 atoms in the symmetric (Dicke) subspace.

States are stored as complex amplitudes over the magnetic quantum numbers
``m = -S, ..., S`` with ``S = N/2``.  Index 0 of the amplitude vector is
``m = -S``; this ordering is also used by the text dump format.

Rotations about the z axis are diagonal phases.  Rotations about any other
axis use the eigendecomposition of ``n . S`` which, after a diagonal gauge
transformation, is a real symmetric tridiagonal matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln, xlogy

NORM_TOL = 1e-12
AXIS_TOL = 1e-9

X_AXIS = np.array([1.0, 0.0, 0.0])
Y_AXIS = np.array([0.0, 1.0, 0.0])
Z_AXIS = np.array([0.0, 0.0, 1.0])


class FrameUndefinedError(ValueError):
    """Raised when the mean spin vanishes and no transverse frame exists."""


def m_values(n_atoms: int) -> np.ndarray:
    """Magnetic quantum numbers ``-S..S`` in storage order."""
    return np.arange(n_atoms + 1) - n_atoms / 2.0


def ladder_coefficients(n_atoms: int) -> np.ndarray:
    """``<m+1|S+|m> = sqrt(S(S+1) - m(m+1))`` for ``m = -S..S-1``."""
    s = n_atoms / 2.0
    m = m_values(n_atoms)[:-1]
    return np.sqrt(s * (s + 1.0) - m * (m + 1.0))


@dataclass(frozen=True)
class DickeState:
    """Pure symmetric state of ``n_atoms`` spins.

    The amplitude array is copied and marked read-only, so instances can be
    shared freely between workers.
    """

    n_atoms: int
    amps: np.ndarray = field(repr=False)

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms!r}")
        amps = np.array(self.amps, dtype=complex)
        if amps.shape != (self.n_atoms + 1,):
            raise ValueError(
                f"amplitude vector must have length {self.n_atoms + 1}, got shape {amps.shape}"
            )
        norm = np.vdot(amps, amps).real
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"state is not normalized (norm^2 = {norm:.12g})")
        if abs(norm - 1.0) > 1e-14:
            # exact inputs (e.g. a reloaded dump) keep their bits
            amps = amps / np.sqrt(norm)
        amps.setflags(write=False)
        object.__setattr__(self, "n_atoms", int(self.n_atoms))
        object.__setattr__(self, "amps", amps)

    @property
    def spin(self) -> float:
        return self.n_atoms / 2.0

    @property
    def m(self) -> np.ndarray:
        return m_values(self.n_atoms)

    @property
    def populations(self) -> np.ndarray:
        """Sz distribution ``|amps|^2``."""
        return np.abs(self.amps) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amps, self.amps).real))

    def overlap(self, other: "DickeState") -> complex:
        """``<self|other>``."""
        _check_same_size(self, other)
        return complex(np.vdot(self.amps, other.amps))

    def fidelity(self, other: "DickeState") -> float:
        return abs(self.overlap(other)) ** 2

    def expect(self, matrix: np.ndarray) -> complex:
        return complex(np.vdot(self.amps, matrix @ self.amps))


def _check_same_size(a: DickeState, b: DickeState):
    if a.n_atoms != b.n_atoms:
        raise ValueError(f"atom numbers differ: {a.n_atoms} vs {b.n_atoms}")


# ---------------------------------------------------------------------------
# Collective operators


@dataclass(frozen=True)
class CollectiveOperator:
    """Dense collective operator in the Dicke basis."""

    matrix: np.ndarray = field(repr=False)
    label: str = "custom"

    @property
    def n_atoms(self) -> int:
        return self.matrix.shape[0] - 1

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.conj().T, atol=tol, rtol=0.0))


@lru_cache(maxsize=32)
def _spin_matrices(n_atoms: int):
    c = ladder_coefficients(n_atoms)
    s_plus = np.diag(c, -1).astype(complex)
    s_minus = s_plus.conj().T.copy()
    sx = 0.5 * (s_plus + s_minus)
    sy = -0.5j * (s_plus - s_minus)
    sz = np.diag(m_values(n_atoms)).astype(complex)
    for mat in (s_plus, s_minus, sx, sy, sz):
        mat.setflags(write=False)
    return sx, sy, sz, s_plus, s_minus


def spin_operators(n_atoms: int) -> dict[str, CollectiveOperator]:
    """Return ``Sx, Sy, Sz, S+, S-`` as dense operators keyed by label."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    sx, sy, sz, sp, sm = _spin_matrices(int(n_atoms))
    return {
        "Sx": CollectiveOperator(sx, "Sx"),
        "Sy": CollectiveOperator(sy, "Sy"),
        "Sz": CollectiveOperator(sz, "Sz"),
        "S+": CollectiveOperator(sp, "S+"),
        "S-": CollectiveOperator(sm, "S-"),
    }


def axis_operator(n_atoms: int, axis) -> CollectiveOperator:
    """``S_n = n . S`` for a unit vector ``n``."""
    n = _unit_axis(axis)
    sx, sy, sz, _, _ = _spin_matrices(int(n_atoms))
    return CollectiveOperator(n[0] * sx + n[1] * sy + n[2] * sz, "S_n")


# ---------------------------------------------------------------------------
# State constructors


def css(n_atoms: int, polar: float, azimuth: float) -> DickeState:
    """Coherent spin state pointing along ``(polar, azimuth)``.

    ``polar = 0`` is the fully polarized ``m = +S`` state.  Amplitudes are
    ``sqrt(C(N, S+m)) cos(polar/2)^(S+m) sin(polar/2)^(S-m) exp(-i m azimuth)``
    evaluated in log space so that large ``N`` does not overflow.
    """
    if int(n_atoms) != n_atoms or n_atoms < 1:
        raise ValueError(f"n_atoms must be a positive integer, got {n_atoms!r}")
    n_atoms = int(n_atoms)
    polar = float(polar) % (2 * np.pi)
    if polar > np.pi:
        polar, azimuth = 2 * np.pi - polar, azimuth + np.pi
    s = n_atoms / 2.0
    m = m_values(n_atoms)
    log_binom = gammaln(n_atoms + 1) - gammaln(s + m + 1) - gammaln(s - m + 1)
    with np.errstate(divide="ignore"):
        log_mag = (
            0.5 * log_binom
            + xlogy(s + m, np.cos(polar / 2.0))
            + xlogy(s - m, np.sin(polar / 2.0))
        )
    amps = np.exp(log_mag) * np.exp(-1j * m * azimuth)
    return DickeState(n_atoms, amps / np.linalg.norm(amps))


def ghz(n_atoms: int) -> DickeState:
    """``(|m=+S> + |m=-S>)/sqrt(2)``."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    amps = np.zeros(n_atoms + 1, dtype=complex)
    amps[0] = amps[-1] = 1.0 / np.sqrt(2.0)
    return DickeState(n_atoms, amps)


def dicke_basis_state(n_atoms: int, m: float) -> DickeState:
    idx = int(round(m + n_atoms / 2.0))
    if not 0 <= idx <= n_atoms or abs(idx - n_atoms / 2.0 - m) > 1e-12:
        raise ValueError(f"m = {m} is not a valid quantum number for N = {n_atoms}")
    amps = np.zeros(n_atoms + 1, dtype=complex)
    amps[idx] = 1.0
    return DickeState(n_atoms, amps)


# ---------------------------------------------------------------------------
# Dynamics


def _unit_axis(axis) -> np.ndarray:
    n = np.asarray(axis, dtype=float)
    if n.shape != (3,):
        raise ValueError("axis must be a 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > AXIS_TOL:
        raise ValueError(f"axis must be normalized within {AXIS_TOL}, |n| = {np.linalg.norm(n)!r}")
    return n


@lru_cache(maxsize=16)
def _axis_eigensystem(n_atoms: int, nz: float, nperp: float):
    """Eigen-decomposition of the gauge-transformed real tridiagonal ``n . S``."""
    m = m_values(n_atoms)
    if nperp == 0.0:
        return nz * m, None
    w, v = eigh_tridiagonal(nz * m, 0.5 * nperp * ladder_coefficients(n_atoms))
    w.setflags(write=False)
    v.setflags(write=False)
    return w, v


def axis_eigensystem(n_atoms: int, axis):
    """Return ``(eigenvalues, gauge, V)`` with ``n.S = G V diag(w) V^T G^*``.

    ``G`` is the diagonal gauge ``exp(-i m phi_n)`` (phi_n is the azimuth of
    the axis).  ``V`` is real orthogonal, or ``None`` for the z axis.
    """
    n = _unit_axis(axis)
    nperp = float(np.hypot(n[0], n[1]))
    if nperp < 1e-15:
        nperp = 0.0
    phi = float(np.arctan2(n[1], n[0])) if nperp else 0.0
    w, v = _axis_eigensystem(int(n_atoms), float(n[2]), nperp)
    gauge = np.exp(-1j * m_values(n_atoms) * phi)
    return w, gauge, v


def _rotate_amps(n_atoms: int, amps: np.ndarray, axis, angle: float) -> np.ndarray:
    w, gauge, v = axis_eigensystem(n_atoms, axis)
    if v is None:
        return amps * np.exp(-1j * angle * w)
    coeffs = v.T @ (np.conj(gauge) * amps)
    return gauge * (v @ (np.exp(-1j * angle * w) * coeffs))


def rotate(state: DickeState, axis, angle: float) -> DickeState:
    """Apply ``exp(-i angle n.S)``.

    The rotation is active: the mean spin vector is rotated by ``angle``
    about ``axis`` following the right-hand rule.
    """
    if angle == 0.0:
        _unit_axis(axis)
        return state
    amps = _rotate_amps(state.n_atoms, state.amps, axis, angle)
    return DickeState(state.n_atoms, amps)


def rotation_matrix(n_atoms: int, axis, angle: float) -> np.ndarray:
    """Dense unitary ``exp(-i angle n.S)``."""
    w, gauge, v = axis_eigensystem(n_atoms, axis)
    if v is None:
        return np.diag(np.exp(-1j * angle * w))
    core = (v * np.exp(-1j * angle * w)) @ v.T
    return gauge[:, None] * core * np.conj(gauge)[None, :]


def oat_evolve(state: DickeState, shear: float) -> DickeState:
    """One-axis twisting ``exp(-i shear Sz^2)``; ``shear`` is the product chi*t."""
    if not np.isfinite(shear):
        raise ValueError("shear must be finite")
    if shear == 0.0:
        return state
    m = state.m
    return DickeState(state.n_atoms, state.amps * np.exp(-1j * shear * m * m))


def readout_unitary_axis(direction) -> tuple[np.ndarray, float]:
    """Axis and angle of the rotation after which ``Sz`` reads ``S_direction``.

    With ``U = exp(-i angle a.S)`` one has ``U^dag Sz U = S_r``.
    """
    r = np.asarray(direction, dtype=float)
    r = r / np.linalg.norm(r)
    cross = np.cross(r, Z_AXIS)
    sin_a = np.linalg.norm(cross)
    cos_a = float(np.dot(r, Z_AXIS))
    if sin_a < 1e-15:
        return X_AXIS.copy(), (0.0 if cos_a > 0 else np.pi)
    return cross / sin_a, float(np.arctan2(sin_a, cos_a))


# ---------------------------------------------------------------------------
# Moments


def _raw_moments(amps: np.ndarray, n_atoms: int):
    s = n_atoms / 2.0
    m = m_values(n_atoms)
    c = ladder_coefficients(n_atoms)
    p = np.abs(amps) ** 2
    lower = amps[:-1]
    upper_conj = np.conj(amps[1:])
    s_plus = np.sum(c * upper_conj * lower)
    s_plus_sq = np.sum(c[:-1] * c[1:] * np.conj(amps[2:]) * amps[:-2]) if n_atoms >= 2 else 0.0
    sz = np.sum(p * m)
    sz2 = np.sum(p * m * m)
    # <{Sz, S+}>/2
    z_plus = 0.5 * np.sum((2.0 * m[:-1] + 1.0) * c * upper_conj * lower)
    casimir = s * (s + 1.0)
    xx = 0.5 * (s_plus_sq.real + casimir - sz2)
    yy = 0.5 * (-s_plus_sq.real + casimir - sz2)
    xy = 0.5 * s_plus_sq.imag
    mean = np.array([s_plus.real, s_plus.imag, sz])
    second = np.array(
        [
            [xx, xy, z_plus.real],
            [xy, yy, z_plus.imag],
            [z_plus.real, z_plus.imag, sz2],
        ]
    )
    return mean, second - np.outer(mean, mean)


def mean_spin(state: DickeState) -> np.ndarray:
    """``(<Sx>, <Sy>, <Sz>)``."""
    return _raw_moments(state.amps, state.n_atoms)[0]


def covariance(state: DickeState) -> np.ndarray:
    """Symmetrized 3x3 covariance ``<{S_i, S_j}>/2 - <S_i><S_j>``."""
    return _raw_moments(state.amps, state.n_atoms)[1]


def transverse_frame(mean: np.ndarray):
    """Return ``(n, e_pol, e_az)`` for a mean spin direction.

    ``e_az = z x n`` (the direction a z rotation moves the spin) and
    ``e_pol = n x e_az``.  For a spin along the z axis ``e_az`` is ``+y``.
    """
    length = np.linalg.norm(mean)
    if length < 1e-12:
        raise FrameUndefinedError("mean spin vanishes; quadrature frame is undefined")
    n = mean / length
    e_az = np.cross(Z_AXIS, n)
    if np.linalg.norm(e_az) < 1e-12:
        e_az = Y_AXIS.copy()
    e_az = e_az / np.linalg.norm(e_az)
    e_pol = np.cross(n, e_az)
    return n, e_pol, e_az


@dataclass(frozen=True)
class Moments:
    """Mean spin and transverse quadrature statistics.

    ``angle`` locates the squeezed quadrature ``cos(angle) e_pol +
    sin(angle) e_az`` in ``(-pi/2, pi/2]``.
    """

    n_atoms: int
    mean: np.ndarray
    cov3: np.ndarray
    transverse_cov: np.ndarray
    var_min: float
    var_max: float
    angle: float
    e_pol: np.ndarray
    e_az: np.ndarray

    @property
    def mean_length(self) -> float:
        return float(np.linalg.norm(self.mean))

    @property
    def direction(self) -> np.ndarray:
        return self.mean / self.mean_length

    @property
    def var_parallel(self) -> float:
        n = self.direction
        return float(n @ self.cov3 @ n)

    @property
    def min_direction(self) -> np.ndarray:
        return np.cos(self.angle) * self.e_pol + np.sin(self.angle) * self.e_az


def _diagonalize_2x2(a: float, b: float, c: float):
    mid = 0.5 * (a + b)
    radius = np.hypot(0.5 * (a - b), c)
    angle = 0.5 * np.arctan2(-2.0 * c, b - a)
    if angle <= -np.pi / 2:
        angle += np.pi
    return mid - radius, mid + radius, float(angle)


def moments(state: DickeState) -> Moments:
    """Mean spin, transverse covariance and its principal quadratures."""
    mean, cov = _raw_moments(state.amps, state.n_atoms)
    _, e_pol, e_az = transverse_frame(mean)
    basis = np.stack([e_pol, e_az])
    tcov = basis @ cov @ basis.T
    vmin, vmax, angle = _diagonalize_2x2(tcov[0, 0], tcov[1, 1], tcov[0, 1])
    return Moments(
        n_atoms=state.n_atoms,
        mean=mean,
        cov3=cov,
        transverse_cov=tcov,
        var_min=float(vmin),
        var_max=float(vmax),
        angle=angle,
        e_pol=e_pol,
        e_az=e_az,
    )


def variance(state: DickeState, axis) -> float:
    """Variance of ``n.S`` along a unit axis."""
    n = _unit_axis(axis)
    return float(n @ covariance(state) @ n)


def orient_squeezing(state: DickeState, target: str = "az") -> DickeState:
    """Rotate about the mean spin so the squeezed quadrature lies along ``e_az``.

    ``e_az`` is the direction a phase rotation about z displaces the spin,
    i.e. the Ramsey signal direction.  ``target="pol"`` aligns it with
    ``e_pol`` instead.
    """
    mom = moments(state)
    want = np.pi / 2 if target == "az" else 0.0
    delta = mom.angle - want
    return rotate(state, mom.direction, delta)


# ---------------------------------------------------------------------------
# Husimi Q function


@dataclass(frozen=True)
class HusimiGrid:
    """``Q(theta, phi) = |<CSS(theta, phi)|psi>|^2`` on a regular grid.

    ``q`` has shape ``(len(theta), len(phi))``.  The distribution is
    normalized with the measure ``(N+1)/(4 pi) dOmega``.
    """

    n_atoms: int
    theta: np.ndarray
    phi: np.ndarray
    q: np.ndarray

    def integral(self) -> float:
        """Quadrature of ``Q (N+1)/(4 pi) sin(theta) dtheta dphi``.

        Trapezoid in theta, periodic rectangle rule in phi.
        """
        dphi = 2 * np.pi / len(self.phi)
        ring = self.q.sum(axis=1) * dphi
        return float(trapezoid(ring * np.sin(self.theta), self.theta) * (self.n_atoms + 1) / (4 * np.pi))

    def peak(self):
        i, j = np.unravel_index(np.argmax(self.q), self.q.shape)
        return float(self.theta[i]), float(self.phi[j]), float(self.q[i, j])

    def rows(self) -> Iterable[tuple[float, float, float]]:
        for i, th in enumerate(self.theta):
            for j, ph in enumerate(self.phi):
                yield float(th), float(ph), float(self.q[i, j])


def husimi_q(state: DickeState, resolution: int, phi_resolution: int | None = None) -> HusimiGrid:
    """Evaluate the Husimi Q function on ``resolution`` polar angles in ``[0, pi]``.

    The azimuthal grid defaults to ``2 * resolution`` points in ``[0, 2 pi)``
    so that both axes have the same angular spacing.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8 points per axis")
    n_phi = phi_resolution or 2 * (resolution - 1)
    if n_phi < 8:
        raise ValueError("phi resolution must be at least 8 points")
    n = state.n_atoms
    s = n / 2.0
    m = state.m
    theta = np.linspace(0.0, np.pi, resolution)
    phi = np.arange(n_phi) * (2 * np.pi / n_phi)
    log_binom = 0.5 * (gammaln(n + 1) - gammaln(s + m + 1) - gammaln(s - m + 1))
    with np.errstate(divide="ignore"):
        log_w = (
            log_binom[None, :]
            + xlogy((s + m)[None, :], np.cos(theta / 2)[:, None])
            + xlogy((s - m)[None, :], np.sin(theta / 2)[:, None])
        )
    weights = np.exp(log_w)
    # <CSS(theta, phi)|psi> = sum_m w_m(theta) exp(+i m phi) a_m
    phases = np.exp(1j * np.outer(m, phi))
    amp = (weights * state.amps[None, :]) @ phases
    q = np.abs(amp) ** 2
    return HusimiGrid(n, theta, phi, q)


# ---------------------------------------------------------------------------
# Text formats


def dump_state(state: DickeState) -> str:
    """Plain-text dump: ``dicke N=<n>`` then one ``m re im`` line per level."""
    lines = [f"dicke N={state.n_atoms}"]
    for m, a in zip(state.m, state.amps):
        lines.append(f"{m:g} {float(a.real)!r} {float(a.imag)!r}")
    return "\n".join(lines) + "\n"


def load_state(text: str) -> DickeState:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("dicke N="):
        raise ValueError("missing 'dicke N=<n>' header")
    n = int(lines[0].split("=", 1)[1])
    body = lines[1:]
    if len(body) != n + 1:
        raise ValueError(f"expected {n + 1} amplitude lines, found {len(body)}")
    amps = np.empty(n + 1, dtype=complex)
    expected_m = m_values(n)
    for k, ln in enumerate(body):
        m_str, re_str, im_str = ln.split()
        if abs(float(m_str) - expected_m[k]) > 1e-9:
            raise ValueError(f"line {k + 2}: m = {m_str} out of order")
        amps[k] = complex(float(re_str), float(im_str))
    return DickeState(n, amps)
