"""Monte Carlo Ramsey clock with a closed-loop frequency servo.

Each cycle lasts ``T_c = tau + T_dead``.  The LO fractional-frequency noise
``y(t)`` is synthesized on a fine grid ``dt = tau / substeps``; the phase
accumulated during the Ramsey window is

    phi_k = 2 pi f_a (int_window y dt + tau s_k)

where ``s_k`` is the fractional steering applied to the LO.  A projective
readout is sampled from the exact outcome distribution of the input state
rotated by ``phi_k`` (tabulated on a fine periodic phase grid), the phase is
estimated, and the integrator updates ``s_{k+1} = s_k - g phi_hat / (2 pi f_a tau)``.
The per-cycle frequency of the steered LO, ``y_k + s_k``, feeds the Allan
deviation.  Dead time leaves part of the LO noise unobserved, which is how
the Dick effect appears.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import binom

from . import _servo
from .allan import AllanAccumulator, AllanSeries, octave_factors
from .decoherence import SpinMoments, moment_decoherence
from .dicke import X_AXIS, Y_AXIS, axis_eigensystem, m_values, moments, readout_unitary_axis, rotation_matrix
from .noise import F_A_DEFAULT, LOSynth, NoiseModel
from .seeding import task_seed
from .squeezing import oat_state

DEFAULT_PHASE_POINTS = 8192
MAX_TABLE_ENTRIES = 1 << 24
_KINDS = {"css": 0, "oat": 1, "measurement": 1, "satin": 1, "gaussian": 2}
_STATE_RE = re.compile(r"^\s*([a-z]+)\s*(?:\(([^()]*)\))?\s*$")


class ServoAbort(RuntimeError):
    """Raised by callers that require a complete record when lock is lost."""


@dataclass(frozen=True)
class InputState:
    """Clock input state.

    ``css``; ``oat(chi_t)``; ``measurement(I)``; ``satin(chi_t)``;
    ``gaussian(sq_db, antisq_db)``.
    """

    kind: str = "css"
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown input state {self.kind!r}")
        if len(self.params) != _KINDS[self.kind]:
            raise ValueError(f"{self.kind} takes {_KINDS[self.kind]} parameter(s)")
        params = tuple(float(p) for p in self.params)
        if any(not math.isfinite(p) for p in params):
            raise ValueError("state parameters must be finite")
        if self.kind in ("oat", "satin", "measurement") and params[0] < 0:
            raise ValueError(f"{self.kind} parameter must be non-negative")
        if self.kind == "gaussian" and (params[0] < 0 or params[1] < 0):
            raise ValueError("gaussian(sq_db, antisq_db) needs non-negative dB values")
        object.__setattr__(self, "params", params)

    @classmethod
    def parse(cls, text: str) -> "InputState":
        match = _STATE_RE.match(text)
        if not match:
            raise ValueError(f"cannot parse input state {text!r}")
        kind, args = match.groups()
        params = () if not args else tuple(float(a) for a in args.split(","))
        return cls(kind, params)

    def __str__(self) -> str:
        if not self.params:
            return self.kind
        return f"{self.kind}({', '.join(repr(p) for p in self.params)})"


@dataclass(frozen=True)
class ClockConfig:
    """Clock operating parameters.

    Times are in seconds, ``f_a`` in Hz.  ``qnd_resolution`` (in units of the
    coherent-state ``Sz`` standard deviation ``sqrt(N)/2``) enables a weak
    pre-measurement each cycle; ``None`` disables it.  ``detection_sigma`` is
    additive Gaussian detection noise on the final ``Sz`` count, in spin
    units (``0`` means atom-resolved detection).
    """

    n_atoms: int
    ramsey_time: float
    dead_time: float = 0.0
    servo_gain: float = 0.5
    input_state: InputState = field(default_factory=InputState)
    n_cycles: int = 1000
    seed: int = 0
    f_a: float = F_A_DEFAULT
    substeps: int = 16
    n_replicas: int = 1
    qnd_resolution: float | None = None
    lock_loss_cycles: int = 50
    phase_points: int = DEFAULT_PHASE_POINTS
    detection_sigma: float = 0.0

    def __post_init__(self):
        if isinstance(self.input_state, str):
            object.__setattr__(self, "input_state", InputState.parse(self.input_state))
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if not self.ramsey_time > 0:
            raise ValueError("ramsey_time must be positive")
        if self.dead_time < 0:
            raise ValueError("dead_time must be non-negative")
        if not 0 < self.servo_gain < 2:
            raise ValueError("servo_gain must lie in (0, 2) for a stable integrator")
        if self.n_cycles < 2:
            raise ValueError("n_cycles must be >= 2")
        if self.f_a <= 0:
            raise ValueError("f_a must be positive")
        if self.substeps < 1 or self.n_replicas < 1:
            raise ValueError("substeps and n_replicas must be >= 1")
        if self.qnd_resolution is not None and self.qnd_resolution < 1:
            raise ValueError("qnd_resolution is in SQL units and must be >= 1")
        if self.phase_points < 64:
            raise ValueError("phase_points must be >= 64")
        if not (self.detection_sigma >= 0 and math.isfinite(self.detection_sigma)):
            raise ValueError("detection_sigma must be finite and non-negative")

    @property
    def dt(self) -> float:
        return self.ramsey_time / self.substeps

    @property
    def dead_steps(self) -> int:
        return int(round(self.dead_time / self.dt))

    @property
    def cycle_time(self) -> float:
        """Effective cycle time after rounding dead time to the fine grid."""
        return (self.substeps + self.dead_steps) * self.dt

    @property
    def duty_cycle(self) -> float:
        return self.ramsey_time / self.cycle_time

    @property
    def phase_scale(self) -> float:
        """Phase per unit fractional frequency, ``2 pi f_a tau``."""
        return 2.0 * math.pi * self.f_a * self.ramsey_time


def dead_time_from_duty(ramsey_time: float, duty_cycle: float) -> float:
    if not 0 < duty_cycle <= 1:
        raise ValueError("duty cycle must lie in (0, 1]")
    return ramsey_time * (1.0 / duty_cycle - 1.0)


# ---------------------------------------------------------------------------
# Readout models


@dataclass
class ReadoutModel:
    """Outcome model of the final projective measurement as a function of phase.

    ``kind`` is ``"dicke"`` (exact pure state), ``"binomial"`` (CSS with
    individual contrast decay) or ``"gaussian"`` (moment level, on the integer
    ``m`` lattice).
    """

    kind: str
    n_atoms: int
    length: float
    values: np.ndarray
    estimator: str = "arcsin"
    contrast: float = 1.0
    var_az: float = 0.0
    var_par: float = 0.0
    coeffs: np.ndarray | None = None
    post: np.ndarray | None = None
    label: str = ""
    detection_sigma: float = 0.0
    _response: tuple | None = None

    # -- exact distributions -------------------------------------------------
    def probabilities(self, phis) -> np.ndarray:
        """Outcome probabilities, shape ``(len(phis), n_out)``."""
        phis = np.atleast_1d(np.asarray(phis, dtype=float))
        if self.kind == "binomial":
            p = 0.5 * (1.0 + self.contrast * np.sin(phis))
            k = np.arange(self.n_atoms + 1)
            out = binom.pmf(k[None, :], self.n_atoms, np.clip(p, 0.0, 1.0)[:, None])
        elif self.kind == "gaussian":
            mean = self.length * np.sin(phis)
            var = self.var_az * np.cos(phis) ** 2 + self.var_par * np.sin(phis) ** 2
            out = _lattice_gaussian(self.values, mean, var)
        else:
            m = m_values(self.n_atoms)
            phases = np.exp(-1j * np.outer(phis, m))
            amps = (phases * self.coeffs[None, :]) @ self.post.T
            out = np.abs(amps) ** 2
        return out / out.sum(axis=1, keepdims=True)

    def grid_probabilities(self, n_phi: int) -> np.ndarray:
        """Probabilities on ``phi_i = -pi + 2 pi i / n_phi``."""
        phis = phase_grid(n_phi)
        if self.kind != "dicke":
            return self.probabilities(phis)
        # A_k(phi_i) = sum_j M_kj c_j e^{-i phi_i m_j} is a DFT over j up to a row phase
        m = m_values(self.n_atoms)
        b = self.post * (self.coeffs * np.exp(1j * np.pi * m))[None, :]
        out = np.empty((n_phi, b.shape[0]))
        block = max(1, (1 << 22) // n_phi)
        for start in range(0, b.shape[0], block):
            chunk = np.fft.fft(b[start : start + block], n=n_phi, axis=1)
            out[:, start : start + block] = (np.abs(chunk) ** 2).T
        return out / out.sum(axis=1, keepdims=True)

    # -- estimator -------------------------------------------------------------
    def estimate(self, sz):
        sz = np.asarray(sz, dtype=float)
        if self.estimator == "arcsin":
            return np.arcsin(np.clip(sz / self.length, -1.0, 1.0))
        mu, ph = self._response
        return np.interp(sz, mu, ph)

    def out_of_range(self, sz):
        sz = np.asarray(sz, dtype=float)
        if self.estimator == "arcsin":
            return np.abs(sz) > self.length
        mu, _ = self._response
        return (sz < mu[0]) | (sz > mu[-1])

    def response(self, phis):
        """Mean and variance of the outcome as a function of phase."""
        p = self.probabilities(phis)
        mean = p @ self.values
        return mean, p @ self.values**2 - mean**2

    def phase_variance(self) -> float:
        """Single-shot phase variance ``(Var(Sz) + sigma_det^2) / slope^2`` at ``phi = 0``."""
        h = 1e-4
        mean, var = self.response([-h, 0.0, h])
        slope = (mean[2] - mean[0]) / (2 * h)
        return float((var[1] + self.detection_sigma**2) / slope**2)

    def effective_gain(self) -> float:
        return 1.0 / (self.n_atoms * self.phase_variance())


def phase_grid(n_phi: int) -> np.ndarray:
    return -np.pi + 2.0 * np.pi * np.arange(n_phi) / n_phi


def _lattice_gaussian(values, mean, var):
    var = np.maximum(np.asarray(var, dtype=float), 1e-12)
    z = (values[None, :] - np.asarray(mean)[:, None]) ** 2 / (2.0 * var[:, None])
    z -= z.min(axis=1, keepdims=True)
    return np.exp(-z)


def _ramsey_readout_matrix(n_atoms: int) -> np.ndarray:
    # U = exp(-i pi/2 Sx) maps S_y onto the measured Sz
    return rotation_matrix(n_atoms, X_AXIS, math.pi / 2)


def gaussian_moments(n_atoms: int, xi_minus_sq: float, xi_plus_sq: float) -> SpinMoments:
    """Curved-sphere moments of a Gaussian squeezed state along ``x``.

    With transverse variances ``v1, v2`` (``v = xi^2 S/2``) the mean length
    and longitudinal variance follow from ``S_par ~ S - (S1^2 + S2^2)/(2S)``,
    offset so that a coherent state keeps ``|<S>| = S`` and no longitudinal
    noise:  ``L = S + 1/2 - (xi_-^2 + xi_+^2)/4`` and
    ``Var(S_par) = (v1^2 + v2^2 - S^2/2) / (2 S^2)``.
    """
    s = n_atoms / 2.0
    v1 = xi_minus_sq * s / 2.0
    v2 = xi_plus_sq * s / 2.0
    length = max(s + 0.5 - (xi_minus_sq + xi_plus_sq) / 4.0, 0.0)
    var_par = max((v1 * v1 + v2 * v2 - s * s / 2.0) / (2.0 * s * s), 0.0)
    return SpinMoments(float(n_atoms), length, v1, v2, var_par)


def _gaussian_model(n_atoms: int, mom: SpinMoments, label: str) -> ReadoutModel:
    if mom.mean_length <= 0:
        raise ValueError("decoherence left no mean spin to read out")
    return ReadoutModel(
        kind="gaussian",
        n_atoms=n_atoms,
        length=mom.mean_length,
        values=m_values(n_atoms),
        contrast=mom.mean_length / (n_atoms / 2.0),
        var_az=mom.var_min,
        var_par=mom.var_parallel,
        label=label,
    )


def _satin_model(n_atoms: int, shear: float) -> ReadoutModel:
    """Echo readout in the frame twist-about-z, imprint-about-y.

    The clock phase is identified with the imprint angle; physically the
    twisting axis is orthogonal to both the Ramsey rotation axis and the
    mean spin, which is the same geometry after a frame relabeling.
    """
    from .satin import readout_geometry

    w, gauge, v = axis_eigensystem(n_atoms, Y_AXIS)
    eig = gauge[:, None] * v
    m = m_values(n_atoms)
    twisted = oat_state(n_atoms, shear).amps
    coeffs = eig.conj().T @ twisted
    r, slope = readout_geometry(n_atoms, shear)
    axis, angle = readout_unitary_axis(r)
    post = rotation_matrix(n_atoms, axis, angle) @ (np.exp(1j * shear * m * m)[:, None] * eig)
    model = ReadoutModel(
        kind="dicke",
        n_atoms=n_atoms,
        length=slope,
        values=m.copy(),
        estimator="response",
        coeffs=coeffs,
        post=post,
        label=f"satin({shear!r})",
    )
    return model


def _attach_response(model: ReadoutModel, n_phi: int, probs: np.ndarray):
    """Monotonic branch of the mean response around ``phi = 0``."""
    phis = phase_grid(n_phi)
    mean = probs @ model.values
    c = n_phi // 2
    hi = c
    while hi + 1 < n_phi and mean[hi + 1] > mean[hi]:
        hi += 1
    lo = c
    while lo - 1 >= 0 and mean[lo - 1] < mean[lo]:
        lo -= 1
    model._response = (mean[lo : hi + 1].copy(), phis[lo : hi + 1].copy())


def build_readout(config: ClockConfig, noise: NoiseModel | None = None) -> ReadoutModel:
    """Outcome model for the configured input state, decoherence and detection noise."""
    model = _build_readout(config, noise or NoiseModel())
    model.detection_sigma = config.detection_sigma
    return model


def _build_readout(config: ClockConfig, noise: NoiseModel) -> ReadoutModel:
    n = config.n_atoms
    st = config.input_state
    tau = config.ramsey_time
    decohere = noise.has_decoherence
    rates = (noise.gamma_nat, noise.gamma_deph, noise.gamma_loss, tau)
    if st.kind == "satin":
        if decohere:
            raise ValueError("the echo readout is modeled only without decoherence")
        if config.qnd_resolution is not None:
            raise ValueError("QND unwrapping is defined for Ramsey-type readout only")
        return _satin_model(n, st.params[0])
    if st.kind == "css":
        if noise.gamma_loss == 0.0:
            contrast = math.exp(-(noise.gamma_nat + noise.gamma_deph) * tau)
            return ReadoutModel(
                kind="binomial",
                n_atoms=n,
                length=contrast * n / 2.0,
                values=m_values(n),
                contrast=contrast,
                label="css",
            )
        return _gaussian_model(n, moment_decoherence(SpinMoments.coherent(n), *rates), "css")
    if st.kind == "oat":
        state = oat_state(n, st.params[0], orient=True)
        if decohere:
            return _gaussian_model(n, moment_decoherence(SpinMoments.from_state(state), *rates), str(st))
        return ReadoutModel(
            kind="dicke",
            n_atoms=n,
            length=moments(state).mean_length,
            values=m_values(n),
            coeffs=state.amps.copy(),
            post=_ramsey_readout_matrix(n),
            label=str(st),
        )
    if st.kind == "measurement":
        info = st.params[0]
        mom = gaussian_moments(n, 1.0 / (1.0 + info), 1.0 + info)
    else:
        sq, anti = st.params
        mom = gaussian_moments(n, 10.0 ** (-sq / 10.0), 10.0 ** (anti / 10.0))
    if decohere:
        mom = moment_decoherence(mom, *rates)
    return _gaussian_model(n, mom, str(st))


@dataclass(frozen=True)
class ReadoutTable:
    cdf: np.ndarray  # (n_phi, n_out)
    est: np.ndarray  # (n_out,)
    values: np.ndarray
    mean: np.ndarray  # (n_phi,)
    var: np.ndarray
    length: float
    est_kind: int = 0  # 0 arcsin, 1 interpolated response
    resp_mu: np.ndarray | None = None
    resp_phi: np.ndarray | None = None


def table_points(config: ClockConfig, n_out: int) -> int:
    n_phi = config.phase_points
    while n_phi > 1024 and n_phi * n_out > MAX_TABLE_ENTRIES:
        n_phi //= 2
    while n_phi < n_out:
        n_phi *= 2
    return n_phi


def build_table(model: ReadoutModel, n_phi: int) -> ReadoutTable:
    probs = model.grid_probabilities(n_phi)
    if model.estimator == "response":
        _attach_response(model, n_phi, probs)
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    mean = probs @ model.values
    var = np.maximum(probs @ model.values**2 - mean**2, 0.0)
    return ReadoutTable(
        cdf=np.ascontiguousarray(cdf),
        est=model.estimate(model.values),
        values=model.values.astype(float),
        mean=mean,
        var=var,
        length=model.length,
        est_kind=0 if model.estimator == "arcsin" else 1,
        resp_mu=model._response[0] if model._response else np.zeros(1),
        resp_phi=model._response[1] if model._response else np.zeros(1),
    )


# ---------------------------------------------------------------------------
# Single cycle reference path


@dataclass(frozen=True)
class CycleResult:
    sz: np.ndarray | float
    phi_hat: np.ndarray | float
    wrap: np.ndarray | bool


def ramsey_cycle(model, phase: float, noise: NoiseModel | None = None, seed=None, size=None) -> CycleResult:
    """Sample the readout of one Ramsey cycle at accumulated phase ``phase``.

    ``model`` is a :class:`ReadoutModel` or a :class:`ClockConfig` (in which
    case ``noise`` supplies the decoherence rates).  Outcomes are drawn from
    the exact distribution at ``phase``; ``wrap`` flags outcomes outside the
    invertible range of the estimator.
    """
    if isinstance(model, ClockConfig):
        model = build_readout(model, noise)
    if not abs(phase) < math.pi:
        raise ValueError("single-fringe model requires |phase| < pi")
    if model.estimator == "response" and model._response is None:
        n_phi = DEFAULT_PHASE_POINTS
        _attach_response(model, n_phi, model.grid_probabilities(n_phi))
    probs = model.probabilities([phase])[0]
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(probs), size=size, p=probs)
    sz = model.values[idx]
    if model.detection_sigma > 0:
        sz = sz + model.detection_sigma * rng.standard_normal(np.shape(sz))
    hat = model.estimate(sz)
    wrap = model.out_of_range(sz)
    if size is None:
        return CycleResult(float(sz), float(hat), bool(wrap))
    return CycleResult(sz, hat, wrap)


# ---------------------------------------------------------------------------
# Closed loop


@dataclass(frozen=True)
class RunRecord:
    """Per-cycle history of one replica.

    ``phi_hat`` and ``sz`` have one column per ensemble.  ``steering`` is the
    change of the fractional LO correction applied after each cycle and
    ``y`` the fractional frequency of the steered LO averaged over the cycle.
    """

    true_phase: np.ndarray
    phi_hat: np.ndarray
    sz: np.ndarray
    steering: np.ndarray
    wrap: np.ndarray
    y: np.ndarray
    cycle_time: float
    aborted: bool = False

    @property
    def n_cycles(self) -> int:
        return len(self.true_phase)

    @property
    def wrap_fraction(self) -> float:
        return float(np.mean(self.wrap)) if len(self.wrap) else 0.0


@dataclass(frozen=True)
class ClockRun:
    config: ClockConfig
    noise: NoiseModel
    records: list
    allan: AllanSeries
    models: list
    backend: str

    @property
    def record(self) -> RunRecord:
        return self.records[0]

    @property
    def aborted(self) -> bool:
        return any(r.aborted for r in self.records)

    @property
    def wrap_fraction(self) -> float:
        n = sum(r.n_cycles for r in self.records)
        return float(sum(np.sum(r.wrap) for r in self.records) / n)


def qpn_instability(config: ClockConfig, tau_avg: float, phase_variance: float | None = None, n_gain: float | None = None) -> float:
    """Projection-noise-limited Allan deviation.

    ``sigma = (1/(2 pi f_a)) sqrt(1/(tau D tau_avg)) / sqrt(N G)``; ``N G`` is
    ``1/phase_variance`` when the single-shot phase variance is given.
    """
    if n_gain is None:
        n_gain = 1.0 / phase_variance if phase_variance is not None else float(config.n_atoms)
    d = config.duty_cycle
    return np.sqrt(1.0 / (config.ramsey_time * d * np.asarray(tau_avg, dtype=float))) / math.sqrt(n_gain) / (2.0 * math.pi * config.f_a)


def _lo_series(config: ClockConfig, noise: NoiseModel, seed):
    n = config.n_cycles
    if not noise.has_lo_noise:
        return np.zeros(n), np.zeros(n)
    per = config.substeps + config.dead_steps
    synth = LOSynth(noise, config.dt, n * per * config.dt, seed, config.ramsey_time, config.f_a)
    lo_phase = np.empty(n)
    lo_freq = np.empty(n)
    chunk = max(1, (1 << 20) // per)
    for start in range(0, n, chunk):
        k = min(chunk, n - start)
        y = synth.take(k * per).reshape(k, per)
        lo_phase[start : start + k] = y[:, : config.substeps].sum(axis=1) * config.dt * 2.0 * math.pi * config.f_a
        lo_freq[start : start + k] = y.mean(axis=1)
    return lo_phase, lo_freq


def _stack_tables(tables):
    n_out = max(len(t.values) for t in tables)
    n_phi = tables[0].cdf.shape[0]

    def pad(arr, width, fill):
        if arr.shape[-1] == width:
            return arr
        extra = np.full(arr.shape[:-1] + (width - arr.shape[-1],), fill)
        return np.concatenate([arr, extra], axis=-1)

    cdf = np.stack([pad(t.cdf, n_out, 1.0) for t in tables])
    est = np.stack([pad(t.est, n_out, t.est[-1]) for t in tables])
    values = np.stack([pad(t.values, n_out, t.values[-1]) for t in tables])
    mean = np.stack([t.mean for t in tables])
    var = np.stack([t.var for t in tables])
    length = np.array([t.length for t in tables])
    assert cdf.shape[1] == n_phi
    n_resp = np.array([len(t.resp_mu) for t in tables], dtype=np.int64)
    width = int(n_resp.max())
    resp_mu = np.stack([pad(t.resp_mu, width, t.resp_mu[-1]) for t in tables])
    resp_phi = np.stack([pad(t.resp_phi, width, t.resp_phi[-1]) for t in tables])
    kinds = np.array([t.est_kind for t in tables], dtype=np.int64)
    return cdf, est, values, mean, var, length, kinds, resp_mu, resp_phi, n_resp


def _run_replica(config, noise, stacked, qnd_sigma, index, backend):
    kernel = _servo.BACKENDS[backend]
    cdf, est, values, mean, var, length, kinds, resp_mu, resp_phi, n_resp = stacked
    n_ens = cdf.shape[0]
    seed = task_seed(config.seed, "clock", index)
    lo_seed, meas_seed = seed.spawn(2)
    lo_phase, lo_freq = _lo_series(config, noise, lo_seed)
    rng = np.random.default_rng(meas_seed)
    n = config.n_cycles
    u_pick = rng.random((n, n_ens))
    u_out = rng.random((n, n_ens))
    z_weak = rng.standard_normal((n, n_ens))
    det_sigma = float(config.detection_sigma)
    # drawn last so that enabling detection noise leaves the other streams unchanged
    z_det = rng.standard_normal((n, n_ens)) if det_sigma > 0 else np.zeros((1, n_ens))
    out_phase = np.zeros(n)
    out_hat = np.zeros((n, n_ens))
    out_sz = np.zeros((n, n_ens))
    out_steer = np.zeros(n)
    out_wrap = np.zeros(n, dtype=np.uint8)
    out_y = np.zeros(n)
    done = kernel(
        lo_phase,
        lo_freq,
        config.phase_scale,
        config.servo_gain,
        cdf,
        est,
        values,
        u_pick,
        u_out,
        z_weak,
        qnd_sigma,
        mean,
        var,
        length,
        config.lock_loss_cycles,
        det_sigma,
        z_det,
        kinds,
        resp_mu,
        resp_phi,
        n_resp,
        out_phase,
        out_hat,
        out_sz,
        out_steer,
        out_wrap,
        out_y,
    )
    return RunRecord(
        true_phase=out_phase[:done],
        phi_hat=out_hat[:done],
        sz=out_sz[:done],
        steering=out_steer[:done],
        wrap=out_wrap[:done].astype(bool),
        y=out_y[:done],
        cycle_time=config.cycle_time,
        aborted=done < n,
    )


def _allan_over(series_list, tau0, factors=None) -> AllanSeries:
    usable = min(len(s) for s in series_list)
    if factors is None:
        factors = octave_factors(usable)
    else:
        factors = [m for m in factors if 2 * m <= usable]
    if not factors:
        empty = np.zeros(0)
        return AllanSeries(empty, empty, empty, empty, empty, np.zeros(0, dtype=np.int64))
    acc = AllanAccumulator(tau0, factors)
    for s in series_list:
        acc = acc.merge(AllanAccumulator(tau0, factors).add(s))
    return acc.series()


def simulate(
    config: ClockConfig,
    noise: NoiseModel | None = None,
    configs_extra=(),
    backend: str | None = None,
    workers: int = 1,
    factors=None,
) -> ClockRun:
    """Run all replicas of the closed-loop clock.

    ``configs_extra`` adds further ensembles interrogated with the same LO
    (only their ``n_atoms`` and ``input_state`` matter); the servo steers on
    the mean phase estimate.  Detection noise is taken from ``config`` and
    applies to every ensemble.
    """
    noise = noise or NoiseModel()
    backend = backend or _servo.BACKEND
    models = [build_readout(c, noise) for c in (config, *configs_extra)]
    n_phi = table_points(config, max(len(m.values) for m in models))
    tables = [build_table(m, n_phi) for m in models]
    stacked = _stack_tables(tables)
    if config.qnd_resolution is None:
        qnd_sigma = -1.0
    else:
        qnd_sigma = config.qnd_resolution * math.sqrt(config.n_atoms) / 2.0
    indices = range(config.n_replicas)
    if workers > 1 and config.n_replicas > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda i: _run_replica(config, noise, stacked, qnd_sigma, i, backend), indices))
    else:
        records = [_run_replica(config, noise, stacked, qnd_sigma, i, backend) for i in indices]
    allan = _allan_over([r.y for r in records], config.cycle_time, factors)
    return ClockRun(config, noise, records, allan, models, backend)


def run_clock(config: ClockConfig, noise: NoiseModel | None = None, **kwargs) -> tuple[RunRecord, AllanSeries]:
    """Closed-loop clock run; returns the first replica's record and the pooled Allan series."""
    run = simulate(config, noise, **kwargs)
    return run.record, run.allan


@dataclass(frozen=True)
class ScanRow:
    gamma_lo: float
    tau_gamma: float
    instability: float
    qpn: float
    ratio: float
    wrap_fraction: float
    aborted: bool


def lo_limit_scan(config: ClockConfig, gamma_lo_list, noise: NoiseModel | None = None, m_eval: int = 32, **kwargs) -> list[ScanRow]:
    """Instability (normalized to projection noise) and wrap fraction versus ``Gamma_LO``.

    Every point reuses the master seed, so the runs are paired.
    """
    gamma_lo_list = list(gamma_lo_list)
    if not gamma_lo_list:
        raise ValueError("need at least one gamma_lo value")
    noise = noise or NoiseModel()
    rows = []
    for gamma in gamma_lo_list:
        run = simulate(config, replace(noise, gamma_lo=float(gamma)), factors=[m_eval], **kwargs)
        pv = run.models[0].phase_variance()
        tau_avg = m_eval * config.cycle_time
        qpn = float(qpn_instability(config, tau_avg, phase_variance=pv))
        inst = float(run.allan.adev[0]) if len(run.allan.adev) else math.nan
        rows.append(
            ScanRow(
                gamma_lo=float(gamma),
                tau_gamma=float(gamma) * config.ramsey_time,
                instability=inst,
                qpn=qpn,
                ratio=inst / qpn,
                wrap_fraction=run.wrap_fraction,
                aborted=run.aborted,
            )
        )
    return rows


def qnd_unwrap(config: ClockConfig, weak_measurement_resolution: float, noise: NoiseModel | None = None, **kwargs) -> ClockRun:
    """Clock run with a weak pre-measurement each cycle.

    The weak ``Sz`` estimate (noise ``resolution * sqrt(N)/2``) is inverted to
    a coarse phase, the state is rotated back toward the equator by that
    phase, and the final readout measures the remainder.  The weak probe is
    modeled as lossless and its own back-action conditioning is neglected.
    """
    return simulate(replace(config, qnd_resolution=float(weak_measurement_resolution)), noise, **kwargs)


@dataclass(frozen=True)
class DifferentialRun:
    runs: ClockRun
    difference: list
    allan: AllanSeries

    @property
    def records(self):
        return self.runs.records


def run_differential(config_a: ClockConfig, config_b: ClockConfig, noise: NoiseModel | None = None, factors=None, **kwargs) -> DifferentialRun:
    """Two ensembles interrogated by the same LO.

    The differential signal ``(phi_hat_a - phi_hat_b) / (2 pi f_a tau)`` is
    free of common LO noise.  Both configurations must share timing, servo,
    cycle count and seed.
    """
    timing = ("ramsey_time", "dead_time", "n_cycles", "substeps", "f_a", "servo_gain", "seed", "n_replicas")
    for name in timing:
        if getattr(config_a, name) != getattr(config_b, name):
            raise ValueError(f"ensembles must share {name}: {getattr(config_a, name)} != {getattr(config_b, name)}")
    run = simulate(config_a, noise, configs_extra=(config_b,), factors=factors, **kwargs)
    scale = config_a.phase_scale
    diffs = [(r.phi_hat[:, 0] - r.phi_hat[:, 1]) / scale for r in run.records]
    allan = _allan_over(diffs, config_a.cycle_time, factors)
    return DifferentialRun(run, diffs, allan)
