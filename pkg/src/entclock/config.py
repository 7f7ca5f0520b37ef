"""Plain-text run configuration.

One ``key = value`` pair per line, ``#`` starts a comment.  Physical
quantities accept a unit suffix; a bare number is read in the canonical unit
listed below.

=========================  ==========================================
time keys                  ``s`` (also ``ms``, ``us``)
rate keys (``gamma_*``)    ``1/s`` (also ``s^-1``, ``/s``)
frequency (``f_a``)        ``Hz`` (also ``kHz`` .. ``THz``)
``h0`` / ``h_m1`` / ``h_m2``  ``1/Hz`` / dimensionless / ``Hz``
=========================  ==========================================

``Hz`` on a rate is rejected as ambiguous (cyclic or angular?).
:func:`dump_config` writes every key in a fixed order with canonical units,
so ``dump_config(parse_config(dump_config(c))) == dump_config(c)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .clock import ClockConfig, InputState, dead_time_from_duty
from .noise import NoiseModel

PROTOCOLS = ("squeeze", "satin", "clock", "differential", "ceiling", "tomography", "sweep")

_TIME = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6}
_RATE = {"1/s": 1.0, "s^-1": 1.0, "s-1": 1.0, "/s": 1.0}
_FREQ = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "THz": 1e12}
_NUM_RE = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf|nan)\s*(.*)$")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based or ``None`` for cross-key checks."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ProtocolConfig:
    """Settings of the non-clock subcommands.

    ``shear = None`` selects the optimum; ``detection_sigma = "sql"`` means
    ``sqrt(N)/2`` for each atom number.
    """

    protocol: str = "clock"
    squeeze_method: str = "oat"
    shear: float | None = None
    light_qfi: float = 1.0
    efficiency: float = 1.0
    phase: float = 0.0
    detection_sigma: float | str = 0.0
    reversal_mismatch: float = 0.0
    husimi_resolution: int = 64
    reference_state: InputState = field(default_factory=InputState)
    coherence: str = "linewidth"
    n_list: tuple = ()
    tau_list: tuple = ()

    def sigma_for(self, n_atoms: int) -> float:
        if self.detection_sigma == "sql":
            return math.sqrt(n_atoms) / 2.0
        return float(self.detection_sigma)


@dataclass(frozen=True)
class SweepSpec:
    """One swept key over explicit values or ``(lo, hi, count, linear|log)``."""

    param: str
    values: tuple
    target: str = "satin"
    prefix: str = "sweep"

    def __post_init__(self):
        if self.param not in KEYS or self.param.startswith("sweep_"):
            raise ConfigError(f"unknown sweep parameter {self.param!r}", key=self.param)
        if self.target not in PROTOCOLS or self.target == "sweep":
            raise ConfigError(f"cannot sweep subcommand {self.target!r}")
        if len(self.values) < 1:
            raise ConfigError("sweep needs at least one value")

    @classmethod
    def from_range(cls, param, lo, hi, count, spacing="linear", **kw) -> "SweepSpec":
        count = int(count)
        if count < 1:
            raise ConfigError("sweep count must be >= 1")
        if spacing == "log":
            if not (lo > 0 and hi > 0):
                raise ConfigError("log spacing needs positive bounds")
            vals = np.geomspace(lo, hi, count)
        elif spacing == "linear":
            vals = np.linspace(lo, hi, count)
        else:
            raise ConfigError(f"spacing must be linear or log, got {spacing!r}")
        if KEYS.get(param, ("",))[0] == "int":
            vals = np.unique(np.round(vals).astype(int))
        return cls(param, tuple(v.item() for v in vals), **kw)


@dataclass(frozen=True)
class RunConfig:
    clock: ClockConfig
    noise: NoiseModel
    protocol: ProtocolConfig
    sweep: SweepSpec | None = None


# key -> (kind, default); order is the dump order
KEYS = {
    "protocol": ("choice", "clock"),
    "n_atoms": ("int", None),
    "ramsey_time": ("time", None),
    "dead_time": ("time", 0.0),
    "servo_gain": ("float", 0.5),
    "input_state": ("state", "css"),
    "reference_state": ("state", "css"),
    "n_cycles": ("int", 1000),
    "seed": ("int", 0),
    "f_a": ("freq", 5.18e14),
    "substeps": ("int", 16),
    "n_replicas": ("int", 1),
    "qnd_resolution": ("opt_float", None),
    "lock_loss_cycles": ("int", 50),
    "phase_points": ("int", 8192),
    "detection_sigma": ("sigma", 0.0),
    "gamma_lo": ("rate", 0.0),
    "h0": ("h0", 0.0),
    "h_m1": ("float", 0.0),
    "h_m2": ("h_m2", 0.0),
    "gamma_nat": ("rate", 0.0),
    "gamma_deph": ("rate", 0.0),
    "gamma_loss": ("rate", 0.0),
    "squeeze_method": ("choice", "oat"),
    "shear": ("opt_float", None),
    "light_qfi": ("float", 1.0),
    "efficiency": ("float", 1.0),
    "phase": ("float", 0.0),
    "reversal_mismatch": ("float", 0.0),
    "husimi_resolution": ("int", 64),
    "coherence": ("choice", "linewidth"),
    "n_list": ("list", ()),
    "tau_list": ("time_list", ()),
    "sweep_param": ("opt_str", None),
    "sweep_values": ("list", ()),
    "sweep_range": ("range", None),
    "sweep_target": ("choice", "satin"),
    # accepted on input only; dumped as the equivalent dead_time
    "duty_cycle": ("float", None),
}
_DUMP_SKIP = ("duty_cycle",)
_CHOICES = {
    "protocol": PROTOCOLS,
    "squeeze_method": ("oat", "measurement"),
    "coherence": ("linewidth", "amplitude"),
    "sweep_target": tuple(p for p in PROTOCOLS if p != "sweep"),
}
_UNIT_OF = {"time": "s", "rate": "1/s", "freq": "Hz", "h0": "1/Hz", "h_m2": "Hz", "time_list": "s"}


def _number(text: str, key: str, line: int | None, units: dict | None, canon: str | None = None) -> float:
    m = _NUM_RE.match(text.strip())
    if not m:
        raise ConfigError(f"{key}: cannot read a number from {text!r}", line, key)
    val = float(m.group(1))
    unit = m.group(2).strip()
    if unit:
        if units is None:
            raise ConfigError(f"{key}: takes no unit, got {unit!r}", line, key)
        if unit not in units:
            if units is _RATE and unit in _FREQ:
                raise ConfigError(f"{key}: unit {unit!r} is ambiguous for a rate, use 1/s", line, key)
            raise ConfigError(f"{key}: unit {unit!r} not allowed (use {', '.join(units)})", line, key)
        val *= units[unit]
    return val


def _convert(key: str, raw: str, line: int | None):
    kind = KEYS[key][0]
    raw = raw.strip()
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}", line, key) from None
    if kind == "choice":
        if raw not in _CHOICES[key]:
            raise ConfigError(f"{key}: must be one of {', '.join(_CHOICES[key])}", line, key)
        return raw
    if kind == "opt_str":
        return None if raw == "none" else raw
    if kind == "state":
        try:
            return InputState.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line, key) from None
    if kind == "opt_float":
        return None if raw == "none" else _number(raw, key, line, None)
    if kind == "sigma":
        return "sql" if raw == "sql" else _number(raw, key, line, None)
    if kind in ("list", "time_list"):
        units = _TIME if kind == "time_list" else None
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(_number(p, key, line, units) for p in parts)
    if kind == "range":
        if raw == "none":
            return None
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != 4:
            raise ConfigError(f"{key}: expected 'lo, hi, count, linear|log'", line, key)
        lo, hi = _number(parts[0], key, line, None), _number(parts[1], key, line, None)
        try:
            count = int(parts[2])
        except ValueError:
            raise ConfigError(f"{key}: count must be an integer", line, key) from None
        return (lo, hi, count, parts[3])
    units = {"time": _TIME, "rate": _RATE, "freq": _FREQ, "h0": {"1/Hz": 1.0}, "h_m2": {"Hz": 1.0}}.get(kind)
    return _number(raw, key, line, units)


def _check_range(key: str, val, line: int | None):
    def bad(why):
        raise ConfigError(f"{key} = {val!r} out of range: {why}", line, key)

    if isinstance(val, float) and not math.isfinite(val):
        bad("must be finite")
    positive = ("ramsey_time", "f_a")
    non_negative = (
        "dead_time", "gamma_lo", "h0", "h_m1", "h_m2", "gamma_nat", "gamma_deph", "gamma_loss",
        "light_qfi", "shear", "reversal_mismatch", "seed",
    )
    at_least_one = ("n_atoms", "n_replicas", "substeps")
    if key in positive and not val > 0:
        bad("must be > 0")
    if key in non_negative and val is not None and val < 0:
        bad("must be >= 0")
    if key in at_least_one and val < 1:
        bad("must be >= 1")
    if key == "n_cycles" and val < 2:
        bad("must be >= 2")
    if key == "servo_gain" and not 0 < val < 2:
        bad("must lie in (0, 2)")
    if key == "efficiency" and not 0 < val <= 1:
        bad("must lie in (0, 1]")
    if key == "duty_cycle" and not 0 < val <= 1:
        bad("must lie in (0, 1]")
    if key == "qnd_resolution" and val is not None and val < 1:
        bad("must be >= 1 (SQL units)")
    if key == "detection_sigma" and val != "sql" and val < 0:
        bad("must be >= 0 or 'sql'")
    if key == "phase_points" and val < 64:
        bad("must be >= 64")
    if key == "husimi_resolution" and not 8 <= val <= 4096:
        bad("must lie in [8, 4096]")
    if key == "n_list" and any(v < 1 or v != int(v) for v in val):
        bad("atom numbers must be integers >= 1")
    if key == "tau_list" and any(not v > 0 for v in val):
        bad("times must be > 0")


def parse_config(text: str) -> RunConfig:
    """Parse configuration text.

    Raises
    ------
    ConfigError
        Unknown or repeated key, malformed value, wrong unit or out-of-range
        value, with the offending line number.
    """
    values: dict = {}
    lines: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        body = raw_line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", lineno, key)
        val = _convert(key, raw, lineno)
        _check_range(key, val, lineno)
        values[key] = val
        lines[key] = lineno
    for key in ("n_atoms", "ramsey_time"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}", key=key)
    full = {k: d for k, (_, d) in KEYS.items()}
    for k in ("input_state", "reference_state"):
        full[k] = InputState.parse(full[k])
    full.update(values)
    if full["duty_cycle"] is not None:
        if "dead_time" in values:
            raise ConfigError("give either dead_time or duty_cycle, not both", lines["duty_cycle"], "duty_cycle")
        full["dead_time"] = dead_time_from_duty(full["ramsey_time"], full["duty_cycle"])
    return _assemble(full, lines)


def _assemble(full: dict, lines: dict) -> RunConfig:
    clock_names = [f.name for f in fields(ClockConfig)]
    sigma = full["detection_sigma"]
    clock_kw = {k: full[k] for k in clock_names if k in full and k != "detection_sigma"}
    clock_kw["detection_sigma"] = math.sqrt(full["n_atoms"]) / 2.0 if sigma == "sql" else sigma
    noise_kw = {f.name: full[f.name] for f in fields(NoiseModel)}
    proto_kw = {f.name: full[f.name] for f in fields(ProtocolConfig)}
    try:
        clock = ClockConfig(**clock_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    noise = NoiseModel(**noise_kw)
    protocol = ProtocolConfig(**proto_kw)
    sweep = None
    if full["sweep_param"] is not None:
        line = lines.get("sweep_param")
        if full["sweep_range"] is not None and full["sweep_values"]:
            raise ConfigError("give either sweep_values or sweep_range, not both", line)
        try:
            if full["sweep_range"] is not None:
                lo, hi, count, spacing = full["sweep_range"]
                sweep = SweepSpec.from_range(full["sweep_param"], lo, hi, count, spacing, target=full["sweep_target"])
            else:
                sweep = SweepSpec(full["sweep_param"], tuple(full["sweep_values"]), target=full["sweep_target"])
        except ConfigError as exc:
            raise ConfigError(str(exc), line) from None
    return RunConfig(clock, noise, protocol, sweep)


def _fmt_num(val) -> str:
    if isinstance(val, int):
        return str(val)
    return repr(float(val))


def config_values(cfg: RunConfig) -> dict:
    """Resolved key -> value mapping (canonical units)."""
    out = {}
    for src in (cfg.clock, cfg.noise, cfg.protocol):
        for f in fields(src):
            out[f.name] = getattr(src, f.name)
    # the protocol copy keeps the symbolic "sql" setting
    out["detection_sigma"] = cfg.protocol.detection_sigma
    sw = cfg.sweep
    out["sweep_param"] = sw.param if sw else None
    out["sweep_values"] = sw.values if sw else ()
    out["sweep_range"] = None
    out["sweep_target"] = sw.target if sw else "satin"
    return out


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form; every key, fixed order, canonical units."""
    vals = config_values(cfg)
    lines = []
    for key, (kind, _) in KEYS.items():
        if key in _DUMP_SKIP:
            continue
        val = vals[key]
        unit = _UNIT_OF.get(kind)
        if val is None:
            text = "none"
        elif kind in ("state", "choice", "opt_str") or val == "sql":
            text = str(val)
        elif kind in ("list", "time_list"):
            text = ", ".join(_fmt_num(v) for v in val)
            unit = None
        else:
            text = _fmt_num(val)
        if unit and val is not None:
            text = f"{text} {unit}"
        lines.append(f"{key} = {text}".rstrip())
    return "\n".join(lines) + "\n"


def override(cfg: RunConfig, key: str, value) -> RunConfig:
    """Copy of ``cfg`` with one key replaced (value in canonical units)."""
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}", key=key)
    text = dump_config(cfg)
    if isinstance(value, InputState):
        new = str(value)
    elif isinstance(value, (tuple, list)):
        new = ", ".join(_fmt_num(v) for v in value)
    elif value is None:
        new = "none"
    elif isinstance(value, str):
        new = value
    else:
        new = _fmt_num(value)
        if KEYS[key][0] == "int":
            if float(value) != int(value):
                raise ConfigError(f"{key} needs an integer, got {value!r}", key=key)
            new = str(int(value))
    out = []
    for line in text.splitlines():
        k = line.split("=", 1)[0].strip()
        if k == key:
            line = f"{key} = {new}"
        if k.startswith("sweep_") and k != key:
            continue
        out.append(line)
    if key == "duty_cycle":
        out = [ln for ln in out if not ln.startswith("dead_time")]
        out.append(f"duty_cycle = {new}")
    res = parse_config("\n".join(out) + "\n")
    return replace(res, sweep=cfg.sweep if not key.startswith("sweep_") else res.sweep)
