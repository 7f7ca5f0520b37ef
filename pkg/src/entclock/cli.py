"""Command-line front end.

Usage: ``entclock <subcommand> --config FILE [--seed S] [--out-prefix P]``.

Every output CSV starts with ``#`` comment lines holding the package
version, subcommand, master seed and the fully resolved configuration; there
are no timestamps, so identical inputs give byte-identical files.  Exit codes:
0 success, 2 configuration error, 3 numerical-guard abort (servo lock loss,
undefined squeezing frame, non-finite result).  The last stderr line is
``status=<ok|error> cmd=<name> seed=<seed>``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .clock import ServoAbort, run_differential, simulate
from .config import ConfigError, RunConfig, dump_config, override, parse_config
from .decoherence import ceiling_table
from .dicke import FrameUndefinedError, css, husimi_q
from .metrics import REPORT_COLUMNS, squeezing_report
from .satin import satin_optimal_shear, satin_run
from .seeding import SEED_ENV, env_seed, env_workers
from .squeezing import measurement_report, oat_squeeze_optimal, oat_state

SATIN_COLUMNS = ("N", "shear", "phase", "slope", "readout_var", "detection_sigma", "gain_db")
CEILING_COLUMNS = ("N", "tau", "g_max_db")
HUSIMI_COLUMNS = ("theta", "phi", "q")
RECORD_COLUMNS = ("cycle", "true_phase", "phi_hat", "sz", "steering", "wrap", "y")
DIFF_COLUMNS = ("cycle", "phi_hat_a", "phi_hat_b", "y_diff")
ALLAN_COLUMNS = ("tau", "adev", "ci_low", "ci_high", "edf")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class Table:
    """Named CSV output: file suffix, columns and rows."""

    def __init__(self, suffix: str, columns, rows):
        self.suffix = suffix
        self.columns = tuple(columns)
        self.rows = [tuple(r) for r in rows]


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def render(table: Table, cfg: RunConfig, cmd: str) -> str:
    buf = io.StringIO()
    buf.write(f"# entclock {__version__}\n# command: {cmd}\n# seed: {cfg.clock.seed}\n")
    for line in dump_config(cfg).splitlines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# subcommands; each returns a list of tables


def _n_list(cfg: RunConfig):
    return [int(n) for n in cfg.protocol.n_list] or [cfg.clock.n_atoms]


def cmd_squeeze(cfg: RunConfig) -> list[Table]:
    p = cfg.protocol
    rows = []
    for n in _n_list(cfg):
        if p.squeeze_method == "measurement":
            rep = measurement_report(n, p.light_qfi, p.efficiency)
        elif p.shear is None:
            rep = oat_squeeze_optimal(n)[1]
        else:
            rep = squeezing_report(oat_state(n, p.shear))
        rows.append(rep.row())
    return [Table("metrics", REPORT_COLUMNS, rows)]


def cmd_satin(cfg: RunConfig) -> list[Table]:
    p = cfg.protocol
    rows = []
    for n in _n_list(cfg):
        sigma = p.sigma_for(n)
        if p.shear is None:
            shear = satin_optimal_shear(n, sigma, mismatch=p.reversal_mismatch).shear
        else:
            shear = p.shear
        rows.append(satin_run(n, shear, p.phase, sigma, mismatch=p.reversal_mismatch).row())
    return [Table("satin", SATIN_COLUMNS, rows)]


def cmd_ceiling(cfg: RunConfig) -> list[Table]:
    nz = cfg.noise
    rates = {"gamma_nat": nz.gamma_nat, "gamma_deph": nz.gamma_deph, "gamma_loss": nz.gamma_loss}
    n_list = cfg.protocol.n_list or tuple(np.unique(np.round(np.geomspace(1, 1e6, 61))).tolist())
    tau_list = cfg.protocol.tau_list or (cfg.clock.ramsey_time,)
    rows = ceiling_table(n_list, tau_list, rates, cfg.protocol.coherence)
    return [Table("ceiling", CEILING_COLUMNS, rows)]


def cmd_tomography(cfg: RunConfig) -> list[Table]:
    st = cfg.clock.input_state
    n = cfg.clock.n_atoms
    if st.kind == "css":
        state = css(n, math.pi / 2, 0.0)
    elif st.kind in ("oat", "satin"):
        # the echo protocol's probe state is the forward-twisted one
        state = oat_state(n, st.params[0], orient=st.kind == "oat")
    else:
        raise ConfigError(f"tomography needs a pure Dicke state (css, oat, satin), not {st.kind}", key="input_state")
    grid = husimi_q(state, cfg.protocol.husimi_resolution)
    return [Table("husimi", HUSIMI_COLUMNS, grid.rows())]


def _allan_table(allan) -> Table:
    return Table("allan", ALLAN_COLUMNS, allan.rows())


def cmd_clock(cfg: RunConfig, workers: int = 1) -> list[Table]:
    run = simulate(cfg.clock, cfg.noise, workers=workers)
    rec = run.record
    rows = (
        (k, rec.true_phase[k], rec.phi_hat[k, 0], rec.sz[k, 0], rec.steering[k], rec.wrap[k], rec.y[k])
        for k in range(rec.n_cycles)
    )
    tables = [Table("record", RECORD_COLUMNS, rows), _allan_table(run.allan)]
    if run.aborted:
        raise ServoAbort(f"servo lost lock after {rec.n_cycles} cycles", tables)
    return tables


def cmd_differential(cfg: RunConfig, workers: int = 1) -> list[Table]:
    ref = replace(cfg.clock, input_state=cfg.protocol.reference_state)
    res = run_differential(cfg.clock, ref, cfg.noise, workers=workers)
    rec = res.records[0]
    diff = res.difference[0]
    rows = ((k, rec.phi_hat[k, 0], rec.phi_hat[k, 1], diff[k]) for k in range(rec.n_cycles))
    tables = [Table("diff", DIFF_COLUMNS, rows), _allan_table(res.allan)]
    if res.runs.aborted:
        raise ServoAbort(f"servo lost lock after {rec.n_cycles} cycles", tables)
    return tables


def _sweep_point(target: str, cfg: RunConfig) -> list[Table]:
    # clock runs inside a sweep are single-threaded; the pool parallelizes points
    return COMMANDS[target](cfg)


_IMPLIED_COLUMN = {"n_atoms": "N", "shear": "shear", "phase": "phase", "detection_sigma": "detection_sigma"}


def cmd_sweep(cfg: RunConfig, workers: int = 1) -> list[Table]:
    spec = cfg.sweep
    if spec is None:
        raise ConfigError("sweep needs sweep_param with sweep_values or sweep_range", key="sweep_param")
    points = [override(cfg, spec.param, v) for v in spec.values]
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _sweep_point(spec.target, c), points))
    else:
        results = [_sweep_point(spec.target, c) for c in points]
    merged = []
    for idx in range(len(results[0])):
        first = results[0][idx]
        implied = _IMPLIED_COLUMN.get(spec.param)
        prepend = implied not in first.columns
        cols = ((spec.param,) if prepend else ()) + first.columns
        rows = []
        for value, tables in zip(spec.values, results):
            for row in tables[idx].rows:
                rows.append(((value,) if prepend else ()) + row)
        merged.append(Table(f"sweep_{first.suffix}", cols, rows))
    return merged


COMMANDS = {
    "squeeze": cmd_squeeze,
    "satin": cmd_satin,
    "clock": cmd_clock,
    "differential": cmd_differential,
    "ceiling": cmd_ceiling,
    "tomography": cmd_tomography,
    "sweep": cmd_sweep,
}
_THREADED = ("clock", "differential", "sweep")


# ---------------------------------------------------------------------------
# argument handling


def _float_list(text: str):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entclock", description="Entanglement-enhanced clock simulator.")
    parser.add_argument("--version", action="version", version=f"entclock {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="configuration file (key = value lines)")
        sp.add_argument("--seed", type=int, help="master seed; overrides ENTCLOCK_SEED and the file")
        sp.add_argument("--out-prefix", default="entclock", help="output path prefix")
        sp.add_argument("--n-list", type=_float_list, help="comma-separated atom numbers")
        if name in ("clock", "differential", "sweep"):
            sp.add_argument("--cycles", type=int, help="number of servo cycles")
        if name in ("ceiling", "sweep"):
            sp.add_argument("--rates", type=_float_list, help="gamma_nat,gamma_deph,gamma_loss in 1/s")
            sp.add_argument("--tau-list", type=_float_list, help="comma-separated Ramsey times in s")
    return parser


def resolve(args) -> RunConfig:
    """Parse the config file and apply environment and flag overrides.

    Precedence for the seed: ``--seed`` flag, then ``ENTCLOCK_SEED``, then the file.
    """
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    cfg = parse_config(text)
    seed = args.seed if args.seed is not None else env_seed()
    if seed is not None:
        cfg = override(cfg, "seed", seed)
    if getattr(args, "cycles", None) is not None:
        cfg = override(cfg, "n_cycles", args.cycles)
    if args.n_list is not None:
        cfg = override(cfg, "n_list", args.n_list)
    if getattr(args, "tau_list", None) is not None:
        cfg = override(cfg, "tau_list", args.tau_list)
    rates = getattr(args, "rates", None)
    if rates is not None:
        if len(rates) != 3:
            raise ConfigError("--rates needs exactly three values: gamma_nat,gamma_deph,gamma_loss")
        for key, val in zip(("gamma_nat", "gamma_deph", "gamma_loss"), rates):
            cfg = override(cfg, key, val)
    return cfg


def write_tables(tables, cfg: RunConfig, cmd: str, prefix: str) -> list[Path]:
    paths = []
    for t in tables:
        path = Path(f"{prefix}_{t.suffix}.csv")
        if path.parent != Path("."):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render(t, cfg, cmd), encoding="utf-8")
        paths.append(path)
    return paths


def _check_finite(tables):
    for t in tables:
        for row in t.rows:
            for v in row:
                if isinstance(v, float) and math.isnan(v):
                    raise FloatingPointError(f"non-finite value in {t.suffix} output")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cmd = args.command
    # best effort for the summary line when the config cannot be read
    seed = args.seed if args.seed is not None else os.environ.get(SEED_ENV) or "unknown"
    status, code = "ok", EXIT_OK
    try:
        cfg = resolve(args)
        seed = cfg.clock.seed
        fn = COMMANDS[cmd]
        workers = env_workers()
        tables = fn(cfg, workers=workers) if cmd in _THREADED else fn(cfg)
        _check_finite(tables)
        write_tables(tables, cfg, cmd, args.out_prefix)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status, code = "error", EXIT_CONFIG
    except ServoAbort as exc:
        message, tables = exc.args if len(exc.args) == 2 else (exc.args[0], [])
        write_tables(tables, cfg, cmd, args.out_prefix)
        print(f"error: {message}", file=sys.stderr)
        status, code = "error", EXIT_NUMERIC
    except (FrameUndefinedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical guard: {exc}", file=sys.stderr)
        status, code = "error", EXIT_NUMERIC
    except ValueError as exc:
        # parameter combinations rejected by the physics layer
        print(f"error: {exc}", file=sys.stderr)
        status, code = "error", EXIT_CONFIG
    print(f"status={status} cmd={cmd} seed={seed}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
