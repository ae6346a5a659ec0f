from __future__ import annotations

import argparse
import logging
import time
from typing import Callable, Dict, List, Optional, Sequence

from . import __version__
from .config import RunConfig, load_config
from .cycle import Anchor
from .errors import MemorySimError, ParameterError
from .pipelines import (
    CS_DENSITY,
    CS_MASS,
    CS_TEMPERATURE,
    SWEEP_DURATIONS,
    Table,
    check_table,
    modes_tables,
    operating_point,
    optimize_tables,
    overlap_tables,
    response_tables,
    run_cycle,
    selftest,
    store_tables,
    sweep_table,
)
from .report import OutputDir, cycle_report_payload

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# argparse dests that feed RunConfig
CONFIG_KEYS = (
    "length",
    "write_duration",
    "read_duration",
    "duration",
    "nz",
    "nt",
    "inner_n",
    "modes",
    "delta_l",
    "mixing",
    "transform",
    "mix_norm",
    "quadrature",
    "out",
    "format",
    "workers",
    "allow_out_of_model",
)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("cycle parameters")
    g.add_argument("--length", type=float, help="cell length L in optical-depth units (default 10)")
    g.add_argument("--write-duration", type=float, help="write stage duration T_w (default 5.5)")
    g.add_argument("--read-duration", type=float, help="read stage duration T_r (default 5.5)")
    g.add_argument("--duration", type=float, help="set T_w and T_r together")
    g.add_argument("--nz", type=int, help="space grid points (default 512)")
    g.add_argument("--nt", type=int, help="time grid points (default 512)")
    g.add_argument("--inner-n", type=int, help="inner quadrature points (default: nt)")
    g.add_argument("--modes", type=int, help="retained modes M (default 10)")
    g.add_argument("--allow-out-of-model", action="store_true", default=None,
                   help="warn instead of failing when T >= L")

    s = common.add_argument_group("storage model")
    storage = s.add_mutually_exclusive_group()
    storage.add_argument("--delta-l", type=float, help="free expansion with mean extension dL")
    storage.add_argument("--mixing", action="store_true", default=None, help="room-temperature full mixing")
    s.add_argument("--transform", choices=("per_atom", "scalar", "density"), help="optical-depth rescaling rule (default per_atom)")
    s.add_argument("--mix-norm", choices=("excitation", "amplitude"), help="full-mixing normalization")
    s.add_argument("--quadrature", choices=("hermite", "segment"), help="free-expansion blur quadrature (default hermite)")

    o = common.add_argument_group("output")
    o.add_argument("--out", help="output directory (default results)")
    o.add_argument("--format", choices=("csv", "json"), help="table format (default csv)")
    o.add_argument("--config", help="key = value configuration file")
    o.add_argument("--workers", type=int, help="parallel workers for kernel rows and sweeps")
    v = o.add_mutually_exclusive_group()
    v.add_argument("--verbose", action="store_true", help="debug logging")
    v.add_argument("--quiet", action="store_true", help="warnings and errors only")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memsim",
        description="Multimode high-speed quantum memory: kernels, Schmidt modes and thermal storage.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    md = sub.add_parser("modes", parents=[common], help="cycle eigenvalues and eigenfunctions")
    md.add_argument("--scaled-read", action="store_true",
                    help="report sqrt(k) phi(k t) as the read modes; fails when they are not accurate")
    sub.add_parser("response", parents=[common], help="spin-wave response functions")
    sub.add_parser("store", parents=[common], help="responses after storage and the scaling map")
    sub.add_parser("overlap", parents=[common], help="overlap matrix Q")
    cyc = sub.add_parser("cycle", parents=[common], help="output profiles and efficiencies")
    cyc.add_argument("--input-mode", type=int, default=1,
                     help="mode whose retrieved pulse is projected on the eigenfunctions (default 1)")
    sub.add_parser("optimize", parents=[common], help="eigenmodes of the cycle including storage")
    sw = sub.add_parser("sweep", parents=[common], help="leading singular values against duration")
    sw.add_argument("--durations", type=float, nargs="+", help="durations T to evaluate")
    chk = sub.add_parser("check", parents=[common], help="classicality of the atomic gas")
    chk.add_argument("--temperature", type=float, default=CS_TEMPERATURE, help="kelvin (default 100e-6)")
    chk.add_argument("--density", type=float, default=CS_DENSITY, help="atoms per m^3 (default 1e15)")
    chk.add_argument("--mass", type=float, default=CS_MASS, help="atomic mass in kg (default Cs)")
    sub.add_parser("selftest", parents=[common], help="run the invariant suite")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {key: getattr(args, key, None) for key in CONFIG_KEYS}


def _write_tables(out: OutputDir, tables: Sequence[Table]) -> None:
    for table in tables:
        out.write_table(table.stem, table.frame, table.header)


def _log_anchors(anchors: Sequence[Anchor]) -> None:
    for a in anchors:
        (logger.info if a.passed else logger.warning)(
            "%s = %.4f (published %.2f +/- %.2f) %s",
            a.name, a.computed, a.expected, a.tolerance, "ok" if a.passed else "OFF",
        )


def _cmd_modes(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    _write_tables(out, modes_tables(operating_point(cfg), scaled_read=args.scaled_read))
    return 0


def _cmd_response(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    _write_tables(out, response_tables(operating_point(cfg)))
    return 0


def _cmd_store(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    _write_tables(out, store_tables(operating_point(cfg), cfg.storage()))
    return 0


def _cmd_overlap(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    _write_tables(out, overlap_tables(operating_point(cfg), cfg.storage()))
    return 0


def _cmd_cycle(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    report, tables = run_cycle(operating_point(cfg), cfg.storage(), args.input_mode)
    _write_tables(out, tables)
    out.write_json("report", cycle_report_payload(report))
    _log_anchors(report.provenance)
    logger.info("eta_1 = %.4f (%s)", report.efficiencies[0], report.storage)
    return 0


def _cmd_optimize(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    tables, anchors = optimize_tables(operating_point(cfg), cfg.storage())
    _write_tables(out, tables)
    out.write_json("optimized_report", {"storage": cfg.storage().label,
                                        "provenance": [a.as_dict() for a in anchors]})
    _log_anchors(anchors)
    return 0


def _cmd_sweep(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    durations = args.durations or SWEEP_DURATIONS
    _write_tables(out, sweep_table(cfg, durations))
    return 0


def _cmd_check(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    tables = check_table(args.temperature, args.density, args.mass)
    _write_tables(out, tables)
    row = tables[0].frame.iloc[0]
    if not bool(row["passed"]):
        raise ParameterError(
            f"gas is not classical: T / T_degeneracy = {row['ratio']:.3g} (needs >= 100)"
        )
    logger.info("classical gas: T / T_degeneracy = %.3g", row["ratio"])
    return 0


def _cmd_selftest(cfg: RunConfig, args: argparse.Namespace, out: OutputDir) -> int:
    result = selftest(operating_point(cfg))
    out.write_json("selftest", {"passed": result.passed, "checks": [r.as_dict() for r in result.results]})
    if not result.passed:
        failed = [r.name for r in result.results if not r.passed]
        logger.error("selftest failed: %s", ", ".join(failed))
        return 4
    return 0


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace, OutputDir], int]] = {
    "modes": _cmd_modes,
    "response": _cmd_response,
    "store": _cmd_store,
    "overlap": _cmd_overlap,
    "cycle": _cmd_cycle,
    "optimize": _cmd_optimize,
    "sweep": _cmd_sweep,
    "check": _cmd_check,
    "selftest": _cmd_selftest,
}


def run_command(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    configure_logging(args.verbose, args.quiet)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config, _overrides(args))
        out = OutputDir(cfg.out, cfg.format)
        code = COMMANDS[args.command](cfg, args, out)
        out.write_manifest(args.command, cfg.as_dict(), time.perf_counter() - started)
    except MemorySimError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("cannot write results: %s", exc)
        return 1
    return code
