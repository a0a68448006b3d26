"""Command-line front end (``pbit`` / ``python -m pbit``)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .beamforming import expected_gain, optimize_phases, save_phases
from .config import dump_config, load_config, with_overrides
from .harness import ALL_SCHEMES, PHASE_MODES, ExperimentSpec, plot_script, run_trial, sweep
from .model import SystemConfig, binary_entropy, make_rng, random_phases, sample_channels

log = logging.getLogger("pbit")

DEFAULT_RHO_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _schemes(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [s for s in names if s not in ALL_SCHEMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown scheme(s) {', '.join(bad) or '(none)'}; choose from {', '.join(ALL_SCHEMES)}"
        )
    return names


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value experiment file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="Monte Carlo trials per grid point")
    common.add_argument("--out", help="output path")
    common.add_argument("--schemes", type=_schemes, help="comma-separated receiver schemes")
    common.add_argument("--phase-mode", choices=PHASE_MODES)
    common.add_argument("--snr", type=_floats, help="SNR grid in dB, comma-separated")
    common.add_argument("--rho", type=_floats, help="rho grid, comma-separated")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pbit", description="LIS passive beamforming and information transfer simulator")
    parser.add_argument("--version", action="version", version=f"pbit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("sweep-snr", parents=[common], help="BER vs SNR at one rho, CSV output")
    sub.add_parser("sweep-rho", parents=[common], help="BER vs SNR for a family of rho values")
    sub.add_parser("optimize-phases", parents=[common],
                   help="optimize phases for one channel draw and compare with random phases")
    sub.add_parser("single-trial", parents=[common], help="verbose dump of one realization")
    p = sub.add_parser("emit-plots", parents=[common], help="write a plotting script for a CSV")
    p.add_argument("--csv", help="CSV to plot (defaults to the configured output path)")
    sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    return parser


def _resolve_spec(args, **defaults) -> ExperimentSpec:
    """Config file (or built-in defaults), then command-specific defaults, then flags."""
    if args.config:
        spec = load_config(args.config)
        keys = _config_keys(args.config)
        spec = with_overrides(spec, **{k: v for k, v in defaults.items() if k not in keys})
    else:
        spec = ExperimentSpec(**defaults)
    return with_overrides(
        spec,
        master_seed=args.seed,
        trials=args.trials,
        output_path=args.out,
        schemes=args.schemes,
        phase_mode=args.phase_mode,
        snr_grid_db=args.snr,
        rho_grid=args.rho,
    )


def _config_keys(path: Path) -> set[str]:
    keys = set()
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0]
        if "=" in line:
            keys.add(line.split("=", 1)[0].strip())
    return keys


def _print_records(records, out):
    out.write(f"{'snr_db':>7} {'rho':>5} {'scheme':<14} {'ber_x':>12} {'ber_s':>12} {'erased':>6}\n")
    for r in records:
        bx = f"{r.ber_x:.4e}" if r.ber_x is not None else "-"
        bs = f"{r.ber_s:.4e}" if r.ber_s is not None else "-"
        out.write(f"{r.snr_db:7.2f} {r.rho:5.2f} {r.scheme:<14} {bx:>12} {bs:>12} {r.erased_blocks:6d}\n")


def cmd_sweep_snr(args, out) -> int:
    spec = _resolve_spec(args)
    if len(spec.rho_grid) > 1:
        spec = with_overrides(spec, rho_grid=spec.rho_grid[:1])
    records = sweep(spec)
    _print_records(records, out)
    out.write(f"wrote {spec.output_path}\n")
    return 0


def cmd_sweep_rho(args, out) -> int:
    spec = _resolve_spec(args, rho_grid=DEFAULT_RHO_GRID, schemes=("bigamp", "bigamp+gamp"))
    out.write("rho     rate (bits/element)\n")
    for rho in spec.rho_grid:
        out.write(f"{rho:<7.2f} {binary_entropy(rho):.4f}\n")
    records = sweep(spec)
    _print_records(records, out)
    out.write(f"wrote {spec.output_path}\n")
    return 0


def cmd_optimize_phases(args, out) -> int:
    spec = _resolve_spec(args)
    cfg = spec.cfg
    rho = spec.rho_grid[0]
    ch = sample_channels(cfg, make_rng(spec.master_seed, 0, 0))
    res = optimize_phases(ch, rho, cfg.beta, make_rng(spec.master_seed, 0, 2))
    rng = make_rng(spec.master_seed, 0, 1)
    baseline = np.array([expected_gain(random_phases(cfg.N, rng), ch, rho, cfg.beta) for _ in range(1000)])
    out.write(f"M={cfg.M} N={cfg.N} beta={cfg.beta} rho={rho} seed={spec.master_seed}\n")
    out.write("theta (rad):\n")
    for n, a in enumerate(res.phases.angles):
        out.write(f"  {n:3d} {a: .12g}\n")
    mean = baseline.mean()
    out.write(f"expected gain (optimized): {res.expected_gain:.6f}\n")
    out.write(f"SDP upper bound:           {res.sdp_bound:.6f}\n")
    out.write(f"random-phase mean (1000):  {mean:.6f}  (max {baseline.max():.6f})\n")
    out.write(f"gain over random mean:     {10 * np.log10(res.expected_gain / mean):.3f} dB\n")
    out.write(f"ADMM iterations: {res.sdp.solver_iterations}, residuals "
              f"{' '.join(f'{v:.2e}' for v in res.sdp.residuals)}\n")
    if args.out:
        save_phases(res.phases, args.out)
        out.write(f"wrote {args.out}\n")
    return 0


def cmd_single_trial(args, out) -> int:
    spec = _resolve_spec(args, trials=1)
    out.write(dump_config(spec))
    counts = run_trial(spec, 0)
    out.write(f"{'snr_db':>7} {'rho':>5} {'scheme':<14} {'err_x':>6} {'bits_x':>6} "
              f"{'err_s':>6} {'bits_s':>6} {'erased':>6}\n")
    for rho in spec.rho_grid:
        for snr in spec.snr_grid_db:
            for scheme in spec.schemes:
                c = counts[(snr, rho, scheme)]
                out.write(f"{snr:7.2f} {rho:5.2f} {scheme:<14} {c.errors_x:6d} {c.bits_x:6d} "
                          f"{c.errors_s:6d} {c.bits_s:6d} {c.erased:6d}\n")
    return 0


def cmd_emit_plots(args, out) -> int:
    spec = _resolve_spec(args)
    csv_path = args.csv or spec.output_path
    script_path = Path(args.out) if args.out else Path(csv_path).with_suffix(".plot.py")
    try:
        script_path.write_text(plot_script(csv_path))
    except OSError as exc:
        raise OSError(f"cannot write plot script {script_path}: {exc.strerror or exc}") from exc
    out.write(f"wrote {script_path}\n")
    return 0


def cmd_show_config(args, out) -> int:
    out.write(dump_config(_resolve_spec(args)))
    return 0


COMMANDS = {
    "sweep-snr": cmd_sweep_snr,
    "sweep-rho": cmd_sweep_rho,
    "optimize-phases": cmd_optimize_phases,
    "single-trial": cmd_single_trial,
    "emit-plots": cmd_emit_plots,
    "show-config": cmd_show_config,
}


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        err.write(str(exc))
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except (ValueError, OSError) as exc:
        err.write(f"pbit {args.command}: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
