"""Command-line entry point: ``dmzfilter <subcommand> [flags]``.

Exit status is 0 on success, 1 for usage and input errors (bad flags,
missing files, refusing to overwrite, mismatched table) and 2 when a
numerical stage fails.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ekf import ekf_run
from .expr import ExpressionError
from .hermite import BasisError, build_basis
from .model import ModelConfig, ModelError, load_config
from .online import FilterError, estimate, init_filter, predict_step, update_step
from .propagator import PropagationError, TableFormatError, build_table, load_table, save_table
from .sde import SimulationError, density_mode, simulate_path
from .verification import (
    VerificationError,
    convergence_study,
    truncation_study,
    write_rows_csv,
    write_summary_json,
)

RUN_HEADER = ("t", "x_true", "dy", "yy_mean", "yy_var", "ekf_mean", "ekf_var", "step_us")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser, *, table=False, seed=False):
    p.add_argument("--config", required=True, metavar="PATH", help="JSON model configuration")
    p.add_argument("--out", required=True, metavar="PATH", help="output file (its directory is created if needed)")
    p.add_argument("--force", action="store_true", help="overwrite an existing output file")
    p.add_argument("--n-order", type=int, metavar="INT", help="override basis.n_order")
    p.add_argument("--dt", type=float, metavar="FLOAT", help="override time.dt")
    p.add_argument("--t-end", type=float, metavar="FLOAT", help="override time.t_end")
    if table:
        p.add_argument("--table", required=True, metavar="PATH", help="propagator table written by 'offline'")
    if seed:
        p.add_argument("--seed", type=int, metavar="U64", help="noise seed (overrides the config seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dmzfilter", description="Spectral nonlinear filtering experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("offline", help="build and save the propagator table")
    _add_common(p)

    p = sub.add_parser("simulate", help="simulate a state/observation path to CSV")
    _add_common(p, seed=True)

    p = sub.add_parser("run", help="run the spectral filter and the EKF on a simulated path")
    _add_common(p, table=True, seed=True)

    p = sub.add_parser("converge", help="self-convergence study in the number of observation intervals")
    _add_common(p)
    p.add_argument("--k-list", default="25,50,100,200", metavar="K,K,...", help="interval counts (default 25,50,100,200)")
    p.add_argument("--radius", type=float, default=6.0, metavar="FLOAT", help="half-width of the domain (default 6)")
    p.add_argument("--nx", type=int, default=601, metavar="INT", help="grid points (default 601)")

    p = sub.add_parser("truncate", help="domain truncation study over several radii")
    _add_common(p)
    p.add_argument("--radii", default="3,4,5,6", metavar="R,R,...", help="increasing radii (default 3,4,5,6)")
    p.add_argument("--nx-per-unit", type=int, default=50, metavar="INT", help="grid points per unit length (default 50)")
    return parser


def _config(args) -> ModelConfig:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except (ValueError, ModelError, ExpressionError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}") from None
    changes = {}
    if args.n_order is not None:
        changes["n_order"] = args.n_order
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.t_end is not None:
        changes["t_end"] = args.t_end
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    try:
        return replace(cfg, **changes) if changes else cfg
    except ModelError as exc:
        raise UsageError(str(exc)) from None


def _output(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _f17(v) -> str:
    return format(float(v), ".17g")


def _cmd_offline(args) -> int:
    cfg = _config(args)
    out = _output(args.out, args.force)
    basis = build_basis(cfg.alpha, cfg.beta, cfg.n_order)
    table = build_table(cfg.model, basis, cfg.partition(), split=cfg.split)
    save_table(table, out)
    print(f"wrote {out} ({table.k} intervals, N={cfg.n_order})", file=sys.stderr)
    return 0


def _cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _output(args.out, args.force)
    path = simulate_path(cfg.model, cfg.t_end, cfg.dt, None, cfg.seed)
    path.to_csv(out)
    return 0


def _load_matching_table(args, cfg):
    try:
        table = load_table(args.table, split=cfg.split)
    except FileNotFoundError:
        raise UsageError(f"table file not found: {args.table}") from None
    except TableFormatError as exc:
        raise UsageError(f"{args.table}: {exc}") from None
    if table.header() != (cfg.alpha, cfg.beta, cfg.n_order):
        raise UsageError(
            f"table header (alpha, beta, N)={table.header()} does not match config "
            f"{(cfg.alpha, cfg.beta, cfg.n_order)}"
        )
    if table.k != cfg.n_steps or not np.allclose(table.times, cfg.partition(), rtol=0, atol=1e-12):
        raise UsageError(f"table covers {table.k} intervals, config asks for {cfg.n_steps} of dt={cfg.dt}")
    return table


def _cmd_run(args) -> int:
    cfg = _config(args)
    table = _load_matching_table(args, cfg)
    out = _output(args.out, args.force)
    model = cfg.model
    basis = build_basis(cfg.alpha, cfg.beta, cfg.n_order)
    path = simulate_path(model, cfg.t_end, cfg.dt, None, cfg.seed)
    ekf = ekf_run(model, path, density_mode(model), 1.0)

    state = init_filter(model, basis, table)
    first = estimate(state, basis, model)
    rows = [(path.times[0], path.states[0], 0.0, first.mean, first.variance, ekf[0].mean, ekf[0].cov, 0.0)]
    clock = time.perf_counter
    total = 0.0
    for i in range(1, table.k + 1):
        y = float(path.observations[i])
        start = clock()
        try:
            state = predict_step(state, table)
            state = update_step(state, y, model, basis, split=table.split, dt=float(table.times[i] - table.times[i - 1]))
            est = estimate(state, basis, model)
        except FilterError as exc:
            raise FilterError(f"step {i}: {exc}") from exc
        elapsed = clock() - start
        total += elapsed
        dy = y - path.observations[i - 1]
        rows.append((path.times[i], path.states[i], dy, est.mean, est.variance, ekf[i].mean, ekf[i].cov, elapsed * 1e6))
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_HEADER)
        for row in rows:
            writer.writerow([_f17(v) for v in row])
    if table.k:
        print(f"mean online step: {total / table.k * 1e6:.1f} us over {table.k} steps", file=sys.stderr)
    return 0


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated list of integers") from None


def _float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag} must be a comma-separated list of numbers") from None


def _summary_path(out: Path) -> Path:
    return out.with_suffix(".json")


def _cmd_converge(args) -> int:
    cfg = _config(args)
    out = _output(args.out, args.force)
    summary = _output(_summary_path(out), args.force)
    k_list = _int_list(args.k_list, "--k-list")
    try:
        result = convergence_study(cfg.model, args.radius, args.nx, cfg.t_end, k_list, np.sin)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_rows_csv(out, ("k", "error"), result.rows())
    write_summary_json(summary, "order", result.order)
    return 0


def _cmd_truncate(args) -> int:
    cfg = _config(args)
    out = _output(args.out, args.force)
    summary = _output(_summary_path(out), args.force)
    radii = _float_list(args.radii, "--radii")
    try:
        result = truncation_study(cfg.model, radii, args.nx_per_unit, cfg.t_end, np.sin, dt=cfg.dt)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_rows_csv(out, ("R", "tail_gap"), result.rows())
    rate = result.decay_rate
    write_summary_json(summary, "decay_rate", rate if rate is None or math.isfinite(rate) else None)
    return 0


COMMANDS = {
    "offline": _cmd_offline,
    "simulate": _cmd_simulate,
    "run": _cmd_run,
    "converge": _cmd_converge,
    "truncate": _cmd_truncate,
}

NUMERICAL = (FilterError, PropagationError, SimulationError, VerificationError, BasisError, FloatingPointError)


def run_cli(argv=None) -> int:
    """Parse ``argv`` and execute one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
