"""``spdeinv`` command line.

Exit codes: 0 success, 1 invalid input or config, 2 numerical failure.
Diagnostics go to stderr; data goes to files under ``--out`` (and, for
``oracle``, to stdout).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import bench, oracle
from .config import ExperimentConfig, load_config
from .dynamics import TrajectoryCSV, simulate
from .ergodic import estimate_invariant_functional, estimate_row, write_estimate_csv
from .errors import InvalidConfig, NumericalError, ValidationError
from .oracle import LinearInvariantLaw
from .poisson import GalerkinSystem, probe, probe_row, write_probe_csv
from .rng import NoiseSource

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _simulate(cfg: ExperimentConfig, out: Path, threads):
    sc = cfg.scheme()
    path = out / "trajectory.csv"
    with TrajectoryCSV(path, sc.functional, sc.tau) as obs:
        simulate(sc, obs, NoiseSource(sc.seed, 0), every_step=cfg["simulate"]["every_step"])
    return [path]


def _estimate(cfg: ExperimentConfig, out: Path, threads):
    sc = cfg.scheme()
    r = cfg["replicas"]
    est = estimate_invariant_functional(sc, replicas=r, threads=threads)
    path = out / "estimate.csv"
    write_estimate_csv(path, [estimate_row(sc, r, est)])
    return [path]


def _bench_tau(cfg: ExperimentConfig, out: Path, threads):
    b = cfg["bench"]
    res = bench.run_tau_sweep(cfg.scheme(), b["taus"], replicas=b["replicas"], threads=threads)
    path = out / "tau_sweep.csv"
    bench.emit_csv(res, path)
    return [path]


def _bench_h(cfg: ExperimentConfig, out: Path, threads):
    b = cfg["bench"]
    # the variant is replaced mesh by mesh; build the base on the coarsest one
    base = cfg.scheme(variant=cfg.variant() if cfg["variant"] == "fem" else None)
    res = bench.run_h_sweep(base, b["meshes"], replicas=b["replicas"], threads=threads)
    path = out / "h_sweep.csv"
    bench.emit_csv(res, path)
    return [path]


def _laws(cfg: ExperimentConfig):
    names = cfg["oracle"]["laws"]
    if names is None:
        names = ["continuous", "discrete_time_spectral"]
        if cfg["variant"] == "fem":
            names += ["fem_continuous_time", "fem_fully_discrete"]
    tau = cfg["tau"]
    op = cfg.operator() if any(n.startswith("fem") for n in names) else None
    build = {
        "continuous": lambda: LinearInvariantLaw.continuous(),
        "discrete_time_spectral": lambda: LinearInvariantLaw.discrete_time_spectral(tau),
        "fem_continuous_time": lambda: LinearInvariantLaw.fem_continuous_time(op),
        "fem_fully_discrete": lambda: LinearInvariantLaw.fem_fully_discrete(op, tau),
    }
    return [build[n]() for n in names]


def _oracle(cfg: ExperimentConfig, out, threads):
    rows = oracle.oracle_rows(_laws(cfg), cfg["oracle"]["truncation"])
    oracle.write_oracle_csv(sys.stdout, rows)
    if out is None:
        return []
    path = out / "oracle.csv"
    oracle.write_oracle_csv(path, rows)
    return [path]


def _poisson(cfg: ExperimentConfig, out: Path, threads):
    p = cfg["poisson"]
    system = GalerkinSystem(p["M"], cfg.functional(), cfg.nonlinearity()).with_phibar()
    rows = []
    for x in p["points"]:
        res = probe(system, x, delta=p["delta"], T_max=p["T_max"], replicas=p["replicas"], seed=cfg.seed,
                    dt=p["dt"], substeps=p["substeps"], threads=threads)
        rows.append(probe_row(system, res, cfg.seed))
    path = out / "probe.csv"
    write_probe_csv(path, rows)
    return [path]


COMMANDS = {
    "simulate": _simulate,
    "estimate": _estimate,
    "bench-tau": _bench_tau,
    "bench-h": _bench_h,
    "oracle": _oracle,
    "poisson-check": _poisson,
}


def run(subcommand: str, cfg: ExperimentConfig, out=None, threads=None) -> int:
    """Run one subcommand; returns the process exit code."""
    if subcommand not in COMMANDS:
        print(f"error: unknown subcommand {subcommand!r}", file=sys.stderr)
        return EXIT_INVALID
    try:
        if out is not None or subcommand != "oracle":
            out = Path(out if out is not None else ".")
            out.mkdir(parents=True, exist_ok=True)
        for path in COMMANDS[subcommand](cfg, out, threads):
            print(f"wrote {path}", file=sys.stderr)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: available CPUs)")
    parser = argparse.ArgumentParser(prog="spdeinv", description="Invariant-measure experiments for the "
                                     "stochastic heat equation on (0, 1).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
    except InvalidConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: cannot read config {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.seed is not None:
        if args.seed < 0:
            print("error: --seed must be nonnegative", file=sys.stderr)
            return EXIT_INVALID
        cfg = cfg.with_seed(args.seed)
    return run(args.command, cfg, args.out, threads)


if __name__ == "__main__":
    sys.exit(main())
