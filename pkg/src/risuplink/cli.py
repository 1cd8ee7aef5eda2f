"""Command-line front end.

Subcommands: solve, benchmark, convergence, oracle-check, export-channels.
Any SystemConfig field can be overridden on the command line with repeated
``--set key=value`` flags (same syntax as the config file lines).

Exit codes: 0 success, 1 unexpected failure, 2 usage/config error,
3 infeasible scenario.  Failures print a single machine-parsable line
``error: <kind>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .aodriver import alternate, evaluate_objective
from .channel import export_channels_csv, synthesize_channels
from .config import default_config, load_config, save_config
from .dualalloc import (export_allocation_csv, export_dual_trace_csv,
                        gamma_table, solve_allocation_from_gamma)
from .errors import ConfigError
from .harness import load_experiment_spec, run_benchmark, run_convergence
from .oracle import OracleGrid, brute_force_allocation, brute_force_phase
from .rissolver import (build_xi_table, export_coefficient_csv,
                        export_sca_trace_csv, sca_penalty_loop)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3


def _load_cfg(args) -> "SystemConfig":
    cfg = load_config(args.config) if args.config else default_config()
    overrides = getattr(args, "set", None) or []
    if overrides:
        with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as fh:
            save_config(cfg, fh.name)
            path = fh.name
        try:
            with open(path, "a") as fh:
                for item in overrides:
                    if "=" not in item:
                        raise ConfigError(f"--set expects key=value, got {item!r}")
                    fh.write(item + "\n")
            cfg = load_config(path)
        finally:
            os.unlink(path)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(rng_seed=args.seed)
    return cfg


def _cmd_solve(args) -> int:
    cfg = _load_cfg(args)
    real = synthesize_channels(cfg, seed=cfg.rng_seed)
    solution, report = alternate(real, cfg)

    out = args.out
    os.makedirs(out, exist_ok=True)
    save_config(cfg, os.path.join(out, "config.cfg"))
    gamma = gamma_table(real, solution.coefficient.c, cfg).values
    export_allocation_csv(solution.allocation, gamma, cfg,
                          os.path.join(out, "allocation.csv"))
    export_coefficient_csv(solution.coefficient, os.path.join(out, "coefficient.csv"))
    with open(os.path.join(out, "trace.csv"), "w") as fh:
        fh.write("iter,objective_bps\n")
        for i, obj in enumerate(report.objective_trace):
            fh.write(f"{i},{obj!r}\n")
    if report.dual_reports:
        export_dual_trace_csv(report.dual_reports[-1],
                              os.path.join(out, "dual_trace.csv"))
    if report.sca_reports:
        export_sca_trace_csv(report.sca_reports[-1],
                             os.path.join(out, "sca_trace.csv"))
    summary = {
        "sum_rate_bps": solution.sum_rate_bps,
        "sum_rate_bps_per_hz": solution.sum_rate_bps / cfg.total_bandwidth,
        "user_rates_bps": [float(r) for r in solution.user_rates_bps],
        "iterations": report.iterations,
        "converged": report.converged,
        "feasible": solution.feasible,
        "rank_one_gap": solution.coefficient.rank_one_gap,
        "alloc_seconds": report.alloc_seconds,
        "ris_seconds": report.ris_seconds,
        "total_seconds": report.total_seconds,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"sum rate {solution.sum_rate_bps:.6g} bit/s "
          f"({solution.sum_rate_bps / cfg.total_bandwidth:.4g} bit/s/Hz) "
          f"in {report.iterations} iterations -> {out}")
    if not solution.feasible:
        print("error: infeasible: a user rate floor cannot be met", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_benchmark(args) -> int:
    spec = load_experiment_spec(args.spec, base_dir=os.path.dirname(args.spec))
    spec.master_seed = args.seed
    if args.trials is not None:
        spec.trials = args.trials
    t0 = time.perf_counter()
    aggregates = run_benchmark(spec, args.out, jobs=args.jobs)
    print(f"{len(aggregates)} aggregate rows -> {args.out} "
          f"({time.perf_counter() - t0:.1f} s)")
    return EXIT_OK


def _cmd_convergence(args) -> int:
    cfg = _load_cfg(args)
    p_values = [float(v) for v in args.pmax.split(",")]
    seeds = list(range(args.num_seeds))
    run_convergence(cfg, p_values, seeds, args.out)
    print(f"traces for {len(seeds)} seeds x {len(p_values)} powers -> {args.out}")
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0

    cfg2 = default_config(num_users=2, num_subcarriers=2, min_rate=0.0,
                          total_bandwidth=2e6)
    for i in range(args.instances):
        real = synthesize_channels(cfg2, seed=int(rng.integers(2 ** 31)))
        c = np.exp(1j * rng.uniform(0, 2 * np.pi, cfg2.num_elements))
        gamma = gamma_table(real, c, cfg2).values
        state, _ = solve_allocation_from_gamma(gamma, cfg2)
        mine = float((cfg2.subcarrier_bandwidth
                      * np.log2(1.0 + state.P * gamma)[state.A]).sum())
        _, _, ref = brute_force_allocation(gamma, cfg2, OracleGrid(power_points=16))
        ok = mine >= 0.98 * ref
        failures += not ok
        print(f"alloc-vs-oracle {i}: {'PASS' if ok else 'FAIL'} "
              f"(solver {mine:.6g}, oracle {ref:.6g})")

    cfg1 = default_config(num_users=1, num_subcarriers=1, ris_rows=1, ris_cols=2,
                          min_rate=0.0, total_bandwidth=1e6, antenna_offset=0.02)
    for i in range(args.instances):
        real = synthesize_channels(cfg1, seed=int(rng.integers(2 ** 31)))
        A = np.ones((1, 1), dtype=bool)
        P = np.asarray(cfg1.max_power).reshape(1, 1)
        xi_table = build_xi_table(P, real, cfg1)
        coeff, _ = sca_penalty_loop(xi_table, A, np.ones(2, dtype=complex), cfg1)
        mine = evaluate_objective(A, P, coeff.c, real, cfg1)
        _, ref = brute_force_phase(real, A, P, cfg1, OracleGrid(phase_points=32))
        ok = mine >= 0.95 * ref
        failures += not ok
        print(f"phase-vs-oracle {i}: {'PASS' if ok else 'FAIL'} "
              f"(solver {mine:.6g}, oracle {ref:.6g})")

    print(f"oracle-check: {'all passed' if failures == 0 else f'{failures} failures'}")
    return EXIT_OK if failures == 0 else EXIT_FAILURE


def _cmd_export_channels(args) -> int:
    cfg = _load_cfg(args)
    real = synthesize_channels(cfg, seed=cfg.rng_seed)
    export_channels_csv(real, args.out)
    print(f"channels -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risuplink",
        description="Transmissive-RIS uplink OFDMA sum-rate optimizer",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one scenario, write a bundle dir")
    p.add_argument("--config", help="scenario config file (defaults built in)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="solution")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("benchmark", help="run a sweep spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True,
                   help="master seed (mandatory for reproducibility)")
    p.add_argument("--out", default="benchmark")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--trials", type=int, default=None,
                   help="override the spec's trial count")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("convergence", help="objective traces vs iterations")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--pmax", default="0.05,0.1,0.15,0.2")
    p.add_argument("--num-seeds", type=int, default=5)
    p.add_argument("--out", default="convergence")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("oracle-check", help="tiny-instance solver-vs-oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=5)
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("export-channels", help="dump a channel realization CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="channels.csv")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_export_channels)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pragma: no cover - crash path
        print(f"error: crash: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
