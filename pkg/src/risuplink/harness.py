"""Experiment runner: benchmark sweeps and convergence traces.

Every trial draws one channel realization and feeds the identical
realization to each algorithm, so comparisons are paired.  Trial seeds
derive deterministically from the master seed and the trial index only,
which also pairs trials across sweep points (the user geometry stream is
shared, so e.g. the power sweep reuses the exact same channels).

Aggregate rows are recomputed from the persisted per-trial CSV rather than
accumulated on the fly, so the aggregate file is always reproducible from
the per-trial file.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .aodriver import AoParams, alternate, evaluate_objective, per_user_rates
from .channel import synthesize_channels
from .config import SystemConfig, default_config, load_config
from .dualalloc import DualSolveParams, gamma_table, solve_allocation
from .errors import ConfigError
from .rissolver import ScaParams, build_xi_table, sca_penalty_loop, warm_start_coefficient

ALGORITHMS = ("proposed", "three_stage", "random_coefficient", "random_allocation")
_SEED_STRIDE = 1_000_003  # trial seed = master * stride + trial index

__all__ = [
    "ALGORITHMS", "ExperimentSpec", "BenchmarkResult", "load_experiment_spec",
    "apply_sweep_value", "trial_seed", "run_trial", "run_benchmark",
    "run_convergence", "aggregate_from_trials",
]


@dataclass
class ExperimentSpec:
    sweep_var: str                       # p_max | K | N | M
    values: list
    trials: int = 100
    algorithms: tuple = ALGORITHMS
    base_config: SystemConfig = field(default_factory=default_config)
    master_seed: int = 0

    def __post_init__(self):
        if self.sweep_var not in ("p_max", "K", "N", "M"):
            raise ConfigError(f"unknown sweep variable {self.sweep_var!r}")
        if not self.values:
            raise ConfigError("sweep value list is empty")
        if self.trials < 1:
            raise ConfigError("need at least one trial per sweep point")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithms: {bad}")


@dataclass
class BenchmarkResult:
    """Aggregate over trials for one (sweep value, algorithm) cell."""

    sweep_value: float
    algorithm: str
    mean_sum_rate_bps: float
    stderr_bps: float
    n_ok: int
    n_infeasible: int


def load_experiment_spec(path, base_dir=None) -> ExperimentSpec:
    """Read a sweep spec file (flat key = value, same syntax as configs)."""
    raw = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
    if "sweep_var" not in raw or "values" not in raw:
        raise ConfigError(f"{path}: spec needs at least sweep_var and values")
    cfg = default_config()
    if "base_config" in raw:
        cfg_path = raw["base_config"]
        if base_dir is not None and not os.path.isabs(cfg_path):
            cfg_path = os.path.join(base_dir, cfg_path)
        cfg = load_config(cfg_path)
    values = [float(v) for v in raw["values"].split(",")]
    if raw["sweep_var"] in ("K", "N", "M"):
        values = [int(v) for v in values]
    return ExperimentSpec(
        sweep_var=raw["sweep_var"],
        values=values,
        trials=int(raw.get("trials", 100)),
        algorithms=tuple(a.strip() for a in raw.get(
            "algorithms", ",".join(ALGORITHMS)).split(",")),
        base_config=cfg,
        master_seed=int(raw.get("seed", 0)),
    )


def apply_sweep_value(cfg: SystemConfig, var: str, value) -> SystemConfig:
    if var == "p_max":
        return replace(cfg, max_power=np.full(cfg.num_users, float(value)))
    if var == "K":
        k = int(value)
        return replace(
            cfg, num_users=k,
            max_power=np.full(k, np.asarray(cfg.max_power)[0]),
            ber_target=np.full(k, np.asarray(cfg.ber_target)[0]),
            min_rate=np.full(k, np.asarray(cfg.min_rate)[0]),
            user_positions=None,
        )
    if var == "N":
        return replace(cfg, num_subcarriers=int(value))
    if var == "M":
        side = math.isqrt(int(value))
        if side * side != int(value):
            raise ConfigError(f"M sweep values must be perfect squares, got {value}")
        return replace(cfg, ris_rows=side, ris_cols=side)
    raise ConfigError(f"unknown sweep variable {var!r}")


def trial_seed(master_seed: int, trial: int) -> int:
    return master_seed * _SEED_STRIDE + trial


def _random_phases(rng: np.random.Generator, m: int) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, m))


def run_trial(cfg: SystemConfig, master_seed: int, trial: int,
              algorithms=ALGORITHMS,
              dual_params: DualSolveParams | None = None,
              sca_params: ScaParams | None = None,
              ao_params: AoParams | None = None) -> dict:
    """Run every requested algorithm on one shared channel realization.

    Returns {algorithm: (sum_rate_bps, iterations, feasible)}.
    """
    seed = trial_seed(master_seed, trial)
    real = synthesize_channels(cfg, seed=seed)
    min_rate = np.asarray(cfg.min_rate, dtype=float)
    out = {}

    for algo in algorithms:
        if algo == "proposed":
            sol, rep = alternate(real, cfg, ao_params, dual_params, sca_params)
            out[algo] = (sol.sum_rate_bps, rep.iterations, sol.feasible)
        elif algo == "three_stage":
            one_round = AoParams(max_rounds=1, rel_tol=(ao_params or AoParams()).rel_tol)
            sol, rep = alternate(real, cfg, one_round, dual_params, sca_params)
            out[algo] = (sol.sum_rate_bps, rep.iterations, sol.feasible)
        elif algo == "random_coefficient":
            rng = np.random.default_rng([master_seed, trial, 1])
            c = _random_phases(rng, cfg.num_elements)
            state, dual_rep = solve_allocation(real, c, cfg, dual_params)
            rate = evaluate_objective(state.A, state.P, c, real, cfg)
            rates = per_user_rates(state.A, state.P, c, real, cfg)
            feasible = (not dual_rep.qos_infeasible) and bool(
                np.all(rates >= min_rate - 1e-6))
            out[algo] = (rate, dual_rep.iterations, feasible)
        elif algo == "random_allocation":
            rng = np.random.default_rng([master_seed, trial, 2])
            K, N = cfg.num_users, cfg.num_subcarriers
            owners = rng.integers(0, K, size=N)
            A = np.zeros((K, N), dtype=bool)
            A[owners, np.arange(N)] = True
            P = np.zeros((K, N))
            for k in range(K):
                cols = np.flatnonzero(owners == k)
                if cols.size:
                    P[k, cols] = np.asarray(cfg.max_power)[k] / cols.size
            c = _random_phases(rng, cfg.num_elements)
            rate = evaluate_objective(A, P, c, real, cfg)
            rates = per_user_rates(A, P, c, real, cfg)
            feasible = bool(np.all(rates >= min_rate - 1e-6))
            out[algo] = (rate, 1, feasible)
        else:
            raise ConfigError(f"unknown algorithm {algo!r}")
    return out


def _benchmark_cell(args):
    point_idx, value, cfg, spec_algorithms, master_seed, trial = args
    res = run_trial(cfg, master_seed, trial, algorithms=spec_algorithms)
    return point_idx, value, trial, res


def run_benchmark(spec: ExperimentSpec, out_dir, jobs: int = 1):
    """Run the sweep, write trials.csv and aggregate.csv, return aggregates.

    Deterministic for a fixed spec and master seed: results are keyed and
    written in (sweep point, trial, algorithm) order regardless of worker
    completion order.
    """
    os.makedirs(out_dir, exist_ok=True)
    tasks = []
    for point_idx, value in enumerate(spec.values):
        cfg = apply_sweep_value(spec.base_config, spec.sweep_var, value)
        for trial in range(spec.trials):
            tasks.append((point_idx, value, cfg, spec.algorithms,
                          spec.master_seed, trial))

    results = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for point_idx, value, trial, res in pool.map(_benchmark_cell, tasks):
                results[(point_idx, trial)] = (value, res)
    else:
        for task in tasks:
            point_idx, value, trial, res = _benchmark_cell(task)
            results[(point_idx, trial)] = (value, res)

    trials_path = os.path.join(out_dir, "trials.csv")
    with open(trials_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "seed", "sweep_value", "algorithm",
                         "sum_rate_bps", "iterations", "feasible"])
        for point_idx in range(len(spec.values)):
            for trial in range(spec.trials):
                value, res = results[(point_idx, trial)]
                for algo in spec.algorithms:
                    rate, iters, feasible = res[algo]
                    writer.writerow([trial, trial_seed(spec.master_seed, trial),
                                     repr(float(value)), algo, repr(float(rate)),
                                     iters, int(feasible)])

    aggregates = aggregate_from_trials(trials_path, spec)
    agg_path = os.path.join(out_dir, "aggregate.csv")
    with open(agg_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sweep_value", "algorithm", "mean_sum_rate_bps",
                         "stderr_bps", "n_ok", "n_infeasible"])
        for row in aggregates:
            writer.writerow([repr(row.sweep_value), row.algorithm,
                             repr(row.mean_sum_rate_bps), repr(row.stderr_bps),
                             row.n_ok, row.n_infeasible])
    return aggregates


def aggregate_from_trials(trials_path, spec: ExperimentSpec):
    """Recompute the aggregate table from the per-trial CSV on disk."""
    cells: dict[tuple, list] = {}
    infeasible: dict[tuple, int] = {}
    order: list[tuple] = []
    with open(trials_path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (float(row["sweep_value"]), row["algorithm"])
            if key not in cells:
                cells[key] = []
                infeasible[key] = 0
                order.append(key)
            if int(row["feasible"]):
                cells[key].append(float(row["sum_rate_bps"]))
            else:
                infeasible[key] += 1
    out = []
    for key in order:
        vals = np.asarray(cells[key])
        mean = float(vals.mean()) if vals.size else math.nan
        stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        out.append(BenchmarkResult(
            sweep_value=key[0], algorithm=key[1], mean_sum_rate_bps=mean,
            stderr_bps=stderr, n_ok=int(vals.size), n_infeasible=infeasible[key]))
    return out


def run_convergence(base_cfg: SystemConfig, p_values, seeds, out_dir,
                    dual_params=None, sca_params=None, ao_params=None):
    """Objective traces of the full solver per (seed, maximum power).

    Writes traces.csv with rows (seed, p_max, iter, objective_bps) and
    returns {(seed, p_max): trace list}.
    """
    os.makedirs(out_dir, exist_ok=True)
    traces = {}
    for seed in seeds:
        for p in p_values:
            cfg = apply_sweep_value(base_cfg, "p_max", p)
            real = synthesize_channels(cfg, seed=seed)
            _, rep = alternate(real, cfg, ao_params, dual_params, sca_params)
            traces[(seed, float(p))] = list(rep.objective_trace)
    path = os.path.join(out_dir, "traces.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "p_max", "iter", "objective_bps"])
        for (seed, p), trace in traces.items():
            for i, obj in enumerate(trace):
                writer.writerow([seed, repr(p), i, repr(float(obj))])
    return traces
