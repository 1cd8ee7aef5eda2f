"""Alternating optimization between the allocation and RIS subproblems.

Each round re-solves the power/subcarrier allocation for the current
coefficient vector and then redesigns the coefficient for the new
allocation.  A stage's result is kept only if it does not lower the
objective (subproblem solves are approximate, and the coefficient stage
additionally loses a little in the rank-one extraction), so the recorded
objective trace is non-decreasing; the loop exits when the fractional
objective change drops below the threshold.  The best iterate seen is
returned, not the last one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization
from .config import SystemConfig
from .dualalloc import (AllocationState, DualReport, DualSolveParams,
                        gamma_table, solve_allocation)
from .rissolver import (ScaParams, ScaReport, TransmissiveCoefficient,
                        build_xi_table, sca_penalty_loop, warm_start_coefficient)

__all__ = [
    "AoParams", "Solution", "SolveReport", "evaluate_objective",
    "per_user_rates", "objective_upper_bound", "alternate",
]


@dataclass
class AoParams:
    max_rounds: int = 50
    rel_tol: float = 1e-3    # fractional objective-change threshold


@dataclass
class Solution:
    allocation: AllocationState
    coefficient: TransmissiveCoefficient
    sum_rate_bps: float
    user_rates_bps: np.ndarray
    feasible: bool


@dataclass
class SolveReport:
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    infeasible: bool = False
    alloc_seconds: float = 0.0
    ris_seconds: float = 0.0
    total_seconds: float = 0.0
    coefficient_fallbacks: int = 0
    upper_bound_bps: float = math.inf
    dual_reports: list = field(default_factory=list)
    sca_reports: list = field(default_factory=list)


def _rate_matrix(A: np.ndarray, P: np.ndarray, c: np.ndarray,
                 real: ChannelRealization, cfg: SystemConfig) -> np.ndarray:
    gamma = gamma_table(real, c, cfg).values
    return cfg.subcarrier_bandwidth * np.where(A, np.log2(1.0 + P * gamma), 0.0)


def evaluate_objective(A: np.ndarray, P: np.ndarray, c: np.ndarray,
                       real: ChannelRealization, cfg: SystemConfig) -> float:
    """Sum rate W * sum_kn a_kn log2(1 + gamma_kn) in bit/s.

    This is the single scoring function used by every solver and benchmark.
    Constraint violations raise instead of being clamped away.
    """
    A = np.asarray(A)
    P = np.asarray(P)
    if A.shape != P.shape:
        raise ValueError("A and P must have matching shapes")
    if np.any(A.sum(axis=0) > 1):
        raise ValueError("a subcarrier is assigned to more than one user")
    if np.any(P < 0):
        raise ValueError("negative transmit power")
    if np.any(P[~A.astype(bool)] != 0):
        raise ValueError("positive power on an unassigned pair")
    budgets = np.asarray(cfg.max_power, dtype=float)
    used = P.sum(axis=1)
    if np.any(used > budgets * (1 + 1e-9) + 1e-12):
        raise ValueError(f"power budget exceeded: used={used}, budget={budgets}")
    if np.max(np.abs(c)) > 1 + 1e-9:
        raise ValueError("coefficient magnitude above 1")
    return float(_rate_matrix(A.astype(bool), P, c, real, cfg).sum())


def per_user_rates(A: np.ndarray, P: np.ndarray, c: np.ndarray,
                   real: ChannelRealization, cfg: SystemConfig) -> np.ndarray:
    return _rate_matrix(np.asarray(A, dtype=bool), P, c, real, cfg).sum(axis=1)


def objective_upper_bound(real: ChannelRealization, cfg: SystemConfig) -> float:
    """Coarse bound: every subcarrier at the best user's full budget with the
    triangle-inequality channel gain (|v^H c| <= sum|v_m| for |c_m| <= 1)."""
    noise = cfg.noise_psd * cfg.subcarrier_bandwidth
    gmax = np.sum(np.abs(real.v), axis=2).max() ** 2
    snr = np.max(np.asarray(cfg.max_power) * real.nu) * gmax / noise
    return cfg.total_bandwidth * math.log2(1.0 + snr)


def alternate(real: ChannelRealization, cfg: SystemConfig,
              ao_params: AoParams | None = None,
              dual_params: DualSolveParams | None = None,
              sca_params: ScaParams | None = None):
    """Run the full alternating solver on one channel realization.

    Returns (Solution, SolveReport).  A subproblem that comes back infeasible
    or worse than the incumbent leaves its variable unchanged for that round;
    infeasibility in the very first allocation marks the whole solve
    infeasible (the best-effort iterate is still returned).
    """
    if ao_params is None:
        ao_params = AoParams()
    t_start = time.perf_counter()
    report = SolveReport()
    report.upper_bound_bps = objective_upper_bound(real, cfg)

    c = warm_start_coefficient(real)
    coeff = TransmissiveCoefficient(
        c=c, C=np.outer(c, c.conj()), rank_one_gap=0.0, objective_ratio=1.0)
    state: AllocationState | None = None
    objective = -math.inf
    best = None

    for rnd in range(1, ao_params.max_rounds + 1):
        # allocation stage, coefficient fixed
        t0 = time.perf_counter()
        new_state, dual_rep = solve_allocation(real, c, cfg, dual_params)
        report.alloc_seconds += time.perf_counter() - t0
        report.dual_reports.append(dual_rep)
        cand = evaluate_objective(new_state.A, new_state.P, c, real, cfg)
        if dual_rep.qos_infeasible and rnd == 1:
            report.infeasible = True
        if state is None or (cand >= objective and not dual_rep.qos_infeasible):
            state = new_state
            objective = cand
        if rnd == 1:
            report.objective_trace.append(objective)

        # coefficient stage, allocation fixed
        t0 = time.perf_counter()
        xi_table = build_xi_table(state.P, real, cfg)
        new_coeff, sca_rep = sca_penalty_loop(xi_table, state.A, c, cfg, sca_params)
        report.ris_seconds += time.perf_counter() - t0
        report.sca_reports.append(sca_rep)
        if not sca_rep.infeasible:
            cand = evaluate_objective(state.A, state.P, new_coeff.c, real, cfg)
            if cand >= objective:
                c = new_coeff.c
                coeff = new_coeff
                objective = cand
            else:
                report.coefficient_fallbacks += 1
        else:
            report.coefficient_fallbacks += 1

        report.objective_trace.append(objective)
        report.iterations = rnd
        if best is None or objective > best[0]:
            best = (objective, state, coeff, c)

        prev, curr = report.objective_trace[-2], report.objective_trace[-1]
        if rnd >= 2 and abs(curr - prev) <= ao_params.rel_tol * max(abs(prev), 1e-12):
            report.converged = True
            break

    assert best is not None
    objective, state, coeff, c = best
    rates = per_user_rates(state.A, state.P, c, real, cfg)
    feasible = (not report.infeasible) and bool(
        np.all(rates >= np.asarray(cfg.min_rate) - 1e-6))
    report.total_seconds = time.perf_counter() - t_start
    assert objective <= report.upper_bound_bps * (1 + 1e-9)
    solution = Solution(
        allocation=state, coefficient=coeff, sum_rate_bps=objective,
        user_rates_bps=rates, feasible=feasible,
    )
    return solution, report
