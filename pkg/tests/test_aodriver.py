import math

import numpy as np
import pytest

from risuplink import (AoParams, alternate, build_xi_table, default_config,
                       evaluate_objective, gamma_table, objective_upper_bound,
                       per_user_rates, sca_penalty_loop, snr_and_rate,
                       solve_allocation, synthesize_channels,
                       warm_start_coefficient)
from risuplink.oracle import OracleGrid, brute_force_phase

from conftest import tiny_config


# ---- the objective evaluator ---------------------------------------------------

def test_objective_zero_assignment(default_real, default_cfg):
    A = np.zeros((5, 20), dtype=bool)
    P = np.zeros((5, 20))
    c = np.ones(25, dtype=complex)
    assert evaluate_objective(A, P, c, default_real, default_cfg) == 0.0


def test_objective_single_pair_known_snr():
    # engineer gamma = 3 on one assigned pair: rate = 2 W
    cfg = tiny_config(num_users=1, num_subcarriers=1, ris_rows=1, ris_cols=1,
                      total_bandwidth=1e6)
    real = synthesize_channels(cfg, seed=0)
    c = np.ones(1, dtype=complex)
    gamma_per_watt = gamma_table(real, c, cfg).values[0, 0] / 1.0
    p = 3.0 / gamma_per_watt
    cfgp = cfg.with_overrides(max_power=np.array([p * 1.01]))
    A = np.ones((1, 1), dtype=bool)
    P = np.array([[p]])
    rate = evaluate_objective(A, P, c, real, cfgp)
    assert rate == pytest.approx(2.0 * cfg.subcarrier_bandwidth, rel=1e-9)


def test_objective_matches_per_pair_rates(default_real, default_cfg):
    rng = np.random.default_rng(2)
    c = np.exp(1j * rng.uniform(0, 2 * np.pi, 25))
    A = np.zeros((5, 20), dtype=bool)
    P = np.zeros((5, 20))
    for n in range(20):
        k = n % 5
        A[k, n] = True
        P[k, n] = default_cfg.max_power[k] / 4
    total = evaluate_objective(A, P, c, default_real, default_cfg)
    acc = 0.0
    for k in range(5):
        for n in range(20):
            if A[k, n]:
                _, r = snr_and_rate(P[k, n], default_real.v[k, n], c,
                                    default_real.nu[k], default_cfg)
                acc += r
    assert total == pytest.approx(acc, rel=1e-12)
    np.testing.assert_allclose(
        per_user_rates(A, P, c, default_real, default_cfg).sum(), total, rtol=1e-12)


def test_objective_rejects_violations(default_real, default_cfg):
    c = np.ones(25, dtype=complex)
    A = np.zeros((5, 20), dtype=bool)
    P = np.zeros((5, 20))
    A[0, 0] = A[1, 0] = True
    with pytest.raises(ValueError):
        evaluate_objective(A, P, c, default_real, default_cfg)
    A = np.zeros((5, 20), dtype=bool)
    A[0, 0] = True
    P[0, 0] = 10.0  # above the 0.2 W budget
    with pytest.raises(ValueError):
        evaluate_objective(A, P, c, default_real, default_cfg)
    P[0, 0] = 0.1
    with pytest.raises(ValueError):
        evaluate_objective(A, P, 2.0 * c, default_real, default_cfg)
    P2 = P.copy()
    P2[2, 3] = 0.01  # power on an unassigned pair
    with pytest.raises(ValueError):
        evaluate_objective(A, P2, c, default_real, default_cfg)


# ---- the alternating driver ----------------------------------------------------

def test_alternate_degenerates_for_single_element():
    # M = 1: the coefficient stage cannot change |v^H c|, so AO reduces to a
    # single allocation pass
    cfg = tiny_config(num_users=2, num_subcarriers=3, ris_rows=1, ris_cols=1,
                      total_bandwidth=3e6)
    real = synthesize_channels(cfg, seed=1)
    sol, rep = alternate(real, cfg)
    c0 = warm_start_coefficient(real)
    state, _ = solve_allocation(real, c0, cfg)
    single = evaluate_objective(state.A, state.P, c0, real, cfg)
    assert sol.sum_rate_bps == pytest.approx(single, rel=1e-9)
    assert rep.converged


def test_alternate_toy_against_exhaustive_oracle():
    # K=1, N=1, M=2: compare against phase-grid x full-power oracle
    cfg = tiny_config(num_users=1, num_subcarriers=1, ris_rows=1, ris_cols=2,
                      antenna_offset=0.02, total_bandwidth=1e6)
    real = synthesize_channels(cfg, seed=2)
    sol, rep = alternate(real, cfg)
    A = np.ones((1, 1), dtype=bool)
    P = np.asarray(cfg.max_power).reshape(1, 1)
    _, ref = brute_force_phase(real, A, P, cfg, OracleGrid(phase_points=32))
    assert sol.sum_rate_bps >= 0.98 * ref


def test_alternate_trace_monotone_and_bounded(default_cfg):
    for seed in (0, 1):
        real = synthesize_channels(default_cfg, seed=seed)
        sol, rep = alternate(real, default_cfg)
        trace = np.asarray(rep.objective_trace)
        assert len(trace) == rep.iterations + 1
        assert np.all(np.diff(trace) >= -1e-6 * np.abs(trace[:-1]))
        assert sol.sum_rate_bps <= objective_upper_bound(real, default_cfg)
        assert sol.feasible


def test_alternate_idempotent_at_convergence(default_cfg):
    real = synthesize_channels(default_cfg, seed=3)
    sol, rep = alternate(real, default_cfg)
    state = sol.allocation
    c = sol.coefficient.c
    base = sol.sum_rate_bps
    # re-running the allocation stage from the converged point barely moves
    state2, _ = solve_allocation(real, c, default_cfg)
    again = evaluate_objective(state2.A, state2.P, c, real, default_cfg)
    assert again >= base * (1 - 1e-3)
    assert abs(again - base) <= 1e-3 * base + 1e-6
    # and so does the coefficient stage
    xi_table = build_xi_table(state.P, real, default_cfg)
    coeff2, _ = sca_penalty_loop(xi_table, state.A, c, default_cfg)
    again = evaluate_objective(state.A, state.P, coeff2.c, real, default_cfg)
    assert abs(again - base) <= 1e-3 * base + 1e-6


def test_alternate_infeasible_flagging():
    cfg = tiny_config(min_rate=1e12)
    real = synthesize_channels(cfg, seed=4)
    sol, rep = alternate(real, cfg, AoParams(max_rounds=2))
    assert rep.infeasible
    assert not sol.feasible
