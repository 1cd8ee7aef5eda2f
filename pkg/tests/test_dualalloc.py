import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risuplink import (DualSolveParams, allocation_criterion, assign_subcarriers,
                       default_config, export_allocation_csv, export_dual_trace_csv,
                       gamma_table, power_step, solve_allocation,
                       solve_allocation_from_gamma, synthesize_channels,
                       update_multipliers, waterfill_budget)
from risuplink.dualalloc import LAMBDA_FLOOR, GammaTable
from risuplink.oracle import OracleGrid, brute_force_allocation

from conftest import tiny_config

LN2 = math.log(2.0)


# ---- gamma table ---------------------------------------------------------------

def test_gamma_table_zero_coefficient(default_real, default_cfg):
    g = gamma_table(default_real, np.zeros(25, dtype=complex), default_cfg)
    assert np.all(g.values == 0)


def test_gamma_table_unit_scalar_case():
    # M=1, |v|=1, c=1, nu=1, N0 W = 1  ->  Gamma = 1
    class FakeReal:
        v = np.array([[[1.0 + 0j]]])
        nu = np.array([1.0])

    class FakeCfg:
        noise_psd = 1.0
        subcarrier_bandwidth = 1.0

    g = gamma_table(FakeReal(), np.array([1.0 + 0j]), FakeCfg())
    assert g.values[0, 0] == pytest.approx(1.0)


def test_gamma_table_matches_literal_product(default_real, default_cfg):
    rng = np.random.default_rng(5)
    c = np.exp(1j * rng.uniform(0, 2 * np.pi, 25))
    table = gamma_table(default_real, c, default_cfg).values
    noise = default_cfg.noise_psd * default_cfg.subcarrier_bandwidth
    for k, n in [(0, 0), (3, 11), (4, 19)]:
        literal = np.abs(default_real.h[n].conj() @ np.diag(default_real.g[k, n]) @ c) ** 2
        assert table[k, n] == pytest.approx(literal * default_real.nu[k] / noise, rel=1e-10)


def test_gamma_table_rejects_negative():
    with pytest.raises(ValueError):
        GammaTable(np.array([[-1.0]]))


# ---- closed-form steps ---------------------------------------------------------

def test_power_step_examples():
    assert power_step(1 / LN2, 0.0, 1.0, 1.0) == pytest.approx(0.0)
    assert power_step(1 / (2 * LN2), 0.0, 1.0, 1.0) == pytest.approx(1.0)
    # Gamma -> inf approaches the water level (W + mu)/(lambda ln2)
    assert power_step(1 / (2 * LN2), 0.0, 1e12, 1.0) == pytest.approx(2.0, rel=1e-9)
    assert power_step(0.5, 0.0, 0.0, 1.0) == 0.0


def test_power_step_zero_lambda_is_clamped_finite():
    p = power_step(0.0, 0.0, 1.0, 1.0)
    assert np.isfinite(p)
    assert p == pytest.approx(1.0 / (LAMBDA_FLOOR * LN2) - 1.0)


def test_allocation_criterion_examples():
    assert allocation_criterion(0.0, 5.0, 1.0, 0.0) == 0.0
    # p* Gamma = 1, W = 1, mu = 0
    assert allocation_criterion(1.0, 1.0, 1.0, 0.0) == pytest.approx(
        0.2786524795555183, rel=1e-12)


def test_allocation_criterion_monotone_in_load():
    # finite-difference check on a grid of p* Gamma
    xs = np.linspace(0.01, 50, 300)
    chi = allocation_criterion(xs, 1.0, 1.0, 0.0)
    assert np.all(np.diff(chi) > 0)
    assert np.all(chi >= 0)


@settings(max_examples=60, deadline=None)
@given(p=st.floats(0, 1e3), g=st.floats(0, 1e6), mu=st.floats(0, 1e3))
def test_allocation_criterion_nonnegative(p, g, mu):
    chi = allocation_criterion(p, g, 1.0, mu)
    assert chi >= 0.0
    if p * g == 0:
        assert chi == 0.0


def test_assign_subcarriers_rules():
    chi = np.array([[0.0, 3.0, 2.0], [0.0, 1.0, 2.0]])
    p = np.ones_like(chi)
    A = assign_subcarriers(chi, p)
    assert not A[:, 0].any()               # all-zero column unassigned
    assert A[0, 1] and not A[1, 1]         # strict argmax
    assert A[0, 2] and not A[1, 2]         # tie -> lowest user index
    assert np.all(A.sum(axis=0) <= 1)


def test_update_multipliers_signs_and_projection():
    lam = np.array([2.0])
    mu = np.array([1.0])
    budgets = np.array([0.5])
    q = np.array([3.0])
    # exactly met constraints: no movement
    l2, m2 = update_multipliers(lam, mu, np.array([0.5]), np.array([3.0]),
                                budgets, q, 0.1, 0.1)
    assert l2[0] == pytest.approx(2.0) and m2[0] == pytest.approx(1.0)
    # overuse by delta raises lambda by step*delta
    l2, _ = update_multipliers(lam, mu, np.array([0.7]), q, budgets, q, 0.1, 0.1)
    assert l2[0] == pytest.approx(2.0 + 0.1 * 0.2)
    # projection keeps multipliers at zero under slack constraints
    l2, m2 = update_multipliers(np.array([0.0]), np.array([0.0]), np.array([0.1]),
                                np.array([5.0]), budgets, q, 1e9, 1e-9)
    assert l2[0] == 0.0


def test_waterfill_budget_level_set():
    g = np.array([5.0, 1.0, 0.2, 7.0])
    p = waterfill_budget(g, 2.0)
    assert p.sum() == pytest.approx(2.0, rel=1e-12)
    levels = (p + 1.0 / g)[p > 0]
    assert np.std(levels) <= 1e-12 * np.mean(levels)
    # channels too weak to reach the level get nothing
    assert np.all(p >= 0)


# ---- the full dual solve -------------------------------------------------------

def test_solve_single_user_single_carrier():
    cfg = tiny_config(num_users=1, num_subcarriers=1, total_bandwidth=1e6)
    real = synthesize_channels(cfg, seed=3)
    c = np.ones(cfg.num_elements, dtype=complex)
    state, report = solve_allocation(real, c, cfg)
    gamma = gamma_table(real, c, cfg).values[0, 0]
    # the single user spends the whole budget
    assert state.A[0, 0]
    assert state.P[0, 0] == pytest.approx(cfg.max_power[0], rel=1e-9)
    # lambda settles at the closed-form water price
    lam_star = cfg.subcarrier_bandwidth * gamma / ((1 + cfg.max_power[0] * gamma) * LN2)
    assert state.lam[0] == pytest.approx(lam_star, rel=0.05)
    assert report.converged


def test_solve_all_zero_gamma():
    cfg = tiny_config()
    real = synthesize_channels(cfg, seed=4)
    state, report = solve_allocation(real, np.zeros(4, dtype=complex), cfg)
    assert not state.A.any()
    assert np.all(state.P == 0)
    assert report.best_primal_bps == 0.0


def test_solve_two_user_oracle_equivalence():
    cfg = tiny_config(total_bandwidth=2e6)
    for seed in range(5):
        real = synthesize_channels(cfg, seed=seed)
        rng = np.random.default_rng(seed + 100)
        c = np.exp(1j * rng.uniform(0, 2 * np.pi, cfg.num_elements))
        gamma = gamma_table(real, c, cfg).values
        state, report = solve_allocation_from_gamma(gamma, cfg)
        mine = report.best_primal_bps
        _, _, ref = brute_force_allocation(gamma, cfg, OracleGrid(power_points=16))
        assert mine >= 0.98 * ref


def test_solve_invariants_and_slackness(default_real, default_cfg):
    c = np.exp(1j * np.linspace(0, 3, 25))
    state, report = solve_allocation(default_real, c, default_cfg)
    state.check_invariants(np.asarray(default_cfg.max_power))
    # exclusivity is exact
    assert np.all(state.A.sum(axis=0) <= 1)
    # every assigned user exhausts its budget to machine precision
    used = state.P.sum(axis=1)
    for k in range(default_cfg.num_users):
        if state.A[k].any():
            assert used[k] == pytest.approx(default_cfg.max_power[k], rel=1e-12)
    # water-filling level sets per user
    gamma = gamma_table(default_real, c, default_cfg).values
    for k in range(default_cfg.num_users):
        mask = state.P[k] > 0
        if mask.sum() > 1:
            levels = state.P[k, mask] + 1.0 / gamma[k, mask]
            assert np.std(levels) <= 1e-6 * np.mean(levels)


def test_dual_value_bounds_primal_and_gap(default_real, default_cfg):
    c = np.exp(1j * np.linspace(0, 3, 25))
    state, report = solve_allocation(default_real, c, default_cfg)
    assert report.best_dual_bps >= report.best_primal_bps
    assert report.duality_gap <= 0.01
    # running best dual is non-increasing along the trace
    best = np.minimum.accumulate(report.trace_dual)
    assert np.all(np.diff(best) <= 1e-6 * np.abs(best[:-1]))


def test_dual_csv_exports(tmp_path, default_real, default_cfg):
    c = np.exp(1j * np.linspace(0, 3, 25))
    state, report = solve_allocation(default_real, c, default_cfg)
    gamma = gamma_table(default_real, c, default_cfg).values
    alloc = tmp_path / "alloc.csv"
    trace = tmp_path / "trace.csv"
    export_allocation_csv(state, gamma, default_cfg, alloc)
    export_dual_trace_csv(report, trace)
    lines = alloc.read_text().strip().splitlines()
    assert lines[0] == "k,n,assigned,power_W,rate_bps"
    assert len(lines) == 1 + 5 * 20
    assert trace.read_text().splitlines()[0] == \
        "iter,k,lambda,mu,power_residual,rate_residual"


def test_qos_infeasible_flagged():
    # a rate floor far beyond capacity must be reported, not crash
    cfg = tiny_config(min_rate=1e12)
    real = synthesize_channels(cfg, seed=6)
    c = np.ones(4, dtype=complex)
    params = DualSolveParams(max_iter=4000, mu_ceiling=1e5)
    state, report = solve_allocation(real, c, cfg, params)
    assert report.qos_infeasible
