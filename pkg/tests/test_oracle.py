import math

import numpy as np
import pytest

from risuplink import (InstanceTooLargeError, default_config, gamma_table,
                       synthesize_channels)
from risuplink.oracle import OracleGrid, brute_force_allocation, brute_force_phase

from conftest import tiny_config


def test_grid_validation():
    with pytest.raises(ValueError):
        OracleGrid(power_points=4)
    with pytest.raises(ValueError):
        OracleGrid(phase_points=2)


def test_alloc_oracle_single_user_full_power():
    cfg = tiny_config(num_users=1, num_subcarriers=1, total_bandwidth=1e6)
    gamma = np.array([[4.2e9]])
    A, P, obj = brute_force_allocation(gamma, cfg)
    assert A[0, 0]
    assert P[0, 0] == pytest.approx(cfg.max_power[0])
    assert obj == pytest.approx(1e6 * math.log2(1 + 0.2 * 4.2e9))


def test_alloc_oracle_dominant_channel():
    cfg = tiny_config(num_users=2, num_subcarriers=1, total_bandwidth=1e6)
    gamma = np.array([[4.0], [1.0]]) * 1e2
    A, P, obj = brute_force_allocation(gamma, cfg)
    assert A[0, 0] and not A[1, 0]


def test_alloc_oracle_monotone_under_refinement():
    cfg = tiny_config(total_bandwidth=2e6)
    rng = np.random.default_rng(0)
    gamma = rng.gamma(2.0, 1.0, size=(2, 2)) * 1e8
    objs = [brute_force_allocation(gamma, cfg, OracleGrid(power_points=g))[2]
            for g in (8, 16, 32, 64)]
    assert all(b >= a - 1e-9 for a, b in zip(objs, objs[1:]))


def test_alloc_oracle_deterministic():
    cfg = tiny_config(total_bandwidth=2e6)
    rng = np.random.default_rng(1)
    gamma = rng.gamma(2.0, 1.0, size=(2, 2)) * 1e8
    a = brute_force_allocation(gamma, cfg)
    b = brute_force_allocation(gamma, cfg)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2] == b[2]


def test_alloc_oracle_rejects_large():
    cfg = default_config()
    with pytest.raises(InstanceTooLargeError):
        brute_force_allocation(np.ones((5, 20)), cfg)


def test_phase_oracle_global_phase_invariance():
    cfg = tiny_config(num_users=1, num_subcarriers=1, ris_rows=1, ris_cols=1,
                      antenna_offset=0.01, total_bandwidth=1e6)
    real = synthesize_channels(cfg, seed=2)
    A = np.ones((1, 1), dtype=bool)
    P = np.asarray(cfg.max_power).reshape(1, 1)
    c, obj = brute_force_phase(real, A, P, cfg, OracleGrid(phase_points=8))
    # any single phase achieves the same objective
    gains = [abs(np.vdot(real.v[0, 0], np.array([np.exp(1j * phi)]))) ** 2
             for phi in np.linspace(0, 2 * np.pi, 7)]
    assert np.ptp(gains) <= 1e-9 * max(gains)


def test_phase_oracle_two_element_alignment():
    cfg = tiny_config(num_users=1, num_subcarriers=1, ris_rows=1, ris_cols=2,
                      antenna_offset=0.02, total_bandwidth=1e6)
    real = synthesize_channels(cfg, seed=3)
    A = np.ones((1, 1), dtype=bool)
    P = np.asarray(cfg.max_power).reshape(1, 1)
    grid = OracleGrid(phase_points=32)
    c, obj = brute_force_phase(real, A, P, cfg, grid)
    v = real.v[0, 0]
    aligned = v / np.abs(v)
    noise = cfg.noise_psd * cfg.subcarrier_bandwidth
    best_gain = (np.abs(v).sum()) ** 2
    analytic = cfg.subcarrier_bandwidth * math.log2(
        1 + P[0, 0] * best_gain * real.nu[0] / noise)
    # the grid optimum sits within one grid step of perfect alignment
    assert obj <= analytic + 1e-9
    worst_factor = math.cos(math.pi / grid.phase_points) ** 2
    gain_floor = worst_factor * best_gain
    floor = cfg.subcarrier_bandwidth * math.log2(
        1 + P[0, 0] * gain_floor * real.nu[0] / noise)
    assert obj >= floor - 1e-9


def test_phase_oracle_guards():
    cfg = tiny_config()
    real = synthesize_channels(cfg, seed=4)
    A = np.ones((2, 2), dtype=bool) & np.array([[True, False], [False, True]])
    P = np.where(A, 0.1, 0.0)
    with pytest.raises(InstanceTooLargeError):
        brute_force_phase(real, A, P, cfg, OracleGrid(phase_points=33))
    cfg5 = default_config()
    real5 = synthesize_channels(cfg5, seed=5)
    with pytest.raises(InstanceTooLargeError):
        brute_force_phase(real5, np.ones((5, 20), dtype=bool),
                          np.full((5, 20), 0.01), cfg5)
