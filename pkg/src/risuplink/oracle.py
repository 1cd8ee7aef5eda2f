"""Brute-force reference solvers for tiny instances (test-only).

These enumerate the decision space on a grid and are deliberately
independent of the production solvers: the allocation oracle tries every
assignment pattern with gridded power splits, the phase oracle tries every
unit-modulus phase combination.  Refining a grid keeps all coarse points,
so the oracle objective is monotone under refinement.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization
from .config import SystemConfig
from .errors import InstanceTooLargeError

_MAX_STATES = 10 ** 8

__all__ = ["OracleGrid", "brute_force_allocation", "brute_force_phase"]


@dataclass(frozen=True)
class OracleGrid:
    """Grid resolutions; amplitudes in the phase search are fixed at 1."""

    power_points: int = 16
    phase_points: int = 16

    def __post_init__(self):
        if self.power_points < 8 or self.phase_points < 8:
            raise ValueError("grid resolutions must be at least 8")


def brute_force_allocation(gamma: np.ndarray, cfg: SystemConfig,
                           grid: OracleGrid = OracleGrid()):
    """Exhaustive assignment x gridded power search for the allocation problem.

    Returns (A, P, objective_bps).  Assignments are all maps of each
    subcarrier to one user or to nobody; for each assignment every user's
    budget is split over its subcarriers on a uniform grid (sums capped at
    the budget) and patterns violating a positive rate floor are discarded.
    The result is a valid lower bound on the true optimum that tightens as
    the grid refines.
    """
    K, N = gamma.shape
    if K * N > 8:
        raise InstanceTooLargeError(f"K*N = {K*N} exceeds the oracle limit of 8")
    states = (K + 1) ** N * (grid.power_points + 1) ** N
    if states > _MAX_STATES:
        raise InstanceTooLargeError(f"~{states:.2e} states exceed the oracle guard")

    w = cfg.subcarrier_bandwidth
    budgets = np.asarray(cfg.max_power, dtype=float)
    floors = np.asarray(cfg.min_rate, dtype=float)

    def best_user_rate(k: int, cols: tuple) -> tuple[float, np.ndarray] | None:
        """Highest rate (normalized) for user k over its columns, or None."""
        g = gamma[k, list(cols)]
        m = len(cols)
        pts = np.linspace(0.0, budgets[k], grid.power_points + 1)
        combos = np.stack(np.meshgrid(*([pts] * m), indexing="ij"), axis=-1).reshape(-1, m)
        combos = combos[combos.sum(axis=1) <= budgets[k] * (1 + 1e-12)]
        rates = np.log2(1.0 + combos * g).sum(axis=1)
        idx = int(np.argmax(rates))
        if w * rates[idx] < floors[k]:
            return None
        return float(rates[idx]), combos[idx]

    best_obj = -1.0
    bestA = np.zeros((K, N), dtype=bool)
    bestP = np.zeros((K, N))
    cache: dict = {}
    for owners in itertools.product(range(-1, K), repeat=N):
        total = 0.0
        per_user = {}
        feasible = True
        for k in range(K):
            cols = tuple(n for n in range(N) if owners[n] == k)
            if not cols:
                if floors[k] > 0:
                    feasible = False
                    break
                continue
            key = (k, cols)
            if key not in cache:
                cache[key] = best_user_rate(k, cols)
            entry = cache[key]
            if entry is None:
                feasible = False
                break
            total += entry[0]
            per_user[k] = (cols, entry[1])
        if feasible and total > best_obj:
            best_obj = total
            bestA = np.zeros((K, N), dtype=bool)
            bestP = np.zeros((K, N))
            for k, (cols, powers) in per_user.items():
                bestA[k, list(cols)] = True
                bestP[k, list(cols)] = powers
    if best_obj < 0:
        return bestA, bestP, 0.0
    return bestA, bestP, w * best_obj


def brute_force_phase(real: ChannelRealization, A: np.ndarray, P: np.ndarray,
                      cfg: SystemConfig, grid: OracleGrid = OracleGrid(phase_points=32)):
    """Exhaustive unit-modulus phase search for the coefficient problem.

    Returns (c, objective_bps).  Candidates are lexicographic over the phase
    grid per element; ties keep the first candidate, so the result does not
    depend on evaluation chunking.
    """
    M = cfg.num_elements
    if M > 4:
        raise InstanceTooLargeError(f"M = {M} exceeds the phase-oracle limit of 4")
    if grid.phase_points > 32:
        raise InstanceTooLargeError("phase grid above 32 points")
    if grid.phase_points ** M > _MAX_STATES:
        raise InstanceTooLargeError("phase enumeration exceeds the oracle guard")

    w = cfg.subcarrier_bandwidth
    noise = cfg.noise_psd * w
    ks, ns = np.nonzero(np.asarray(A, dtype=bool) & (P > 0))
    vs = real.v[ks, ns]                      # (T, M)
    xi = P[ks, ns] * real.nu[ks] / noise     # (T,)

    phases = np.exp(2j * math.pi * np.arange(grid.phase_points) / grid.phase_points)
    best_rate = -1.0
    best_c = np.ones(M, dtype=complex)
    chunk = []
    batch = 4096

    def flush(best_rate, best_c):
        if not chunk:
            return best_rate, best_c
        cand = np.array(chunk)                       # (B, M)
        gains = np.abs(cand @ vs.conj().T) ** 2      # (B, T)
        rates = w * np.log2(1.0 + xi * gains).sum(axis=1)
        i = int(np.argmax(rates))
        if rates[i] > best_rate:
            best_rate = float(rates[i])
            best_c = cand[i].copy()
        chunk.clear()
        return best_rate, best_c

    for combo in itertools.product(range(grid.phase_points), repeat=M):
        chunk.append(phases[list(combo)])
        if len(chunk) >= batch:
            best_rate, best_c = flush(best_rate, best_c)
    best_rate, best_c = flush(best_rate, best_c)
    if best_rate < 0:
        return best_c, 0.0
    return best_c, best_rate
