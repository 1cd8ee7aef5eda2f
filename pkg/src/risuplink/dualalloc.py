"""Joint power and subcarrier allocation by Lagrangian dual decomposition.

For a fixed RIS coefficient the allocation subproblem is convex after
relaxing the binary assignment, and the dual iteration alternates a
closed-form multi-user water-filling step, a per-subcarrier assignment
criterion and projected subgradient updates of the two multiplier vectors
(power price lambda, QoS price mu).

Unit convention: the dual machinery measures per-user rate in subcarrier
spectral-efficiency units, rho_k = sum_n a_kn log2(1 + p_kn Gamma_kn), and
the QoS floor enters as q_k = r_k_min / W in the same units; reported rates
are W * rho_k in bit/s.  This keeps the closed-form power step
p* = [(W + mu)/(lambda ln2) - 1/Gamma]+ and the allocation criterion exactly
in the stated form.

The primal iterate reported for an assignment is recovered by exact per-user
water-filling of the full power budget over the user's assigned subcarriers
(the budget constraint is always active at an optimum because rate is
strictly increasing in power), which satisfies the budget to machine
precision and makes p + 1/Gamma constant on the positive-power set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization
from .config import SystemConfig

LN2 = math.log(2.0)
LAMBDA_FLOOR = 1e-12
MU_CEILING = 1e6

__all__ = [
    "GammaTable", "AllocationState", "DualSolveParams", "DualReport",
    "gamma_table", "power_step", "allocation_criterion", "assign_subcarriers",
    "update_multipliers", "waterfill_budget", "solve_allocation",
    "export_allocation_csv", "export_dual_trace_csv",
]


@dataclass(frozen=True)
class GammaTable:
    """Effective channel-to-noise ratio per (user, subcarrier)."""

    values: np.ndarray  # (K, N), >= 0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("Gamma entries must be finite and nonnegative")
        object.__setattr__(self, "values", vals)
        vals.setflags(write=False)


@dataclass
class AllocationState:
    """Assignment matrix, powers and the dual prices that produced them."""

    A: np.ndarray          # (K, N) bool
    P: np.ndarray          # (K, N) W, zero wherever A is zero
    lam: np.ndarray        # (K,) power price
    mu: np.ndarray         # (K,) QoS price
    iteration: int

    def check_invariants(self, budgets: np.ndarray, tol: float = 1e-9):
        assert np.all(self.A.sum(axis=0) <= 1), "a subcarrier is doubly assigned"
        assert np.all(self.P >= 0)
        assert np.all(self.P[~self.A] == 0), "power on an unassigned pair"
        assert np.all(self.lam >= 0) and np.all(self.mu >= 0)
        used = self.P.sum(axis=1)
        assert np.all(used <= budgets * (1 + tol) + tol)


@dataclass
class DualSolveParams:
    """Knobs of the dual iteration.

    The multiplier updates use diminishing relative steps: at iteration i the
    stepsize fed to the subgradient update is chosen so that the multiplier
    moves by at most theta/sqrt(i) of its own magnitude, scaled by the
    residual relative to the budget (for lambda) or the rate floor (for mu).
    """

    theta_lambda: float = 0.4
    theta_mu: float = 0.4
    eps: float = 1e-10            # multiplier convergence threshold (relative)
    max_iter: int = 1500
    gap_tol: float = 1e-4         # duality-gap certificate for early exit
    stall_window: int = 200
    mu_ceiling: float = MU_CEILING
    polish_swaps: bool = True


@dataclass
class DualReport:
    converged: bool
    iterations: int
    exit_reason: str
    best_primal_bps: float
    best_dual_bps: float
    qos_infeasible: bool
    power_slackness: np.ndarray   # lambda_k * (pmax_k - used_k)
    rate_slackness: np.ndarray    # mu_k * (rate_k - rmin_k), bit/s
    trace_iter: list = field(default_factory=list)
    trace_lambda: list = field(default_factory=list)
    trace_mu: list = field(default_factory=list)
    trace_power_residual: list = field(default_factory=list)
    trace_rate_residual: list = field(default_factory=list)
    trace_dual: list = field(default_factory=list)

    @property
    def duality_gap(self) -> float:
        if self.best_dual_bps == 0:
            return 0.0
        return (self.best_dual_bps - self.best_primal_bps) / abs(self.best_dual_bps)


def gamma_table(real: ChannelRealization, c: np.ndarray, cfg: SystemConfig) -> GammaTable:
    """Gamma[k, n] = |v_kn^H c|^2 nu_k / (N0 W) for the given coefficient."""
    z = np.einsum("knm,m->kn", np.conj(real.v), c)
    noise = cfg.noise_psd * cfg.subcarrier_bandwidth
    return GammaTable(np.abs(z) ** 2 * real.nu[:, None] / noise)


def power_step(lam_k: float, mu_k: float, gamma_kn, w: float):
    """Water-filling power p* = [(W + mu)/(lambda ln2) - 1/Gamma]+.

    Accepts scalars or arrays in ``gamma_kn``; zero channel gets zero power.
    """
    gamma_kn = np.asarray(gamma_kn, dtype=float)
    level = (w + mu_k) / (max(lam_k, LAMBDA_FLOOR) * LN2)
    with np.errstate(divide="ignore"):
        p = np.where(gamma_kn > 0, np.maximum(level - 1.0 / np.where(gamma_kn > 0, gamma_kn, 1.0), 0.0), 0.0)
    return p if p.ndim else float(p)


def allocation_criterion(p_star, gamma_kn, w: float, mu_k: float):
    """Marginal value chi of handing the subcarrier to this user.

    chi = (W + mu) (log2(1 + p Gamma) - p Gamma / ((1 + p Gamma) ln2)) >= 0,
    zero exactly when p Gamma = 0.  log1p plus a clip keeps the analytically
    nonnegative difference from rounding below zero at tiny loads.
    """
    x = np.asarray(p_star, dtype=float) * np.asarray(gamma_kn, dtype=float)
    chi = (w + mu_k) / LN2 * np.maximum(np.log1p(x) - x / (1.0 + x), 0.0)
    return chi if chi.ndim else float(chi)


def assign_subcarriers(chi: np.ndarray, p_star: np.ndarray) -> np.ndarray:
    """Hard assignment: each subcarrier to its argmax-chi user when chi > 0.

    Ties break to the lowest user index (np.argmax convention); columns whose
    best chi is zero stay unassigned.
    """
    K, N = chi.shape
    A = np.zeros((K, N), dtype=bool)
    kbest = np.argmax(chi, axis=0)
    cols = np.arange(N)
    winners = chi[kbest, cols] > 0
    A[kbest[winners], cols[winners]] = True
    return A


def update_multipliers(lam, mu, used_power, rate_norm, budgets, q,
                       steps_lambda, steps_mu):
    """One projected subgradient step on (lambda, mu).

    lambda' = [lambda - step * (budget - used_power)]+
    mu'     = [mu     - step * (rate_norm - q)]+
    """
    lam_new = np.maximum(lam - steps_lambda * (budgets - used_power), 0.0)
    mu_new = np.maximum(mu - steps_mu * (rate_norm - q), 0.0)
    return lam_new, mu_new


def waterfill_budget(gamma_row: np.ndarray, budget: float) -> np.ndarray:
    """Exact water-filling of ``budget`` over channels ``gamma_row`` (> 0).

    Maximizes sum log2(1 + p g) subject to sum p = budget, p >= 0; the
    returned powers satisfy p + 1/g = const on the positive-power set.
    """
    inv = 1.0 / gamma_row
    inv_sorted = np.sort(inv)
    counts = np.arange(1, inv.size + 1)
    levels = (budget + np.cumsum(inv_sorted)) / counts
    active = np.flatnonzero(levels > inv_sorted)
    level = levels[active[-1]] if active.size else budget + inv_sorted[0]
    return np.maximum(level - inv, 0.0)


def _recover_primal(gamma: np.ndarray, A: np.ndarray, budgets: np.ndarray):
    """Exact powers for a fixed assignment; returns (P, rate_norm per user)."""
    K, N = gamma.shape
    P = np.zeros((K, N))
    for k in range(K):
        idx = np.flatnonzero(A[k] & (gamma[k] > 0))
        if idx.size:
            P[k, idx] = waterfill_budget(gamma[k, idx], budgets[k])
    rate_norm = np.log2(1.0 + P * gamma).sum(axis=1)
    return P, rate_norm


def _polish_assignment(gamma: np.ndarray, A: np.ndarray, budgets: np.ndarray,
                       q: np.ndarray, max_rounds: int = 3):
    """Greedy single-subcarrier reassignment until no move improves the rate.

    Counters the integrality loss of hard assignments on small instances;
    a move is accepted only if it improves the sum rate without newly
    violating any satisfied QoS floor.
    """
    K, N = gamma.shape
    A = A.copy()
    P, rate_norm = _recover_primal(gamma, A, budgets)
    ok_before = rate_norm >= q - 1e-12

    def user_rate(k, assigned_cols):
        idx = assigned_cols[gamma[k, assigned_cols] > 0]
        if idx.size == 0:
            return 0.0, np.zeros(0), idx
        p = waterfill_budget(gamma[k, idx], budgets[k])
        return np.log2(1.0 + p * gamma[k, idx]).sum(), p, idx

    for _ in range(max_rounds):
        improved = False
        owners = np.where(A.any(axis=0), np.argmax(A, axis=0), -1)
        for n in range(N):
            k0 = owners[n]
            for k1 in range(-1, K):
                if k1 == k0:
                    continue
                cand_owners = owners.copy()
                cand_owners[n] = k1
                affected = {k for k in (k0, k1) if k >= 0}
                delta = 0.0
                new_rates = {}
                feasible = True
                for k in affected:
                    cols = np.flatnonzero(cand_owners == k)
                    r_new, _, _ = user_rate(k, cols)
                    new_rates[k] = r_new
                    delta += r_new - rate_norm[k]
                    if ok_before[k] and r_new < q[k] - 1e-12:
                        feasible = False
                if feasible and delta > 1e-12 * max(1.0, rate_norm.sum()):
                    owners = cand_owners
                    for k, r_new in new_rates.items():
                        rate_norm[k] = r_new
                    improved = True
        if not improved:
            break
        A = np.zeros((K, N), dtype=bool)
        assigned = owners >= 0
        A[owners[assigned], np.flatnonzero(assigned)] = True
    P, rate_norm = _recover_primal(gamma, A, budgets)
    return A, P, rate_norm


def _repair_rate_floors(gamma: np.ndarray, A: np.ndarray, budgets: np.ndarray,
                        q: np.ndarray):
    """Hand starved users their cheapest subcarrier until floors are met.

    The subgradient price mu lifts a zero-rate user's allocation criterion
    only asymptotically; at a finite iteration count a user can exit with no
    subcarriers, violating its rate floor even when the floor is tiny.  This
    pass greedily reassigns, per deficient user, the column that costs the
    donor least while keeping every already-satisfied floor satisfied.
    Returns (A, satisfied) with A repaired in place of the input copy.
    """
    K, N = gamma.shape
    A = A.copy()
    _, rate = _recover_primal(gamma, A, budgets)

    def loss_of_column(k_from, n):
        if k_from < 0:
            return 0.0
        cols = np.flatnonzero(A[k_from] & (gamma[k_from] > 0))
        cols_after = cols[cols != n]
        if cols_after.size == 0:
            return rate[k_from]
        p = waterfill_budget(gamma[k_from, cols_after], budgets[k_from])
        return rate[k_from] - np.log2(1.0 + p * gamma[k_from, cols_after]).sum()

    for k in range(K):
        guard = 0
        while rate[k] < q[k] - 1e-12 and guard < N:
            guard += 1
            owners = np.where(A.any(axis=0), np.argmax(A, axis=0), -1)
            best = None
            for n in range(N):
                if gamma[k, n] <= 0 or owners[n] == k:
                    continue
                donor = owners[n]
                if donor >= 0:
                    cols = np.flatnonzero(A[donor] & (gamma[donor] > 0))
                    cols_after = cols[cols != n]
                    if cols_after.size:
                        p = waterfill_budget(gamma[donor, cols_after], budgets[donor])
                        donor_rate = np.log2(1.0 + p * gamma[donor, cols_after]).sum()
                    else:
                        donor_rate = 0.0
                    if rate[donor] >= q[donor] and donor_rate < q[donor] - 1e-12:
                        continue  # would just move the violation
                loss = loss_of_column(donor, n)
                if best is None or loss < best[0]:
                    best = (loss, n)
            if best is None:
                break
            n = best[1]
            A[:, n] = False
            A[k, n] = True
            _, rate = _recover_primal(gamma, A, budgets)
    satisfied = bool(np.all(rate >= q - 1e-12))
    return A, satisfied


def solve_allocation(real: ChannelRealization, c: np.ndarray, cfg: SystemConfig,
                     params: DualSolveParams | None = None):
    """Run the dual allocation loop for a fixed coefficient vector.

    Returns (AllocationState, DualReport).  The state carries the best primal
    iterate found (assignment + exact water-filled powers) together with the
    final multipliers; the report carries the dual trace and the duality-gap
    certificate.  Hitting the iteration cap yields converged=False rather
    than an exception; a runaway mu marks the QoS floor infeasible.
    """
    if params is None:
        params = DualSolveParams()
    gamma = gamma_table(real, c, cfg).values
    return solve_allocation_from_gamma(gamma, cfg, params)


def solve_allocation_from_gamma(gamma: np.ndarray, cfg: SystemConfig,
                                params: DualSolveParams | None = None):
    """Same as solve_allocation but starting from a precomputed Gamma table."""
    if params is None:
        params = DualSolveParams()
    K, N = gamma.shape
    w = cfg.subcarrier_bandwidth
    budgets = np.asarray(cfg.max_power, dtype=float)
    q = np.asarray(cfg.min_rate, dtype=float) / w

    pos = gamma > 0
    gsafe = np.where(pos, gamma, 1.0)
    # start each lambda at the water price the user would pay if it owned the
    # whole band at equal power split
    lam = (w / LN2) * np.mean(gamma / (1.0 + (budgets[:, None] / N) * gamma), axis=1)
    lam = np.maximum(lam, LAMBDA_FLOOR)
    mu = np.zeros(K)

    report = DualReport(
        converged=False, iterations=0, exit_reason="max_iter",
        best_primal_bps=-1.0, best_dual_bps=math.inf, qos_infeasible=False,
        power_slackness=np.zeros(K), rate_slackness=np.zeros(K),
    )
    bestA = np.zeros((K, N), dtype=bool)
    bestP = np.zeros((K, N))
    best_primal = -1.0
    best_dual = math.inf
    seen: set[bytes] = set()
    last_progress = 0
    cols = np.arange(N)

    it = 0
    for it in range(1, params.max_iter + 1):
        level = (w + mu) / (lam * LN2)
        p = np.maximum(level[:, None] - 1.0 / gsafe, 0.0)
        p[~pos] = 0.0
        x = p * gamma
        chi = (w + mu)[:, None] / LN2 * np.maximum(np.log1p(x) - x / (1.0 + x), 0.0)
        kbest = np.argmax(chi, axis=0)
        chimax = chi[kbest, cols]
        winners = chimax > 0

        # dual value in bit/s; chi, lambda and mu already carry the W scale
        g_dual_bps = chimax[winners].sum() + float(lam @ budgets) - float(mu @ q)
        if g_dual_bps < best_dual - 1e-6 * abs(best_dual):
            last_progress = it
        best_dual = min(best_dual, g_dual_bps)

        key = np.where(winners, kbest, -1).tobytes()
        if key not in seen:
            seen.add(key)
            last_progress = it
            A = np.zeros((K, N), dtype=bool)
            A[kbest[winners], cols[winners]] = True
            P, rate_norm = _recover_primal(gamma, A, budgets)
            prim = w * rate_norm.sum()
            if prim > best_primal:
                best_primal, bestA, bestP = prim, A, P

        used = np.zeros(K)
        rate_it = np.zeros(K)
        np.add.at(used, kbest[winners], p[kbest[winners], cols[winners]])
        np.add.at(rate_it, kbest[winners], np.log2(1.0 + x[kbest[winners], cols[winners]]))

        report.trace_iter.append(it)
        report.trace_lambda.append(lam.copy())
        report.trace_mu.append(mu.copy())
        report.trace_power_residual.append(budgets - used)
        report.trace_rate_residual.append(rate_it - q)
        report.trace_dual.append(g_dual_bps)

        if best_dual - best_primal <= params.gap_tol * abs(best_dual):
            report.exit_reason = "duality_gap"
            report.converged = True
            break
        if it - last_progress > params.stall_window:
            report.exit_reason = "stalled"
            report.converged = best_dual - best_primal <= 0.05 * abs(best_dual)
            break

        glam = budgets - used
        gmu = rate_it - q
        shrink = 1.0 / math.sqrt(it)
        steps_lambda = params.theta_lambda * shrink * lam / np.maximum(np.abs(glam), 0.05 * budgets)
        steps_mu = params.theta_mu * shrink * np.maximum(mu, 0.02 * w) / np.maximum(np.abs(gmu), 1e-12)
        lam_new, mu_new = update_multipliers(lam, mu, used, rate_it, budgets, q,
                                             steps_lambda, steps_mu)
        lam_new = np.maximum(lam_new, LAMBDA_FLOOR)
        dl = np.max(np.abs(lam_new - lam) / np.maximum(lam, LAMBDA_FLOOR))
        dm = np.max(np.abs(mu_new - mu) / np.maximum(np.abs(mu), 1.0))
        lam, mu = lam_new, mu_new
        if np.any(mu > params.mu_ceiling):
            report.qos_infeasible = True
            report.exit_reason = "qos_infeasible"
            break
        if max(dl, dm) < params.eps:
            report.exit_reason = "multipliers"
            report.converged = True
            break

    if params.polish_swaps and K * N <= 512:
        A2, P2, rn2 = _polish_assignment(gamma, bestA, budgets, q)
        prim2 = w * rn2.sum()
        if prim2 > best_primal:
            best_primal, bestA, bestP = prim2, A2, P2

    rate_norm = np.log2(1.0 + bestP * gamma).sum(axis=1)
    if np.any(rate_norm < q - 1e-12):
        bestA, floors_ok = _repair_rate_floors(gamma, bestA, budgets, q)
        bestP, rate_norm = _recover_primal(gamma, bestA, budgets)
        best_primal = w * rate_norm.sum()
        if not floors_ok:
            report.qos_infeasible = True
            report.exit_reason = "qos_infeasible"

    rates_bps = w * rate_norm

    used = bestP.sum(axis=1)
    report.iterations = it
    report.best_primal_bps = best_primal
    report.best_dual_bps = best_dual
    report.power_slackness = lam * (budgets - used)
    report.rate_slackness = mu * (rates_bps - np.asarray(cfg.min_rate))
    state = AllocationState(A=bestA, P=bestP, lam=lam, mu=mu, iteration=it)
    return state, report


# ---- file outputs ------------------------------------------------------------

def export_allocation_csv(state: AllocationState, gamma: np.ndarray,
                          cfg: SystemConfig, path) -> None:
    """Rows (k, n, assigned, power_W, rate_bps)."""
    w = cfg.subcarrier_bandwidth
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "n", "assigned", "power_W", "rate_bps"])
        K, N = state.A.shape
        for k in range(K):
            for n in range(N):
                rate = w * math.log2(1.0 + state.P[k, n] * gamma[k, n]) if state.A[k, n] else 0.0
                writer.writerow([k, n, int(state.A[k, n]),
                                 repr(float(state.P[k, n])), repr(float(rate))])


def export_dual_trace_csv(report: DualReport, path) -> None:
    """Rows (iter, k, lambda, mu, power_residual, rate_residual)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "k", "lambda", "mu", "power_residual", "rate_residual"])
        for i, lam, mu, pres, rres in zip(
            report.trace_iter, report.trace_lambda, report.trace_mu,
            report.trace_power_residual, report.trace_rate_residual,
        ):
            for k in range(lam.size):
                writer.writerow([i, k, repr(float(lam[k])), repr(float(mu[k])),
                                 repr(float(pres[k])), repr(float(rres[k]))])
