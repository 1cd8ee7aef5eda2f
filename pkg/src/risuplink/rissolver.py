"""RIS transmissive-coefficient design for a fixed allocation.

The nonconvex unit-disc coefficient problem is lifted to a Hermitian PSD
matrix variable with per-element diagonal caps; the rank-one requirement is
rewritten as the difference of two convex functions, trace(C) - ||C||_2,
moved to the objective with a penalty weight, and the spectral norm is
minorized by its tangent plane at the current iterate.  Each round then
maximizes a concave objective (sum of logs of affine functionals plus linear
terms) over {C PSD, diag(C) <= 1} with the per-user rate floors as convex
constraints; the inner solve is delegated to a conic interior-point/ADMM
backend through cvxpy.  Because the minorant touches the spectral norm at
the expansion point, every accepted round cannot decrease the penalized
objective, and escalating the penalty squeezes the rank-one gap to zero,
after which the leading eigenpair of C is the coefficient vector.

Inner-solver accuracy contract: relative objective error <= 1e-6 and
constraint violation <= 1e-8 (after the eigenvalue-clipping projection that
restores exact PSD feasibility).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import cvxpy as cp

from .channel import ChannelRealization
from .config import SystemConfig
from .errors import SolverError

LN2 = math.log(2.0)

__all__ = [
    "TransmissiveCoefficient", "XiTable", "ScaParams", "ScaReport",
    "build_xi_table", "penalty_term", "sca_lower_bound", "top_eigenpair",
    "extract_coefficient", "warm_start_coefficient", "solve_subproblem_p6",
    "sca_penalty_loop", "export_coefficient_csv", "export_sca_trace_csv",
]


@dataclass(frozen=True)
class TransmissiveCoefficient:
    """Coefficient vector c, its lifted matrix C and extraction diagnostics.

    ``rank_one_gap`` is (tr C - ||C||_2)/tr C of the returned matrix;
    ``objective_ratio`` is the rate achieved by the extracted vector divided
    by the rate of the lifted matrix (1.0 for an exactly rank-one C).
    """

    c: np.ndarray
    C: np.ndarray
    rank_one_gap: float
    objective_ratio: float


@dataclass(frozen=True)
class XiTable:
    """Per-pair power-to-noise factors Xi and cascaded outer products.

    Xi[k, n] = p_kn nu_k / (N0 W).  The rank-one matrices V_kn = v v^H are
    produced on demand by :meth:`V` to keep memory proportional to the
    number of pairs actually used.
    """

    xi: np.ndarray          # (K, N)
    v: np.ndarray           # (K, N, M) cascaded vectors

    def __post_init__(self):
        if np.any(self.xi < 0) or not np.all(np.isfinite(self.xi)):
            raise ValueError("Xi entries must be finite and nonnegative")

    def V(self, k: int, n: int) -> np.ndarray:
        vec = self.v[k, n]
        return np.outer(vec, vec.conj())


@dataclass
class ScaParams:
    """Penalty-loop knobs; all strictly positive."""

    xi_init: float | None = None   # bit/s per unit trace; None -> xi_scale*rate0/trC0
    xi_scale: float = 0.01
    xi_growth: float = 5.0
    inner_eps: float = 1e-8        # conic solver tolerance (normalized units)
    sca_tol: float = 1e-5          # relative objective change for exit
    max_rounds: int = 12
    rank_gap_target: float = 1e-6
    gap_shrink_factor: float = 0.5  # bump xi when the gap shrinks slower than this
    solver_order: tuple = ("SCS", "CLARABEL")


@dataclass
class ScaReport:
    rounds: int = 0
    converged: bool = False
    gap_warning: bool = False
    infeasible: bool = False
    statuses: list = field(default_factory=list)
    # trace columns: (round, objective_bps, rank_gap, xi, qos_min_slack_bps)
    trace: list = field(default_factory=list)
    ascent_ok: list = field(default_factory=list)


def build_xi_table(P: np.ndarray, real: ChannelRealization, cfg: SystemConfig) -> XiTable:
    noise = cfg.noise_psd * cfg.subcarrier_bandwidth
    return XiTable(xi=P * real.nu[:, None] / noise, v=real.v)


def _check_hermitian(C: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    C = np.asarray(C, dtype=complex)
    scale = np.linalg.norm(C)
    if scale > 0 and np.linalg.norm(C - C.conj().T) > tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    return (C + C.conj().T) / 2.0


def top_eigenpair(C: np.ndarray):
    """(largest eigenvalue, unit eigenvector) with a deterministic phase.

    The eigenvector is rotated so its largest-magnitude entry (first index on
    ties) is real and positive; any top eigenvector yields a valid spectral
    subgradient, so degenerate leading eigenvalues need no special casing
    beyond this fixed choice.
    """
    vals, vecs = np.linalg.eigh(C)
    u = vecs[:, -1]
    idx = int(np.argmax(np.abs(u)))
    if abs(u[idx]) > 0:
        u = u * np.exp(-1j * np.angle(u[idx]))
    return float(vals[-1]), u


def penalty_term(C: np.ndarray) -> float:
    """trace(C) - sigma_1(C); nonnegative on the PSD cone, zero iff rank <= 1."""
    C = _check_hermitian(C)
    sigma1, _ = top_eigenpair(C)
    return float(np.trace(C).real) - sigma1


def sca_lower_bound(C: np.ndarray, C_t: np.ndarray) -> float:
    """Tangent-plane minorant of the spectral norm at C_t, evaluated at C."""
    C = _check_hermitian(C)
    C_t = _check_hermitian(C_t)
    sigma1, u = top_eigenpair(C_t)
    return sigma1 + float(np.real(u.conj() @ (C - C_t) @ u))


def extract_coefficient(C: np.ndarray) -> np.ndarray:
    """Leading-eigenpair coefficient sqrt(sigma1) * u, magnitudes clipped to 1."""
    C = _check_hermitian(C)
    sigma1, u = top_eigenpair(C)
    if sigma1 <= 0:
        return np.zeros(C.shape[0], dtype=complex)
    c = math.sqrt(sigma1) * u
    mags = np.abs(c)
    over = mags > 1.0
    c[over] = c[over] / mags[over]
    return c


def warm_start_coefficient(real: ChannelRealization) -> np.ndarray:
    """Unit-modulus phases aligned to the strongest cascaded channel."""
    norms = np.linalg.norm(real.v, axis=2)
    k, n = np.unravel_index(np.argmax(norms), norms.shape)
    v = real.v[k, n]
    mags = np.abs(v)
    c = np.where(mags > 0, v / np.where(mags > 0, mags, 1.0), 1.0 + 0j)
    return c.astype(complex)


# ---- rate bookkeeping ---------------------------------------------------------

class _Terms:
    """The assigned (k, n) pairs with positive Xi, in solver order."""

    def __init__(self, xi_table: XiTable, A: np.ndarray, cfg: SystemConfig):
        self.w = cfg.subcarrier_bandwidth
        ks, ns = np.nonzero(A & (xi_table.xi > 0))
        keep = [i for i in range(ks.size)
                if np.linalg.norm(xi_table.v[ks[i], ns[i]]) > 0]
        self.users = ks[keep]
        self.subcarriers = ns[keep]
        self.xi = xi_table.xi[self.users, self.subcarriers]
        self.v = xi_table.v[self.users, self.subcarriers]     # (T, M)
        self.vnorm2 = np.sum(np.abs(self.v) ** 2, axis=1)
        self.v_unit = self.v / np.sqrt(self.vnorm2)[:, None] if len(keep) else self.v
        # term value: log2(1 + xi * vnorm2 * y) with y = v_unit^H C v_unit
        self.beta = 1.0 / (self.xi * self.vnorm2) if len(keep) else np.zeros(0)
        self.log_consts = np.log(self.xi * self.vnorm2) if len(keep) else np.zeros(0)
        self.qos_users = {}
        q = np.asarray(cfg.min_rate, dtype=float) / self.w
        for k in np.unique(self.users):
            if q[k] > 0:
                self.qos_users[int(k)] = (np.flatnonzero(self.users == k), q[k])

    @property
    def count(self) -> int:
        return self.users.size

    def y_values(self, C: np.ndarray) -> np.ndarray:
        """v_unit^H C v_unit per term, clipped at 0."""
        y = np.real(np.einsum("tm,mn,tn->t", self.v_unit.conj(), C, self.v_unit))
        return np.maximum(y, 0.0)

    def lifted_rate_bps(self, C: np.ndarray) -> float:
        y = self.y_values(C)
        return float(self.w * np.sum(np.log2(1.0 + self.xi * self.vnorm2 * y)))

    def vector_rate_bps(self, c: np.ndarray) -> float:
        gains = np.abs(self.v.conj() @ c) ** 2
        return float(self.w * np.sum(np.log2(1.0 + self.xi * gains)))

    def per_user_rate_bps(self, C: np.ndarray) -> dict:
        y = self.y_values(C)
        rates = self.w * np.log2(1.0 + self.xi * self.vnorm2 * y)
        return {k: float(rates[idx].sum()) for k, (idx, _q) in self.qos_users.items()}

    def qos_min_slack_bps(self, C: np.ndarray) -> float:
        if not self.qos_users:
            return math.inf
        rates = self.per_user_rate_bps(C)
        return min(rates[k] - self.qos_users[k][1] * self.w for k in self.qos_users)


class _P6Program:
    """One cvxpy program reused across SCA rounds (only the penalty changes)."""

    def __init__(self, terms: _Terms, M: int, params: ScaParams):
        self.terms = terms
        self.params = params
        self.C = cp.Variable((M, M), hermitian=True)
        self.S = cp.Parameter((M, M), hermitian=True)
        logs = []
        for t in range(terms.count):
            vu = terms.v_unit[t]
            y = cp.real(vu.conj()[None, :] @ self.C @ vu[:, None])
            logs.append(cp.log(terms.beta[t] + y[0, 0]))
        self.logs = logs
        objective = cp.sum(cp.hstack(logs)) / LN2 - cp.real(cp.trace(self.S @ self.C)) \
            if logs else -cp.real(cp.trace(self.S @ self.C))
        constraints = [self.C >> 0, cp.diag(cp.real(self.C)) <= 1.0]
        for k, (idx, q) in terms.qos_users.items():
            rhs = q * LN2 - float(terms.log_consts[idx].sum())
            constraints.append(cp.sum(cp.hstack([logs[i] for i in idx])) >= rhs)
        self.problem = cp.Problem(cp.Maximize(objective), constraints)

    def solve(self, xi_over_w: float, u: np.ndarray):
        M = u.size
        self.S.value = xi_over_w * (np.eye(M) - np.outer(u, u.conj()))
        status = None
        for solver in self.params.solver_order:
            try:
                if solver == "SCS":
                    self.problem.solve(solver=cp.SCS, warm_start=True,
                                       eps=self.params.inner_eps, max_iters=100000)
                else:
                    self.problem.solve(solver=getattr(cp, solver))
            except cp.error.SolverError:
                status = "solver_error"
                continue
            status = self.problem.status
            if status in ("optimal", "optimal_inaccurate"):
                break
            if status in ("infeasible", "infeasible_inaccurate"):
                return None, "infeasible"
        if self.C.value is None:
            return None, status or "failed"
        return _project_feasible(self.C.value), status


def _project_feasible(C: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues, then rescale if a diagonal cap is exceeded."""
    C = (C + C.conj().T) / 2.0
    vals, vecs = np.linalg.eigh(C)
    vals = np.maximum(vals, 0.0)
    C = (vecs * vals) @ vecs.conj().T
    C = (C + C.conj().T) / 2.0
    dmax = float(np.max(C.diagonal().real)) if C.shape[0] else 0.0
    if dmax > 1.0:
        C = C / dmax
    return C


def solve_subproblem_p6(xi_table: XiTable, A: np.ndarray, C_t: np.ndarray,
                        xi: float, cfg: SystemConfig,
                        params: ScaParams | None = None):
    """Single linearized-penalty solve around C_t with penalty weight xi.

    Returns (C, status); C is None when the QoS set is certified infeasible
    or the backend fails, with the reason in ``status``.
    """
    if params is None:
        params = ScaParams()
    terms = _Terms(xi_table, A, cfg)
    program = _P6Program(terms, cfg.num_elements, params)
    _, u = top_eigenpair(_check_hermitian(C_t))
    return program.solve(xi / cfg.subcarrier_bandwidth, u)


def sca_penalty_loop(xi_table: XiTable, A: np.ndarray, c_init: np.ndarray,
                     cfg: SystemConfig, params: ScaParams | None = None):
    """Drive the penalized lifted problem to a (near-)rank-one solution.

    Returns (TransmissiveCoefficient, ScaReport).  Rounds that fail to
    improve the penalized objective keep the previous iterate; a stalled
    rank-one gap escalates the penalty weight.  If the gap target is unmet at
    the round cap the best iterate is returned with ``gap_warning`` set.
    """
    if params is None:
        params = ScaParams()
    M = cfg.num_elements
    terms = _Terms(xi_table, A, cfg)
    report = ScaReport()

    C_t = np.outer(c_init, c_init.conj())
    if terms.count == 0:
        report.converged = True
        coeff = TransmissiveCoefficient(c=np.asarray(c_init, dtype=complex),
                                        C=C_t, rank_one_gap=0.0, objective_ratio=1.0)
        return coeff, report

    rate0 = terms.lifted_rate_bps(C_t)
    tr0 = max(float(np.trace(C_t).real), 1e-12)
    # a gentle initial penalty measurably beats a stiff one: the log objective
    # already concentrates C near rank one, and the stall rule escalates xi
    # whenever the gap refuses to close
    xi = params.xi_init if params.xi_init is not None \
        else params.xi_scale * max(rate0, cfg.subcarrier_bandwidth) / tr0

    def p5_value(C: np.ndarray, xi_val: float) -> float:
        return terms.lifted_rate_bps(C) - xi_val * penalty_term(C)

    program = _P6Program(terms, M, params)
    prev_gap = math.inf
    obj_prev = p5_value(C_t, xi)
    consecutive_rejects = 0
    for rnd in range(1, params.max_rounds + 1):
        report.rounds = rnd
        _, u = top_eigenpair(C_t)
        C_new, status = program.solve(xi / cfg.subcarrier_bandwidth, u)
        report.statuses.append(status)
        if C_new is None:
            report.infeasible = status == "infeasible"
            report.gap_warning = True
            break

        p5_old = p5_value(C_t, xi)
        p5_new = p5_value(C_new, xi)
        accepted = p5_new >= p5_old - 1e-12 * max(1.0, abs(p5_old))
        report.ascent_ok.append(p5_new >= p5_old - 1e-8 * max(1.0, abs(p5_old)))
        if accepted:
            C_t = C_new
            consecutive_rejects = 0
        else:
            consecutive_rejects += 1
        trC = max(float(np.trace(C_t).real), 1e-300)
        gap = penalty_term(C_t) / trC
        obj_now = p5_value(C_t, xi)
        report.trace.append((rnd, obj_now, gap, xi, terms.qos_min_slack_bps(C_t)))

        if gap <= params.rank_gap_target:
            report.converged = True
            break
        if consecutive_rejects >= 3:
            break
        rel_change = abs(obj_now - obj_prev) / max(1.0, abs(obj_prev))
        stalled = (not accepted) or gap > params.gap_shrink_factor * prev_gap \
            or rel_change < params.sca_tol
        if stalled:
            # flat objective or sluggish gap with rank-one unresolved: push harder
            xi *= params.xi_growth
            obj_prev = p5_value(C_t, xi)
        else:
            obj_prev = obj_now
        prev_gap = gap

    trC = max(float(np.trace(C_t).real), 1e-300)
    gap = penalty_term(C_t) / trC
    if gap > params.rank_gap_target and not report.infeasible:
        report.gap_warning = True
    c = extract_coefficient(C_t)
    lifted = terms.lifted_rate_bps(C_t)
    achieved = terms.vector_rate_bps(c)
    ratio = achieved / lifted if lifted > 0 else 1.0
    coeff = TransmissiveCoefficient(c=c, C=C_t, rank_one_gap=gap, objective_ratio=ratio)
    return coeff, report


# ---- file outputs -------------------------------------------------------------

def export_coefficient_csv(coeff: TransmissiveCoefficient, path) -> None:
    """Rows (m, re_c, im_c, magnitude)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "re_c", "im_c", "magnitude"])
        for m, cm in enumerate(coeff.c):
            writer.writerow([m, repr(float(cm.real)), repr(float(cm.imag)),
                             repr(float(abs(cm)))])


def export_sca_trace_csv(report: ScaReport, path) -> None:
    """Rows (round, objective, rank_gap, xi, qos_min_slack)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "objective", "rank_gap", "xi", "qos_min_slack"])
        for row in report.trace:
            writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
