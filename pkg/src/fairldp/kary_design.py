"""Disparity-minimizing k-ary mechanism design via bisection over LP feasibility.

The design problem minimizes the worst per-output relative disparity of the
released attribute subject to privacy, truthfulness, and utility constraints.
For a fixed disparity target t every constraint is linear in the off-diagonal
mechanism entries, and feasibility is monotone in t, so bisection over a
linear-feasibility oracle finds the optimum.  A multi-pass grid search over
the raw matrix entries (`brute_force_opt_k`) serves as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .distribution import JointDistribution, delta
from .errors import (
    ConfigError,
    InfeasibleBudget,
    InvalidEpsilon,
    NumericalFailure,
    TooLarge,
)
from .mechanisms import MechanismMatrix, induced_distribution

LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True)
class SolverConfig:
    """Budgets and tolerances for the k-ary design solver."""

    epsilon: float
    zeta: float
    objective_tol: float = 1e-6
    feasibility_tol: float = 1e-9
    max_bisection_iters: int = 60

    def __post_init__(self):
        if not math.isfinite(self.epsilon) or self.epsilon <= 0.0:
            raise InvalidEpsilon(self.epsilon)
        if not 0.0 <= self.zeta <= 1.0:
            raise ConfigError(f"zeta must lie in [0, 1], got {self.zeta}")
        if self.objective_tol <= 0.0 or self.feasibility_tol <= 0.0:
            raise ConfigError("tolerances must be positive")
        if self.max_bisection_iters < 1:
            raise ConfigError("max_bisection_iters must be at least 1")


@dataclass(frozen=True)
class Row:
    """One linear constraint: coeffs @ x <relation> bound."""

    coeffs: np.ndarray
    relation: str
    bound: float
    label: str

    def __post_init__(self):
        if self.relation not in ("<=", ">="):
            raise ValueError(f"unknown relation {self.relation!r}")

    def slack(self, x: np.ndarray) -> float:
        value = float(self.coeffs @ x)
        if self.relation == "<=":
            return self.bound - value
        return value - self.bound


@dataclass(frozen=True)
class LinearConstraintSystem:
    """Constraints over the k(k-1) off-diagonal mechanism entries."""

    num_vars: int
    rows: list[Row]

    def __post_init__(self):
        for row in self.rows:
            if row.coeffs.shape != (self.num_vars,):
                raise ValueError(f"row {row.label} has wrong arity")
            if not math.isfinite(row.bound):
                raise ValueError(f"row {row.label} has non-finite bound")

    def extended(self, extra: list[Row]) -> "LinearConstraintSystem":
        return LinearConstraintSystem(self.num_vars, self.rows + extra)

    def slacks(self, x: np.ndarray) -> dict[str, float]:
        return {row.label: row.slack(x) for row in self.rows}

    def satisfied(self, x: np.ndarray, tol: float) -> bool:
        return all(s >= -tol for s in self.slacks(x).values())


@dataclass(frozen=True)
class FeasiblePoint:
    x: np.ndarray


@dataclass(frozen=True)
class Infeasible:
    pass


@dataclass(frozen=True)
class Certificate:
    """Bisection trace plus labeled constraint slacks at the returned point."""

    iterations: list[tuple[float, float]]
    slacks: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "iterations": [[lo, hi] for lo, hi in self.iterations],
            "slacks": dict(self.slacks),
        }


@dataclass(frozen=True)
class KaryDesignResult:
    Q: MechanismMatrix
    objective: float
    certificate: Certificate
    epsilon: float
    zeta: float

    def to_json_dict(self) -> dict:
        return {
            "k": self.Q.k,
            "epsilon": self.epsilon,
            "zeta": self.zeta,
            "objective": self.objective,
            "entries": self.Q.entries.tolist(),
            "certificate": self.certificate.to_json_dict(),
        }


def var_index(i: int, j: int, k: int) -> int:
    """Position of off-diagonal entry (i, j) in the flattened variable vector."""
    if i == j:
        raise ValueError("diagonal entries are not variables")
    return i * (k - 1) + (j if j < i else j - 1)


def matrix_from_vars(x: np.ndarray, k: int) -> np.ndarray:
    """Rebuild the full mechanism matrix, diagonals from the row-mass identity."""
    Q = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i != j:
                Q[i, j] = x[var_index(i, j, k)]
        Q[i, i] = 1.0 - Q[i].sum()
    return Q


def assemble_constraints(
    dist: JointDistribution, cfg: SolverConfig
) -> LinearConstraintSystem:
    """Static constraint system: truthfulness, privacy, row mass, sign, utility.

    Canonical row order: for each ordered pair (i, j), i != j, a truthfulness
    row against the sender's own diagonal then one against the target's
    (2k(k-1) rows); the reduced privacy rows per ordered pair (k(k-1)); the k
    row-mass rows; the k(k-1) non-negativity rows; the single utility row.
    """
    k = dist.k
    n = k * (k - 1)
    ee = math.exp(cfg.epsilon)
    p = dist.group_probs
    rows: list[Row] = []

    # q_ij <= q_ii and q_ij <= q_jj, with diagonals substituted out
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            own = np.zeros(n)
            for a in range(k):
                if a != i:
                    own[var_index(i, a, k)] += 1.0
            own[var_index(i, j, k)] += 1.0
            rows.append(Row(own, "<=", 1.0, f"truth_own({i},{j})"))
            tgt = np.zeros(n)
            tgt[var_index(i, j, k)] += 1.0
            for a in range(k):
                if a != j:
                    tgt[var_index(j, a, k)] += 1.0
            rows.append(Row(tgt, "<=", 1.0, f"truth_tgt({i},{j})"))

    # q_jj <= e^eps q_ij, i.e. the strongest pairwise privacy ratio per column
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            c = np.zeros(n)
            for a in range(k):
                if a != j:
                    c[var_index(j, a, k)] -= 1.0
            c[var_index(i, j, k)] -= ee
            rows.append(Row(c, "<=", -1.0, f"ldp({i},{j})"))

    for i in range(k):
        c = np.zeros(n)
        for a in range(k):
            if a != i:
                c[var_index(i, a, k)] = 1.0
        rows.append(Row(c, "<=", 1.0, f"mass({i})"))

    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            c = np.zeros(n)
            c[var_index(i, j, k)] = 1.0
            rows.append(Row(c, ">=", 0.0, f"nonneg({i},{j})"))

    # sum_i p_i (1 - q_ii) <= zeta
    c = np.zeros(n)
    for i in range(k):
        for a in range(k):
            if a != i:
                c[var_index(i, a, k)] = p[i]
    rows.append(Row(c, "<=", float(cfg.zeta), "utility"))

    return LinearConstraintSystem(n, rows)


def fairness_rows_at(dist: JointDistribution, t: float) -> list[Row]:
    """Linearized per-output disparity bounds |N_a / D_a - 1| <= t.

    N_a is the released positive mass at output a, D_a the released group mass
    scaled by the base positive rate; both are linear in the off-diagonal
    entries once diagonals are substituted out, and D_a > 0 on the feasible
    region, so each absolute-value bound becomes two linear rows.
    """
    if t < 0.0:
        raise ValueError("disparity target must be non-negative")
    k = dist.k
    n = k * (k - 1)
    p = dist.group_probs
    r = dist.pos_rates
    py = dist.pos_marginal
    rows: list[Row] = []
    for a in range(k):
        hi = np.zeros(n)
        lo = np.zeros(n)
        for j in range(k):
            if j == a:
                continue
            hi[var_index(j, a, k)] = r[j] * p[j] - (1.0 + t) * py * p[j]
            lo[var_index(j, a, k)] = (1.0 - t) * py * p[j] - r[j] * p[j]
        for c in range(k):
            if c == a:
                continue
            hi[var_index(a, c, k)] = (1.0 + t) * py * p[a] - r[a] * p[a]
            lo[var_index(a, c, k)] = r[a] * p[a] - (1.0 - t) * py * p[a]
        hi_bound = (1.0 + t) * py * p[a] - r[a] * p[a]
        lo_bound = r[a] * p[a] - (1.0 - t) * py * p[a]
        rows.append(Row(hi, "<=", float(hi_bound), f"fair_hi({a})"))
        rows.append(Row(lo, "<=", float(lo_bound), f"fair_lo({a})"))
    return rows


def _run_lp(system: LinearConstraintSystem, objective: np.ndarray):
    a_ub = np.empty((len(system.rows), system.num_vars))
    b_ub = np.empty(len(system.rows))
    for idx, row in enumerate(system.rows):
        if row.relation == "<=":
            a_ub[idx] = row.coeffs
            b_ub[idx] = row.bound
        else:
            a_ub[idx] = -row.coeffs
            b_ub[idx] = -row.bound
    return linprog(
        objective,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=(None, None),
        method="highs",
        options=LP_OPTIONS,
    )


def lp_feasible(
    system: LinearConstraintSystem, tol: float = 1e-9
) -> FeasiblePoint | Infeasible:
    """Find any point satisfying every row within tol, or certify none exists."""
    res = _run_lp(system, np.zeros(system.num_vars))
    if res.status == 2:
        return Infeasible()
    if res.status != 0:
        raise NumericalFailure(f"feasibility solve ended with status {res.status}")
    if not system.satisfied(res.x, tol):
        raise NumericalFailure("solver returned a point violating its own system")
    return FeasiblePoint(np.asarray(res.x))


def _utility_objective(dist: JointDistribution) -> np.ndarray:
    k = dist.k
    c = np.zeros(k * (k - 1))
    for i in range(k):
        for a in range(k):
            if a != i:
                c[var_index(i, a, k)] = dist.group_probs[i]
    return c


def solve_opt_k(dist: JointDistribution, cfg: SolverConfig) -> KaryDesignResult:
    """Minimize the worst per-output disparity subject to the static system.

    Bisects the disparity target: the target is feasible iff the fairness rows
    joined with the static system admit a point, and feasibility is monotone
    in the target.  Among mechanisms optimal at the final target, a second LP
    picks the one with the smallest expected reporting error.  The certificate
    records the bisection intervals and the labeled slacks of the returned
    point.
    """
    static = assemble_constraints(dist, cfg)
    if isinstance(lp_feasible(static, cfg.feasibility_tol), Infeasible):
        raise InfeasibleBudget(cfg.epsilon, cfg.zeta)

    def feasible_at(t: float) -> bool:
        system = static.extended(fairness_rows_at(dist, t))
        return isinstance(lp_feasible(system, cfg.feasibility_tol), FeasiblePoint)

    trace: list[tuple[float, float]] = []
    if feasible_at(0.0):
        t_star = 0.0
        trace.append((0.0, 0.0))
    else:
        lo = 0.0
        hi = max(1.0 / dist.pos_marginal - 1.0, 1.0)
        for _ in range(cfg.max_bisection_iters):
            if hi - lo <= cfg.objective_tol:
                break
            mid = 0.5 * (lo + hi)
            if feasible_at(mid):
                hi = mid
            else:
                lo = mid
            trace.append((lo, hi))
        t_star = hi

    final_system = static.extended(fairness_rows_at(dist, t_star))
    res = _run_lp(final_system, _utility_objective(dist))
    if res.status != 0:
        raise NumericalFailure(
            f"utility refinement ended with status {res.status} at t={t_star}"
        )
    x = np.asarray(res.x)
    if not final_system.satisfied(x, cfg.feasibility_tol):
        raise NumericalFailure("refined point violates the constraint system")

    Q = MechanismMatrix(dist.k, matrix_from_vars(x, dist.k))
    objective = delta(induced_distribution(dist, Q))
    certificate = Certificate(iterations=trace, slacks=final_system.slacks(x))
    return KaryDesignResult(
        Q=Q,
        objective=float(objective),
        certificate=certificate,
        epsilon=cfg.epsilon,
        zeta=cfg.zeta,
    )


def min_achievable_error(dist: JointDistribution, epsilon: float) -> float:
    """Smallest expected reporting error any compliant mechanism allows.

    Minimizes the utility-row left side over the static system without the
    utility row itself; error budgets below this value are unsatisfiable at
    the given privacy level.
    """
    cfg = SolverConfig(epsilon=epsilon, zeta=1.0)
    static = assemble_constraints(dist, cfg)
    trimmed = LinearConstraintSystem(
        static.num_vars, [row for row in static.rows if row.label != "utility"]
    )
    res = _run_lp(trimmed, _utility_objective(dist))
    if res.status != 0:
        raise NumericalFailure(f"error minimization ended with status {res.status}")
    return float(res.fun)


def _grid_feasible_mask(Q: np.ndarray, dist, ee: float, zeta: float, tol: float):
    # direct checks on the full matrices, independent of the LP row encoding
    k = dist.k
    diag = Q[:, np.arange(k), np.arange(k)]
    ok = np.all(diag >= -tol, axis=1)
    ok &= np.all(diag[:, :, None] >= Q - tol, axis=(1, 2))
    ok &= np.all(diag[:, None, :] >= Q - tol, axis=(1, 2))
    colmax = Q.max(axis=1)
    colmin = Q.min(axis=1)
    ok &= np.all(colmax <= ee * colmin + tol, axis=1)
    ok &= (diag @ dist.group_probs) >= 1.0 - zeta - tol
    return ok


def _grid_objective(Q: np.ndarray, dist) -> np.ndarray:
    weights = dist.group_probs * dist.pos_rates
    group_mass = np.einsum("i,nij->nj", dist.group_probs, Q)
    pos_mass = np.einsum("i,nij->nj", weights, Q)
    ratios = pos_mass / (dist.pos_marginal * group_mass)
    return np.abs(ratios - 1.0).max(axis=1)


def brute_force_opt_k(
    dist: JointDistribution, cfg: SolverConfig, grid_steps: int, passes: int = 12
) -> tuple[np.ndarray, float]:
    """Zooming grid search over raw off-diagonal entries; oracle for the solver.

    Evaluates every grid point of the off-diagonal box, keeps the best point
    passing direct constraint checks, then shrinks the box around it and
    repeats.  Zooming is sound here because the disparity objective has convex
    sublevel sets on the (convex) feasible region.  While no feasible point
    has been seen the box shrinks around the least-violating point instead.

    The first pass joins the uniform grid with geometric points anchored at
    exp(-epsilon): at tight budgets the feasible off-diagonals live in windows
    of that scale near the privacy-tight boundary, which a uniform grid
    straddles entirely until its cells are far finer than the zoom ever
    reaches from a bad start.  Refinement passes likewise splice in the
    privacy floor of each column diagonal, estimated from the current center,
    so privacy-tight coordinates snap to their boundary instead of hoping a
    uniform cell lands on it.  After the first descent the whole zoom runs
    once more from a medium-width box around the incumbent: floor anchors
    computed from a good center can pull coordinates the first descent
    committed wrongly while its center was still poor.  Extra candidate
    values never cost soundness: every point still has to pass the direct
    constraint checks.
    """
    k = dist.k
    n = k * (k - 1)
    if k > 3:
        raise TooLarge(f"grid oracle supports k <= 3, got k={k}")
    if grid_steps > 25:
        raise TooLarge(f"grid oracle supports at most 25 steps, got {grid_steps}")
    if grid_steps < 2:
        raise ValueError("grid_steps must be at least 2")
    if passes < 1:
        raise ValueError("passes must be at least 1")

    ee = math.exp(cfg.epsilon)
    tol = 1e-9
    chunk = 200_000
    # never shrink past two grid cells of margin around the zoom center, so a
    # best point displaced by constraint filtering cannot push the true
    # optimum outside the next box
    shrink = max(0.5, 4.0 / (grid_steps - 1))
    seed_axis = np.unique(
        np.concatenate(
            [
                np.linspace(0.0, 1.0, grid_steps),
                np.geomspace(max(1.0 / ee / 2.0, 1e-6), 1.0, 7),
            ]
        )
    )
    best_x = None
    best_val = math.inf
    fallback_x = None
    fallback_viol = math.inf
    center = None
    for descent in range(2):
        if descent == 0:
            lo = np.zeros(n)
            hi = np.ones(n)
        else:
            if best_x is None:
                break
            center = best_x
            lo = np.clip(center - 0.175, 0.0, 1.0)
            hi = np.clip(center + 0.175, 0.0, 1.0)
        for p in range(passes):
            if descent == 0 and p == 0:
                axes = [seed_axis for _ in range(n)]
            else:
                axes = [np.linspace(lo[m], hi[m], grid_steps) for m in range(n)]
                diag = np.array(
                    [
                        1.0
                        - sum(
                            center[var_index(j, c, k)] for c in range(k) if c != j
                        )
                        for j in range(k)
                    ]
                )
                for m in range(n):
                    r = m % (k - 1)
                    j = r if r < m // (k - 1) else r + 1
                    extra = np.array([diag[j] / ee, diag[j], center[m], 1.0 / k])
                    ax = np.concatenate([axes[m], extra])
                    axes[m] = np.unique(ax[(ax >= lo[m]) & (ax <= hi[m])])
            shape = tuple(ax.size for ax in axes)
            total = int(np.prod(shape))
            pass_best_x, pass_best_val = None, math.inf
            for start in range(0, total, chunk):
                flat = np.arange(start, min(start + chunk, total))
                digits = np.unravel_index(flat, shape)
                cand = np.stack([axes[m][digits[m]] for m in range(n)], axis=1)
                Q = np.zeros((cand.shape[0], k, k))
                for i in range(k):
                    for j in range(k):
                        if i != j:
                            Q[:, i, j] = cand[:, var_index(i, j, k)]
                    Q[:, i, i] = 1.0 - Q[:, i].sum(axis=1)
                ok = _grid_feasible_mask(Q, dist, ee, cfg.zeta, tol)
                if ok.any():
                    vals = _grid_objective(Q[ok], dist)
                    pick = int(np.argmin(vals))
                    if vals[pick] < pass_best_val:
                        pass_best_val = float(vals[pick])
                        pass_best_x = cand[ok][pick]
                elif best_x is None and pass_best_x is None:
                    viol = _violation_score(Q, dist, ee, cfg.zeta)
                    pick = int(np.argmin(viol))
                    if viol[pick] < fallback_viol:
                        fallback_viol = float(viol[pick])
                        fallback_x = cand[pick]
            if pass_best_val < best_val:
                best_val = pass_best_val
                best_x = pass_best_x
            center = best_x if best_x is not None else fallback_x
            width = (hi - lo) * shrink
            lo = np.clip(center - width / 2.0, 0.0, 1.0)
            hi = np.clip(center + width / 2.0, 0.0, 1.0)

    if best_x is None:
        raise InfeasibleBudget(cfg.epsilon, cfg.zeta)
    return matrix_from_vars(best_x, k), best_val


def _violation_score(Q: np.ndarray, dist, ee: float, zeta: float) -> np.ndarray:
    k = dist.k
    diag = Q[:, np.arange(k), np.arange(k)]
    score = np.clip(-diag, 0.0, None).sum(axis=1)
    score += np.clip(Q - diag[:, :, None], 0.0, None).sum(axis=(1, 2))
    score += np.clip(Q - diag[:, None, :], 0.0, None).sum(axis=(1, 2))
    score += np.clip(Q.max(axis=1) - ee * Q.min(axis=1), 0.0, None).sum(axis=1)
    score += np.clip(1.0 - zeta - diag @ dist.group_probs, 0.0, None)
    return score
