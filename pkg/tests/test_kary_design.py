"""Tests for the k-ary design solver, its constraint assembly, and oracles."""

import itertools
import math
from collections import Counter

import numpy as np
import pytest

from fairldp.distribution import JointDistribution, delta
from fairldp.errors import (
    ConfigError,
    InfeasibleBudget,
    InvalidEpsilon,
    TooLarge,
)
from fairldp.kary_design import (
    FeasiblePoint,
    Infeasible,
    LinearConstraintSystem,
    Row,
    SolverConfig,
    assemble_constraints,
    brute_force_opt_k,
    fairness_rows_at,
    lp_feasible,
    matrix_from_vars,
    min_achievable_error,
    solve_opt_k,
    var_index,
)
from fairldp.mechanisms import (
    BinaryMechanism,
    grr_matrix,
    induced_distribution,
    matrix_of_binary,
    verify_ldp,
)

FIXTURE_DIST = ([0.5, 0.3, 0.2], [0.2, 0.5, 0.8])
# frozen from a converged grid-oracle run on the fixture at eps=1, zeta=0.55
FIXTURE_GRID_OBJECTIVE = 0.022369605322278607
FIXTURE_SOLVER_OBJECTIVE = 0.022360557463111053
FIXTURE_MIN_ERROR = 0.42020418279466154


def fixture_dist():
    return JointDistribution.from_rates(*FIXTURE_DIST)


def random_dist(rng, k):
    gp = rng.dirichlet(np.ones(k)) * 0.8 + 0.2 / k
    gp = gp / gp.sum()
    rates = rng.uniform(0.15, 0.85, k)
    while np.ptp(rates) < 0.15:
        rates = rng.uniform(0.15, 0.85, k)
    return JointDistribution.from_rates(gp, rates)


def grr_vars(k, epsilon):
    Q = grr_matrix(k, epsilon).entries
    x = np.zeros(k * (k - 1))
    for i in range(k):
        for j in range(k):
            if i != j:
                x[var_index(i, j, k)] = Q[i, j]
    return x


def static_rows_direct(dist, epsilon):
    """Independent re-derivation of the utility-free static system as A x <= b."""
    k = dist.k
    n = k * (k - 1)
    ee = math.exp(epsilon)
    pos = {}
    m = 0
    for i in range(k):
        for j in range(k):
            if i != j:
                pos[(i, j)] = m
                m += 1
    A, b = [], []
    for (i, j), col in pos.items():
        row = np.zeros(n)
        row[col] = -1.0
        A.append(row)
        b.append(0.0)
    for i in range(k):
        row = np.zeros(n)
        for a in range(k):
            if a != i:
                row[pos[(i, a)]] = 1.0
        A.append(row)
        b.append(1.0)
    for (i, j), col in pos.items():
        row = np.zeros(n)
        row[col] += 1.0
        for a in range(k):
            if a != i:
                row[pos[(i, a)]] += 1.0
        A.append(row)
        b.append(1.0)
        row = np.zeros(n)
        row[col] += 1.0
        for a in range(k):
            if a != j:
                row[pos[(j, a)]] += 1.0
        A.append(row)
        b.append(1.0)
        row = np.zeros(n)
        row[col] -= ee
        for a in range(k):
            if a != j:
                row[pos[(j, a)]] -= 1.0
        A.append(row)
        b.append(-1.0)
    error_coeffs = np.zeros(n)
    for (i, j), col in pos.items():
        error_coeffs[col] = dist.group_probs[i]
    return np.array(A), np.array(b), error_coeffs


def vertex_min_error(dist, epsilon):
    """Exact minimum reporting error by enumerating polytope vertices."""
    A, b, c = static_rows_direct(dist, epsilon)
    n = A.shape[1]
    combos = np.array(list(itertools.combinations(range(A.shape[0]), n)))
    best = math.inf
    for start in range(0, len(combos), 40_000):
        sel = combos[start : start + 40_000]
        bases = A[sel]
        rhs = b[sel]
        dets = np.abs(np.linalg.det(bases))
        good = dets > 1e-10
        if not good.any():
            continue
        xs = np.linalg.solve(bases[good], rhs[good][:, :, None])[:, :, 0]
        feas = np.all(xs @ A.T <= b + 1e-9, axis=1)
        if feas.any():
            best = min(best, float((xs[feas] @ c).min()))
    return best


def zoom_grid_min_error(dist, epsilon, steps=9, passes=10):
    """Axis-aligned zooming grid over off-diagonals minimizing reporting error."""
    k, n = dist.k, dist.k * (dist.k - 1)
    ee = math.exp(epsilon)
    tol = 1e-6
    lo, hi = np.zeros(n), np.ones(n)
    best, best_x = math.inf, None
    for _ in range(passes):
        axes = [np.linspace(lo[m], hi[m], steps) for m in range(n)]
        total = steps**n
        for start in range(0, total, 200_000):
            flat = np.arange(start, min(start + 200_000, total))
            digits = np.unravel_index(flat, (steps,) * n)
            cand = np.stack([axes[m][digits[m]] for m in range(n)], axis=1)
            Q = np.zeros((cand.shape[0], k, k))
            for i in range(k):
                for j in range(k):
                    if i != j:
                        Q[:, i, j] = cand[:, var_index(i, j, k)]
                Q[:, i, i] = 1.0 - Q[:, i].sum(axis=1)
            diag = Q[:, np.arange(k), np.arange(k)]
            ok = np.all(diag >= -tol, axis=1)
            ok &= np.all(diag[:, :, None] >= Q - tol, axis=(1, 2))
            ok &= np.all(diag[:, None, :] >= Q - tol, axis=(1, 2))
            ok &= np.all(Q.max(axis=1) <= ee * Q.min(axis=1) + tol, axis=1)
            if not ok.any():
                continue
            err = 1.0 - diag[ok] @ dist.group_probs
            pick = int(np.argmin(err))
            if err[pick] < best:
                best = float(err[pick])
                best_x = cand[ok][pick]
        width = (hi - lo) * 0.5
        lo = np.clip(best_x - width / 2.0, 0.0, 1.0)
        hi = np.clip(best_x + width / 2.0, 0.0, 1.0)
    return best


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig(epsilon=1.0, zeta=0.5)
        assert cfg.objective_tol == 1e-6
        assert cfg.feasibility_tol == 1e-9
        assert cfg.max_bisection_iters == 60

    def test_validation(self):
        with pytest.raises(InvalidEpsilon):
            SolverConfig(epsilon=0.0, zeta=0.5)
        with pytest.raises(ConfigError):
            SolverConfig(epsilon=1.0, zeta=1.5)
        with pytest.raises(ConfigError):
            SolverConfig(epsilon=1.0, zeta=-0.1)
        with pytest.raises(ConfigError):
            SolverConfig(epsilon=1.0, zeta=0.5, objective_tol=0.0)
        with pytest.raises(ConfigError):
            SolverConfig(epsilon=1.0, zeta=0.5, max_bisection_iters=0)


class TestAssembleConstraints:
    def test_counts_k2(self):
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        sys2 = assemble_constraints(d, SolverConfig(1.0, 0.5))
        assert sys2.num_vars == 2
        assert len(sys2.rows) == 11

    def test_counts_k3(self):
        sys3 = assemble_constraints(fixture_dist(), SolverConfig(1.0, 0.3))
        assert sys3.num_vars == 6
        assert len(sys3.rows) == 28
        kinds = Counter(r.label.split("(")[0] for r in sys3.rows)
        assert kinds == {
            "truth_own": 6,
            "truth_tgt": 6,
            "ldp": 6,
            "mass": 3,
            "nonneg": 6,
            "utility": 1,
        }

    def test_canonical_order_k2(self):
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        labels = [r.label for r in assemble_constraints(d, SolverConfig(1.0, 0.5)).rows]
        assert labels == [
            "truth_own(0,1)",
            "truth_tgt(0,1)",
            "truth_own(1,0)",
            "truth_tgt(1,0)",
            "ldp(0,1)",
            "ldp(1,0)",
            "mass(0)",
            "mass(1)",
            "nonneg(0,1)",
            "nonneg(1,0)",
            "utility",
        ]

    def test_identity_violates_only_ldp(self):
        sys3 = assemble_constraints(fixture_dist(), SolverConfig(1.0, 0.3))
        x = np.zeros(sys3.num_vars)
        for row in sys3.rows:
            if row.label.startswith("ldp"):
                assert row.slack(x) < 0.0
            else:
                assert row.slack(x) >= -1e-12

    def test_grr_point_is_feasible(self):
        d = fixture_dist()
        sys3 = assemble_constraints(d, SolverConfig(1.0, 0.6))
        x = grr_vars(3, 1.0)
        assert sys3.satisfied(x, 1e-12)


class TestFairnessRows:
    def test_shape_and_labels(self):
        rows = fairness_rows_at(fixture_dist(), 0.2)
        assert len(rows) == 6
        assert [r.label for r in rows] == [
            "fair_hi(0)",
            "fair_lo(0)",
            "fair_hi(1)",
            "fair_lo(1)",
            "fair_hi(2)",
            "fair_lo(2)",
        ]

    def test_negative_target_rejected(self):
        with pytest.raises(ValueError):
            fairness_rows_at(fixture_dist(), -0.1)

    def test_fair_data_at_zero_target(self):
        d = JointDistribution.from_rates([0.5, 0.3, 0.2], [0.4, 0.4, 0.4])
        rows = fairness_rows_at(d, 0.0)
        identity = np.zeros(6)
        uniform = np.full(6, 1.0 / 3.0)
        for x in (identity, uniform):
            assert all(r.slack(x) >= -1e-12 for r in rows)

    def test_max_target_implied_by_static(self):
        d = fixture_dist()
        t_max = max(1.0 / d.pos_marginal - 1.0, 1.0)
        rows = fairness_rows_at(d, t_max)
        static = assemble_constraints(d, SolverConfig(1.0, 1.0))
        point = lp_feasible(static)
        assert isinstance(point, FeasiblePoint)
        candidates = [point.x] + [grr_vars(3, e) for e in (0.3, 1.0, 3.0)]
        for x in candidates:
            assert all(r.slack(x) >= -1e-9 for r in rows)

    def test_binary_cross_path(self):
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        rng = np.random.default_rng(64)
        for _ in range(200):
            p, q = rng.uniform(0.5, 1.0, 2)
            t = float(rng.uniform(0.0, 1.2))
            achieved = delta(
                induced_distribution(d, matrix_of_binary(BinaryMechanism(p, q)))
            )
            if abs(achieved - t) < 1e-9:
                continue
            x = np.array([1.0 - p, 1.0 - q])
            satisfied = all(r.slack(x) >= -1e-12 for r in fairness_rows_at(d, t))
            assert satisfied == (achieved <= t)


class TestLpFeasible:
    def test_single_variable_band(self):
        rows = [
            Row(np.array([1.0]), ">=", 0.5, "floor"),
            Row(np.array([1.0]), "<=", 1.0, "cap"),
            Row(np.array([1.0]), ">=", 0.0, "sign"),
        ]
        result = lp_feasible(LinearConstraintSystem(1, rows))
        assert isinstance(result, FeasiblePoint)
        assert 0.5 - 1e-9 <= result.x[0] <= 1.0 + 1e-9

    def test_contradiction(self):
        rows = [
            Row(np.array([1.0]), ">=", 0.7, "floor"),
            Row(np.array([1.0]), "<=", 0.3, "cap"),
        ]
        assert isinstance(lp_feasible(LinearConstraintSystem(1, rows)), Infeasible)

    def test_sound_against_rejection_sampling(self):
        rng = np.random.default_rng(1234)
        for margin in (0.8, 0.15):
            A = rng.normal(size=(20, 6))
            center = np.full(6, 0.5)
            b = A @ center + margin
            rows = [
                Row(A[i], "<=", float(b[i]), f"r{i}") for i in range(20)
            ] + [
                Row(np.eye(6)[i], ">=", 0.0, f"lo{i}") for i in range(6)
            ] + [
                Row(np.eye(6)[i], "<=", 1.0, f"hi{i}") for i in range(6)
            ]
            system = LinearConstraintSystem(6, rows)
            found = False
            for _ in range(10):
                pts = rng.uniform(0.0, 1.0, size=(1_000_000, 6))
                if np.any(np.all(pts @ A.T <= b, axis=1)):
                    found = True
                    break
            if found:
                assert isinstance(lp_feasible(system), FeasiblePoint)


class TestSolveOptK:
    def test_fixture_budget_below_error_floor(self):
        with pytest.raises(InfeasibleBudget) as err:
            solve_opt_k(fixture_dist(), SolverConfig(1.0, 0.3))
        assert err.value.epsilon == 1.0
        assert err.value.zeta == 0.3

    def test_zero_error_budget_never_feasible(self):
        # zeta=0 forces the identity matrix, which no finite budget allows
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        with pytest.raises(InfeasibleBudget):
            solve_opt_k(d, SolverConfig(2.0, 0.0))

    def test_fair_data_solved_at_zero(self):
        d = JointDistribution.from_rates([0.5, 0.3, 0.2], [0.4, 0.4, 0.4])
        res = solve_opt_k(d, SolverConfig(1.0, 0.6))
        assert res.objective <= 1e-9
        assert res.certificate.iterations == [(0.0, 0.0)]

    def test_tiny_epsilon_full_error_budget(self):
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        res = solve_opt_k(d, SolverConfig(0.01, 1.0))
        assert res.objective <= 1e-6

    def test_fixture_regression(self):
        res = solve_opt_k(fixture_dist(), SolverConfig(1.0, 0.55))
        assert res.objective == pytest.approx(FIXTURE_SOLVER_OBJECTIVE, abs=1e-6)
        assert abs(res.objective - FIXTURE_GRID_OBJECTIVE) <= 2e-3

    def test_solution_validity(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            k = int(rng.integers(2, 4))
            d = random_dist(rng, k)
            eps = float(rng.uniform(0.5, 2.0))
            grr_err = 1.0 - float(
                np.diag(grr_matrix(k, eps).entries) @ d.group_probs
            )
            zeta = min(1.0, grr_err * 1.5)
            res = solve_opt_k(d, SolverConfig(eps, zeta))
            Q = res.Q.entries
            assert verify_ldp(res.Q, eps)
            assert Q.sum(axis=1) == pytest.approx(np.ones(k), abs=1e-9)
            diag = np.diag(Q)
            assert np.all(diag[:, None] >= Q - 1e-9)
            assert np.all(diag[None, :] >= Q - 1e-9)
            assert float(diag @ d.group_probs) >= 1.0 - zeta - 1e-9
            assert res.objective == pytest.approx(
                delta(induced_distribution(d, res.Q)), abs=1e-8
            )
            assert min(res.certificate.slacks.values()) >= -1e-9

    def test_objective_inside_final_interval(self):
        res = solve_opt_k(fixture_dist(), SolverConfig(1.0, 0.55))
        lo, hi = res.certificate.iterations[-1]
        assert lo - 1e-7 <= res.objective <= hi + 1e-7

    def test_bisection_trace_is_nested(self):
        res = solve_opt_k(fixture_dist(), SolverConfig(1.0, 0.55))
        trace = res.certificate.iterations
        assert len(trace) > 1
        for (lo1, hi1), (lo2, hi2) in zip(trace, trace[1:]):
            assert lo2 >= lo1 - 1e-15
            assert hi2 <= hi1 + 1e-15
            assert lo2 <= hi2

    def test_deterministic(self):
        cfg = SolverConfig(1.0, 0.55)
        a = solve_opt_k(fixture_dist(), cfg)
        b = solve_opt_k(fixture_dist(), cfg)
        assert np.array_equal(a.Q.entries, b.Q.entries)
        assert a.objective == b.objective

    def test_dominates_grr_when_grr_feasible(self):
        rng = np.random.default_rng(17)
        for _ in range(3):
            k = int(rng.integers(2, 4))
            d = random_dist(rng, k)
            eps = float(rng.uniform(0.5, 2.0))
            grr = grr_matrix(k, eps)
            grr_err = 1.0 - float(np.diag(grr.entries) @ d.group_probs)
            zeta = min(1.0, grr_err + 0.05)
            res = solve_opt_k(d, SolverConfig(eps, zeta))
            assert res.objective <= delta(induced_distribution(d, grr)) + 1e-6

    def test_json_shape(self):
        payload = solve_opt_k(fixture_dist(), SolverConfig(1.0, 0.55)).to_json_dict()
        assert set(payload) == {
            "k",
            "epsilon",
            "zeta",
            "objective",
            "entries",
            "certificate",
        }
        assert payload["k"] == 3
        assert set(payload["certificate"]) == {"iterations", "slacks"}
        assert len(payload["entries"]) == 3
        assert "utility" in payload["certificate"]["slacks"]


class TestBruteForce:
    def test_size_guards(self):
        d4 = JointDistribution.from_rates(
            [0.25, 0.25, 0.25, 0.25], [0.2, 0.4, 0.6, 0.8]
        )
        with pytest.raises(TooLarge):
            brute_force_opt_k(d4, SolverConfig(1.0, 0.8), 9)
        with pytest.raises(TooLarge):
            brute_force_opt_k(fixture_dist(), SolverConfig(1.0, 0.8), 26)
        with pytest.raises(ValueError):
            brute_force_opt_k(fixture_dist(), SolverConfig(1.0, 0.8), 1)

    def test_fixture_regression(self):
        Qg, og = brute_force_opt_k(fixture_dist(), SolverConfig(1.0, 0.55), 9)
        assert og == pytest.approx(FIXTURE_GRID_OBJECTIVE, abs=1e-9)
        assert abs(og - FIXTURE_SOLVER_OBJECTIVE) <= 2e-3
        assert Qg.shape == (3, 3)
        assert Qg.sum(axis=1) == pytest.approx(np.ones(3), abs=1e-9)

    def test_binary_agreement_with_solver(self):
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        cfg = SolverConfig(1.0, 0.5)
        res = solve_opt_k(d, cfg)
        _, og = brute_force_opt_k(d, cfg, 21)
        assert abs(og - res.objective) <= 5e-3

    def test_fair_data(self):
        d = JointDistribution.from_rates([0.5, 0.3, 0.2], [0.4, 0.4, 0.4])
        _, og = brute_force_opt_k(d, SolverConfig(1.0, 0.6), 9)
        assert og <= 1e-4

    def test_infeasible_budget(self):
        with pytest.raises(InfeasibleBudget):
            brute_force_opt_k(fixture_dist(), SolverConfig(1.0, 0.3), 9)


class TestMinAchievableError:
    def test_large_budget_vanishes(self):
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        assert min_achievable_error(d, 20.0) < 1e-6

    def test_monotone_in_epsilon(self):
        d = fixture_dist()
        vals = [min_achievable_error(d, e) for e in (0.25, 0.5, 1.0, 2.0, 4.0)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_balanced_binary_matches_symmetric_vertex(self):
        # for near-balanced groups the optimum keeps both off-diagonals equal,
        # which pins the error at 1/(e^eps + 1) regardless of the group split
        d = JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7])
        for eps in (0.5, 1.0, 2.0):
            expected = 1.0 / (math.exp(eps) + 1.0)
            assert min_achievable_error(d, eps) == pytest.approx(expected, abs=1e-9)

    def test_skewed_binary_slides_to_truthfulness_cap(self):
        # p0 >> p1 makes it cheaper to keep group 0 honest and push group 1 to
        # its truthfulness cap: error = p0/(2 e^eps) + p1/2
        d = JointDistribution.from_rates([0.95, 0.05], [0.3, 0.6])
        expected = 0.95 / (2.0 * math.e) + 0.05 / 2.0
        assert min_achievable_error(d, 1.0) == pytest.approx(expected, abs=1e-9)

    def test_vertex_enumeration_agreement(self):
        for dist, eps in [
            (fixture_dist(), 1.0),
            (JointDistribution.from_rates([0.95, 0.05], [0.3, 0.6]), 1.0),
            (JointDistribution.from_rates([0.4, 0.6], [0.25, 0.7]), 2.0),
        ]:
            lp_value = min_achievable_error(dist, eps)
            assert lp_value == pytest.approx(vertex_min_error(dist, eps), abs=1e-9)

    def test_fixture_value(self):
        assert min_achievable_error(fixture_dist(), 1.0) == pytest.approx(
            FIXTURE_MIN_ERROR, abs=1e-9
        )

    def test_zoom_grid_upper_bound(self):
        d = fixture_dist()
        lp_value = min_achievable_error(d, 1.0)
        grid_value = zoom_grid_min_error(d, 1.0)
        assert grid_value >= lp_value - 1e-6
        assert grid_value - lp_value <= 5e-3


class TestMatrixFromVars:
    def test_round_trip(self):
        Q = grr_matrix(3, 1.0).entries
        x = grr_vars(3, 1.0)
        assert matrix_from_vars(x, 3) == pytest.approx(Q, abs=1e-15)

    def test_var_index_layout(self):
        assert [var_index(0, 1, 3), var_index(0, 2, 3)] == [0, 1]
        assert [var_index(1, 0, 3), var_index(1, 2, 3)] == [2, 3]
        assert [var_index(2, 0, 3), var_index(2, 1, 3)] == [4, 5]
        with pytest.raises(ValueError):
            var_index(1, 1, 3)
