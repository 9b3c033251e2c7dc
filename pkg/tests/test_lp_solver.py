import itertools
import math
import os
import sys
import unittest

import numpy as np
import pytest
from scipy.optimize import linprog

# Add parent directory to path
parent_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, parent_dir)

from lp_solver import (LpBuilder, LpProblem, LpStatus, ProblemFormatError, RowSense,
                       SolverOptions, append_rows, format_lp, solve_lp, solve_milp,
                       validate_problem)


def build_problem(c, A, senses, b, lower, upper, integer=None):
    builder = LpBuilder(len(c))
    builder.set_cost(range(len(c)), c)
    for j, (lo, up) in enumerate(zip(lower, upper)):
        builder.set_bounds([j], lo, up, integer=bool(integer[j]) if integer is not None else False)
    for row, sense, rhs in zip(A, senses, b):
        builder.add_row({j: v for j, v in enumerate(row) if v != 0}, sense, rhs)
    return builder.build()


def vertex_optimum(c, A, senses, b, lower, upper, batch=20000):
    """Minimum of c @ x over every basic solution of a bounded polytope (inf if empty).

    Integer data only: a square subsystem is singular exactly when |det| < 0.5.
    """
    n = len(c)
    A = np.asarray(A, float).reshape(-1, n)
    b = np.asarray(b, float)
    is_eq = np.array([s == "=" for s in senses], dtype=bool)
    A_eq, b_eq = A[is_eq], b[is_eq]
    eye = np.eye(n)
    G = np.vstack([A[~is_eq], -eye, eye])
    h = np.concatenate([b[~is_eq], -np.asarray(lower, float), np.asarray(upper, float)])

    # a maximal independent set of equality rows spans the same affine set
    keep = []
    for i in range(len(A_eq)):
        if np.linalg.matrix_rank(A_eq[keep + [i]]) == len(keep) + 1:
            keep.append(i)
    E, e = A_eq[keep], b_eq[keep]
    k = n - len(keep)

    best = math.inf
    combos = itertools.combinations(range(len(G)), k)
    while True:
        chunk = list(itertools.islice(combos, batch))
        if not chunk:
            break
        idx = np.array(chunk, dtype=np.int64).reshape(len(chunk), k)
        M = np.concatenate([np.broadcast_to(E, (len(idx),) + E.shape), G[idx]], axis=1)
        rhs = np.concatenate([np.broadcast_to(e, (len(idx), len(e))), h[idx]], axis=1)
        square = np.abs(np.linalg.det(M)) > 0.5
        if not square.any():
            continue
        x = np.linalg.solve(M[square], rhs[square][..., None])[..., 0]
        ok = np.all(x @ G.T <= h + 1e-8 * (1 + np.abs(h)), axis=1)
        if len(A_eq):
            ok &= np.all(np.abs(x @ A_eq.T - b_eq) <= 1e-8 * (1 + np.abs(b_eq)), axis=1)
        if ok.any():
            best = min(best, float((x[ok] @ np.asarray(c, float)).min()))
    return best


def assert_matches_vertices(rng, count, max_vars, max_rows):
    for trial in range(count):
        n = int(rng.integers(1, max_vars + 1))
        m = int(rng.integers(1, max_rows + 1))
        c, A, senses, b, lower, upper = random_instance(rng, n, m, feasible=rng.random() < 0.8)
        p = build_problem(c, A, senses, b, lower, upper)
        solution = solve_lp(p)
        expected = vertex_optimum(c, A, senses, b, lower, upper)
        if math.isinf(expected):
            assert solution.status is LpStatus.INFEASIBLE, trial
        else:
            assert solution.status is LpStatus.OPTIMAL, trial
            assert abs(solution.objective_value - expected) <= 1e-6 * (1 + abs(expected)), trial
            assert_feasible(p, solution.x)


def random_instance(rng, n, m, eq_share=0.25, feasible=True, finite=True):
    A = rng.integers(-5, 6, size=(m, n)).astype(float)
    A[np.all(A == 0, axis=1), 0] = 1.0
    senses = ["=" if rng.random() < eq_share else "<=" for _ in range(m)]
    lower = rng.integers(-4, 1, size=n).astype(float)
    upper = lower + rng.integers(1, 6, size=n)
    if not finite:
        free = rng.random(n) < 0.4
        lower[free] = -np.inf
        upper[rng.random(n) < 0.4] = np.inf
    if feasible:
        x0 = np.where(np.isfinite(lower), lower, -3.0) + rng.random(n) * np.where(
            np.isfinite(upper - lower), upper - lower, 6.0)
        x0 = np.clip(x0, lower, upper)
        b = A @ x0 + np.where(np.array(senses) == "<=", rng.integers(0, 4, size=m), 0)
    else:
        b = rng.integers(-10, 11, size=m).astype(float)
    c = rng.integers(-5, 6, size=n).astype(float)
    return c, A, senses, b, lower, upper


def assert_feasible(p, x, tol=1e-7):
    activity = p.to_csr() @ x
    for i, sense in enumerate(p.row_sense):
        if sense is RowSense.EQ:
            assert abs(activity[i] - p.rhs[i]) <= tol
        else:
            assert activity[i] <= p.rhs[i] + tol
    assert np.all(x >= p.var_lower - 1e-9)
    assert np.all(x <= p.var_upper + 1e-9)


class TestLpBuilder(unittest.TestCase):

    def test_rows_are_sorted_and_merged(self):
        builder = LpBuilder(4)
        builder.add_row([(3, 1.0), (1, 2.0), (3, 1.5), (2, 0.0)], "<=", 4)
        p = builder.build()
        cols, vals = p.row(0)
        self.assertEqual(cols.tolist(), [1, 3])
        self.assertEqual(vals.tolist(), [2.0, 2.5])

    def test_abs_le_emits_two_rows(self):
        builder = LpBuilder(2)
        builder.set_bounds([0], -10, 10)
        builder.set_bounds([1], 0, np.inf)
        builder.set_cost([1], 1.0)
        builder.add_abs_le({0: 1.0}, -2.5, 1)
        p = builder.build()
        self.assertEqual(p.num_rows, 2)
        solution = solve_lp(p)
        self.assertEqual(solution.status, LpStatus.OPTIMAL)
        self.assertAlmostEqual(solution.objective_value, 0.0, places=9)
        self.assertAlmostEqual(solution.x[0], 2.5, places=9)

    def test_column_out_of_range_rejected(self):
        builder = LpBuilder(2)
        with self.assertRaises(ProblemFormatError):
            builder.add_row({2: 1.0}, "<=", 1)

    def test_unknown_sense_rejected(self):
        builder = LpBuilder(1)
        with self.assertRaises(ProblemFormatError):
            builder.add_row({0: 1.0}, ">=", 1)


class TestValidation:

    def _problem(self, **changes):
        base = dict(num_vars=2, objective=np.zeros(2), row_ptr=np.array([0, 2]),
                    col_idx=np.array([0, 1]), coef=np.array([1.0, 1.0]),
                    row_sense=(RowSense.LE,), rhs=np.array([1.0]),
                    var_lower=np.zeros(2), var_upper=np.ones(2),
                    integer_mask=np.zeros(2, dtype=bool))
        base.update(changes)
        return LpProblem(**base)

    def test_valid_problem_passes(self):
        validate_problem(self._problem())

    def test_unsorted_columns_rejected(self):
        with pytest.raises(ProblemFormatError, match="row 0"):
            validate_problem(self._problem(col_idx=np.array([1, 0])))

    def test_explicit_zero_rejected(self):
        with pytest.raises(ProblemFormatError):
            validate_problem(self._problem(coef=np.array([1.0, 0.0])))

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ProblemFormatError):
            validate_problem(self._problem(var_lower=np.array([0.0, 2.0])))

    def test_unbounded_integer_rejected(self):
        with pytest.raises(ProblemFormatError):
            validate_problem(self._problem(var_upper=np.array([1.0, np.inf]),
                                           integer_mask=np.array([False, True])))

    def test_solve_rejects_before_pivoting(self):
        with pytest.raises(ProblemFormatError):
            solve_lp(self._problem(col_idx=np.array([0, 5])))


class TestSolveLp(unittest.TestCase):

    def test_bound_active_optimum(self):
        p = build_problem([-1.0], [[1.0]], ["<="], [3.0], [0.0], [np.inf])
        solution = solve_lp(p)
        self.assertEqual(solution.status, LpStatus.OPTIMAL)
        self.assertAlmostEqual(solution.x[0], 3.0, places=9)
        self.assertAlmostEqual(solution.objective_value, -3.0, places=9)

    def test_empty_polyhedron_is_infeasible(self):
        p = build_problem([0.0], [[1.0]], ["<="], [-1.0], [0.0], [np.inf])
        self.assertEqual(solve_lp(p).status, LpStatus.INFEASIBLE)

    def test_empty_polyhedron_with_improving_free_column(self):
        p = build_problem([0.0, -1.0], [[1.0, 0.0]], ["<="], [-1.0], [0.0, -np.inf], [np.inf, np.inf])
        self.assertEqual(solve_lp(p).status, LpStatus.INFEASIBLE)

    def test_empty_equality_with_free_column(self):
        p = build_problem([0.0, 0.0, 1.0], [[1.0, 1.0, 0.0]], ["="], [5.0],
                          [0.0, 0.0, -np.inf], [1.0, 1.0, np.inf])
        self.assertEqual(solve_lp(p).status, LpStatus.INFEASIBLE)

    def test_ray_after_infeasible_start(self):
        # the start violates x0 >= 2 but the feasible set still has a descending ray in x1
        p = build_problem([0.0, -1.0], [[-1.0, 0.0], [0.0, 1.0]], ["<=", "<="], [-2.0, 100.0],
                          [0.0, -np.inf], [5.0, np.inf])
        self.assertEqual(solve_lp(p).status, LpStatus.OPTIMAL)
        p = build_problem([0.0, 1.0], [[-1.0, 0.0]], ["<="], [-2.0], [0.0, -np.inf], [5.0, np.inf])
        self.assertEqual(solve_lp(p).status, LpStatus.UNBOUNDED)

    def test_unbounded_ray(self):
        p = build_problem([-1.0, 0.0], [[1.0, -1.0]], ["<="], [1.0], [0.0, 0.0], [np.inf, np.inf])
        self.assertEqual(solve_lp(p).status, LpStatus.UNBOUNDED)

    def test_equality_rows(self):
        p = build_problem([1.0, 2.0], [[1.0, 1.0]], ["="], [4.0], [0.0, 0.0], [3.0, 3.0])
        solution = solve_lp(p)
        self.assertEqual(solution.status, LpStatus.OPTIMAL)
        np.testing.assert_allclose(solution.x, [3.0, 1.0], atol=1e-9)

    def test_no_rows_sits_on_bounds(self):
        p = build_problem([1.0, -1.0], [], [], [], [-2.0, -2.0], [5.0, 5.0])
        solution = solve_lp(p)
        np.testing.assert_allclose(solution.x, [-2.0, 5.0])
        self.assertEqual(solution.simplex_iterations, 1)

    def test_iteration_limit(self):
        p = build_problem([-1.0, -1.0], [[1.0, 2.0], [3.0, 1.0]], ["<=", "<="], [4.0, 6.0],
                          [0.0, 0.0], [np.inf, np.inf])
        solution = solve_lp(p, SolverOptions(max_iterations=1))
        self.assertEqual(solution.status, LpStatus.ITERATION_LIMIT)

    def test_single_symbol_receiver_fit(self):
        # |Re{h1 x} - Re r1| <= tR etc. with h1 = 1, r1 = 0.9 + 0.8j: x = r1 fits exactly
        import receivers
        from channel import ChannelRealization, RelayFrame

        frame = RelayFrame(tx_bits=np.zeros(2, dtype=np.uint8), x=np.array([1 + 1j]),
                           r1=np.array([0.9 + 0.8j]), r2=np.array([-0.3 + 1.7j]),
                           channel=ChannelRealization(1.0, 0.5j), noise_var=0.1)
        p, layout = receivers.build_uncoded(frame, 1.0)
        self.assertEqual((p.num_vars, p.num_rows), (10, 8))
        solution = solve_lp(p)
        self.assertEqual(solution.status, LpStatus.OPTIMAL)
        self.assertAlmostEqual(solution.objective_value, 0.0, places=7)
        self.assertAlmostEqual(solution.x[layout.x_re][0], 0.9, places=7)
        self.assertAlmostEqual(solution.x[layout.x_im][0], 0.8, places=7)

        p_int, _ = receivers.build_uncoded(frame, 1.0, integer=True)
        milp = solve_milp(p_int)
        self.assertEqual(milp.status, LpStatus.OPTIMAL)
        self.assertAlmostEqual(milp.objective_value, 0.3, places=7)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        c, A, senses, b, lower, upper = random_instance(rng, 6, 8)
        p = build_problem(c, A, senses, b, lower, upper)
        first, second = solve_lp(p), solve_lp(p)
        self.assertEqual(first.simplex_iterations, second.simplex_iterations)
        np.testing.assert_array_equal(first.x, second.x)


class TestSolveLpOracles:

    def test_matches_vertex_enumeration(self):
        assert_matches_vertices(np.random.default_rng(2024), 150, max_vars=5, max_rows=8)

    @pytest.mark.slow
    def test_matches_vertex_enumeration_full_size(self):
        assert_matches_vertices(np.random.default_rng(2025), 500, max_vars=8, max_rows=12)

    def test_matches_linprog(self):
        rng = np.random.default_rng(77)
        for trial in range(500):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(1, 13))
            finite = trial % 2 == 0
            feasible = rng.random() < 0.85
            c, A, senses, b, lower, upper = random_instance(rng, n, m, feasible=feasible, finite=finite)
            p = build_problem(c, A, senses, b, lower, upper)
            solution = solve_lp(p)

            le = [i for i, s in enumerate(senses) if s == "<="]
            eq = [i for i, s in enumerate(senses) if s == "="]
            ref = linprog(
                c,
                A_ub=A[le] if le else None, b_ub=b[le] if le else None,
                A_eq=A[eq] if eq else None, b_eq=b[eq] if eq else None,
                bounds=[(None if np.isinf(lo) else lo, None if np.isinf(up) else up)
                        for lo, up in zip(lower, upper)],
                method="highs",
            )
            if ref.status == 0:
                assert solution.status is LpStatus.OPTIMAL, trial
                assert abs(solution.objective_value - ref.fun) <= 1e-6 * (1 + abs(ref.fun)), trial
                assert_feasible(p, solution.x)
                # recomputed objective agrees with the reported one
                assert abs(c @ solution.x - solution.objective_value) <= 1e-9 * (1 + abs(ref.fun))
            elif ref.status == 2:
                assert solution.status is LpStatus.INFEASIBLE, trial
            elif ref.status == 3:
                assert solution.status is LpStatus.UNBOUNDED, trial


class TestAppendRows(unittest.TestCase):

    def setUp(self):
        self.p = build_problem([-1.0, -1.0], [[1.0, 2.0], [3.0, 1.0]], ["<=", "<="], [4.0, 6.0],
                               [0.0, 0.0], [np.inf, np.inf])

    def test_zero_rows_is_identity(self):
        self.assertEqual(append_rows(self.p, []), self.p)

    def test_prior_rows_kept_in_order(self):
        q = append_rows(self.p, [([1], [1.0], "<=", 1.0)])
        self.assertEqual(q.num_rows, 3)
        for i in range(2):
            np.testing.assert_array_equal(q.row(i)[0], self.p.row(i)[0])
            np.testing.assert_array_equal(q.row(i)[1], self.p.row(i)[1])
        self.assertEqual(q.rhs[2], 1.0)

    def test_duplicate_row_keeps_objective(self):
        q = append_rows(self.p, [([0, 1], [1.0, 2.0], "<=", 4.0)])
        self.assertAlmostEqual(solve_lp(q).objective_value, solve_lp(self.p).objective_value, places=9)

    def test_cut_never_lowers_objective(self):
        before = solve_lp(self.p).objective_value
        after = solve_lp(append_rows(self.p, [([0, 1], [1.0, 1.0], "<=", 2.0)])).objective_value
        self.assertGreaterEqual(after, before - 1e-9)

    def test_out_of_range_rejected(self):
        with self.assertRaises(ProblemFormatError):
            append_rows(self.p, [([2], [1.0], "<=", 1.0)])


class TestSolveMilp(unittest.TestCase):

    def test_two_binaries_tie(self):
        p = build_problem([-1.0, -1.0], [[1.0, 1.0]], ["<="], [1.0], [0, 0], [1, 1], integer=[1, 1])
        solution = solve_milp(p)
        self.assertEqual(solution.status, LpStatus.OPTIMAL)
        self.assertAlmostEqual(solution.objective_value, -1.0)
        self.assertAlmostEqual(float(solution.x.sum()), 1.0)

    def test_no_integer_point(self):
        p = build_problem([0.0], [[2.0]], ["="], [1.0], [0], [1], integer=[1])
        self.assertEqual(solve_milp(p).status, LpStatus.INFEASIBLE)

    def test_infeasible_node_with_free_column(self):
        # x1 <= -1 with x1 >= 0 empties every node; the free x2 lowers the cost without bound
        p = build_problem([1.0, 0.0, -1.0], [[0.0, 1.0, 0.0], [1.0, 1.0, 0.0]], ["<=", "<="],
                          [-1.0, 2.0], [0.0, 0.0, -np.inf], [1.0, np.inf, np.inf],
                          integer=[1, 0, 0])
        self.assertEqual(solve_milp(p).status, LpStatus.INFEASIBLE)

    def test_requires_integer_variable(self):
        p = build_problem([1.0], [], [], [], [0], [1])
        with self.assertRaises(ProblemFormatError):
            solve_milp(p)

    def test_node_limit_reported(self):
        rng = np.random.default_rng(3)
        weights = rng.integers(3, 20, size=12).astype(float)
        p = build_problem(-weights, [weights + rng.integers(0, 3, size=12)], ["<="],
                          [weights.sum() / 2 + 0.5], np.zeros(12), np.ones(12), integer=np.ones(12))
        solution = solve_milp(p, SolverOptions(max_nodes=2))
        self.assertEqual(solution.status, LpStatus.NODE_LIMIT)
        self.assertEqual(solution.branch_nodes_explored, 2)


def enumerate_milp(c, A, senses, b, lower, upper, integer):
    int_idx = [j for j in range(len(c)) if integer[j]]
    best = math.inf
    for values in itertools.product([0.0, 1.0], repeat=len(int_idx)):
        lo, up = np.array(lower, float), np.array(upper, float)
        lo[int_idx] = values
        up[int_idx] = values
        if len(int_idx) == len(c):
            x = lo
            ok = all((row @ x <= r + 1e-9) if s == "<=" else abs(row @ x - r) <= 1e-9
                     for row, s, r in zip(A, senses, b))
            if ok:
                best = min(best, float(np.dot(c, x)))
            continue
        leaf = solve_lp(build_problem(c, A, senses, b, lo, up))
        if leaf.status is LpStatus.OPTIMAL:
            best = min(best, leaf.objective_value)
    return best


class TestSolveMilpOracle:

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        for _ in range(50):
            k = int(rng.integers(1, 9))
            extra = int(rng.integers(0, 3))
            n = k + extra
            m = int(rng.integers(1, 6))
            A = rng.integers(-4, 5, size=(m, n)).astype(float)
            A[np.all(A == 0, axis=1), 0] = 1.0
            senses = ["<=" if rng.random() < 0.85 else "=" for _ in range(m)]
            b = rng.integers(-2, 8, size=m).astype(float)
            c = rng.integers(-6, 7, size=n).astype(float)
            lower = np.concatenate([np.zeros(k), -2.0 * np.ones(extra)])
            upper = np.concatenate([np.ones(k), 3.0 * np.ones(extra)])
            integer = [1] * k + [0] * extra
            p = build_problem(c, A, senses, b, lower, upper, integer)
            solution = solve_milp(p)
            expected = enumerate_milp(c, A, senses, b, lower, upper, integer)
            if math.isinf(expected):
                assert solution.status is LpStatus.INFEASIBLE
                continue
            assert solution.status is LpStatus.OPTIMAL
            assert abs(solution.objective_value - expected) <= 1e-6 * (1 + abs(expected))
            values = solution.x[:k]
            assert np.all(np.abs(values - np.round(values)) <= 1e-6)
            assert_feasible(p, solution.x, tol=1e-5)
            relaxed = solve_lp(p)
            assert solution.objective_value >= relaxed.objective_value - 1e-9

    def test_twelve_binaries(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            n, m = 12, 4
            A = rng.integers(-3, 6, size=(m, n)).astype(float)
            A[np.all(A == 0, axis=1), 0] = 1.0
            b = rng.integers(4, 15, size=m).astype(float)
            c = rng.integers(-8, 3, size=n).astype(float)
            p = build_problem(c, A, ["<="] * m, b, np.zeros(n), np.ones(n), [1] * n)
            expected = enumerate_milp(c, A, ["<="] * m, b, np.zeros(n), np.ones(n), [1] * n)
            solution = solve_milp(p)
            assert solution.status is LpStatus.OPTIMAL
            assert abs(solution.objective_value - expected) <= 1e-6 * (1 + abs(expected))


def test_format_lp_sections():
    p = build_problem([1.0, -2.0], [[1.0, 1.0]], ["<="], [3.0], [0.0, -np.inf], [1.0, np.inf],
                      integer=[1, 0])
    text = format_lp(p, name="demo")
    assert text.startswith("\\ Problem: demo\nMinimize\n")
    assert " c0: + 1 x0 + 1 x1 <= 3" in text
    assert " x1 free" in text
    assert "General\n x0\n" in text
    assert text.endswith("End\n")
