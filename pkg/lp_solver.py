"""
Sparse LP / MILP engine used by the relay receivers.

Revised simplex over bounded variables (bounds never become rows), started from
a Big-M basis, plus a depth-first branch-and-bound for problems with
integer-marked variables. A ray found while artificials are still positive
switches to minimizing the artificials alone until feasibility is settled.
Rows can be appended between solves so the cutting-plane receiver can grow a
problem round by round.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-7
OPTIMALITY_TOL = 1e-9
INTEGRALITY_TOL = 1e-6
BOUND_TOL = 1e-9
PIVOT_TOL = 1e-9
DEGENERATE_STEP = 1e-12


class ProblemFormatError(ValueError):
    """Raised when an LpProblem (or a row appended to it) is malformed"""


class LpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITERATION_LIMIT = "IterationLimit"
    NODE_LIMIT = "NodeLimit"


class RowSense(str, Enum):
    LE = "<="
    EQ = "="


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and limits for solve_lp / solve_milp.

    max_iterations=None means 50 * (num_vars + num_rows) for each LP solve.
    """
    max_iterations: int = None
    max_nodes: int = 10**6
    big_m_factor: float = 1e7
    feasibility_tol: float = FEASIBILITY_TOL
    optimality_tol: float = OPTIMALITY_TOL
    integrality_tol: float = INTEGRALITY_TOL
    refactor_every: int = 64


@dataclass(frozen=True, eq=False)
class LpProblem:
    """min objective @ x  s.t.  rows (<= or =) rhs,  var_lower <= x <= var_upper.

    Rows are stored CSR-style: row i owns col_idx/coef[row_ptr[i]:row_ptr[i+1]].
    """
    num_vars: int
    objective: np.ndarray
    row_ptr: np.ndarray
    col_idx: np.ndarray
    coef: np.ndarray
    row_sense: tuple
    rhs: np.ndarray
    var_lower: np.ndarray
    var_upper: np.ndarray
    integer_mask: np.ndarray

    @property
    def num_rows(self):
        return len(self.rhs)

    def row(self, i):
        start, stop = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[start:stop], self.coef[start:stop]

    def to_csr(self):
        return sp.csr_matrix(
            (self.coef, self.col_idx, self.row_ptr),
            shape=(self.num_rows, self.num_vars),
        )

    def __eq__(self, other):
        if not isinstance(other, LpProblem):
            return NotImplemented
        return (
            self.num_vars == other.num_vars
            and self.row_sense == other.row_sense
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("objective", "row_ptr", "col_idx", "coef", "rhs",
                             "var_lower", "var_upper", "integer_mask")
            )
        )

    __hash__ = None


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective_value: float
    simplex_iterations: int = 0


@dataclass
class MilpSolution(LpSolution):
    branch_nodes_explored: int = 0
    integrality_gap_at_stop: float = 0.0


def _normalize_row(indices, values):
    """Sort a sparse row, merge repeated columns and drop zero coefficients"""
    merged = {}
    for col, val in zip(indices, values):
        col = int(col)
        merged[col] = merged.get(col, 0.0) + float(val)
    cols = sorted(c for c, v in merged.items() if v != 0.0)
    return np.array(cols, dtype=np.int64), np.array([merged[c] for c in cols], dtype=float)


def _as_sense(sense):
    try:
        return RowSense(sense)
    except ValueError:
        raise ProblemFormatError(f"Unknown row sense {sense!r}") from None


class LpBuilder:
    """Incremental assembly of an LpProblem.

    Variables start free (-inf, +inf) with zero cost; rows are added one at a
    time as {column: coefficient} terms.
    """

    def __init__(self, num_vars):
        self.num_vars = int(num_vars)
        self.objective = np.zeros(self.num_vars)
        self.lower = np.full(self.num_vars, -np.inf)
        self.upper = np.full(self.num_vars, np.inf)
        self.integer = np.zeros(self.num_vars, dtype=bool)
        self._row_ptr = [0]
        self._cols = []
        self._vals = []
        self._sense = []
        self._rhs = []

    def set_cost(self, cols, cost):
        self.objective[np.asarray(cols, dtype=np.int64)] = cost

    def set_bounds(self, cols, lower, upper, integer=False):
        cols = np.asarray(cols, dtype=np.int64)
        self.lower[cols] = lower
        self.upper[cols] = upper
        self.integer[cols] = integer

    def add_row(self, terms, sense, rhs):
        """Add sum(coef * x[col] for col, coef in terms) <sense> rhs"""
        items = list(terms.items()) if isinstance(terms, dict) else list(terms)
        cols, vals = _normalize_row([c for c, _ in items], [v for _, v in items])
        if len(cols) and (cols[0] < 0 or cols[-1] >= self.num_vars):
            raise ProblemFormatError(f"Row references column outside 0..{self.num_vars - 1}")
        self._cols.extend(cols.tolist())
        self._vals.extend(vals.tolist())
        self._row_ptr.append(len(self._cols))
        self._sense.append(_as_sense(sense))
        self._rhs.append(float(rhs))

    def add_abs_le(self, terms, const, bound_col):
        """|sum(terms) + const| <= x[bound_col], emitted as two <= rows"""
        terms = dict(terms)
        plus = dict(terms)
        plus[bound_col] = plus.get(bound_col, 0.0) - 1.0
        minus = {col: -coef for col, coef in terms.items()}
        minus[bound_col] = minus.get(bound_col, 0.0) - 1.0
        self.add_row(plus, RowSense.LE, -const)
        self.add_row(minus, RowSense.LE, const)

    def build(self):
        problem = LpProblem(
            num_vars=self.num_vars,
            objective=self.objective.copy(),
            row_ptr=np.array(self._row_ptr, dtype=np.int64),
            col_idx=np.array(self._cols, dtype=np.int64),
            coef=np.array(self._vals, dtype=float),
            row_sense=tuple(self._sense),
            rhs=np.array(self._rhs, dtype=float),
            var_lower=self.lower.copy(),
            var_upper=self.upper.copy(),
            integer_mask=self.integer.copy(),
        )
        validate_problem(problem)
        return problem


def validate_problem(p):
    """Check every LpProblem invariant, raising ProblemFormatError on the first breach"""
    n, m = p.num_vars, p.num_rows
    for name in ("objective", "var_lower", "var_upper", "integer_mask"):
        if len(getattr(p, name)) != n:
            raise ProblemFormatError(f"{name} has length {len(getattr(p, name))}, expected {n}")
    if len(p.row_sense) != m or len(p.row_ptr) != m + 1:
        raise ProblemFormatError("row_sense/row_ptr do not match the number of rows")
    if p.row_ptr[0] != 0 or p.row_ptr[-1] != len(p.col_idx) or len(p.col_idx) != len(p.coef):
        raise ProblemFormatError("row_ptr does not describe col_idx/coef")
    if np.any(np.diff(p.row_ptr) < 0):
        raise ProblemFormatError("row_ptr must be non-decreasing")
    if not np.all(np.isfinite(p.objective)) or not np.all(np.isfinite(p.rhs)) \
            or not np.all(np.isfinite(p.coef)):
        raise ProblemFormatError("objective, rhs and coefficients must be finite")
    if np.any(np.isnan(p.var_lower)) or np.any(np.isnan(p.var_upper)):
        raise ProblemFormatError("bounds must not be NaN")
    if len(p.col_idx) and (p.col_idx.min() < 0 or p.col_idx.max() >= n):
        raise ProblemFormatError(f"column index outside 0..{n - 1}")
    if np.any(p.coef == 0.0):
        raise ProblemFormatError("explicit zero coefficient in row storage")
    nnz = len(p.col_idx)
    if nnz > 1:
        same_row = np.ones(nnz - 1, dtype=bool)
        starts = p.row_ptr[(p.row_ptr > 0) & (p.row_ptr < nnz)]
        same_row[starts - 1] = False
        bad = np.flatnonzero(same_row & (np.diff(p.col_idx) <= 0))
        if len(bad):
            row = int(np.searchsorted(p.row_ptr, bad[0], side="right") - 1)
            raise ProblemFormatError(f"row {row}: column indices must be strictly increasing")
    bad = np.flatnonzero(p.var_lower > p.var_upper)
    if len(bad):
        raise ProblemFormatError(f"variable {bad[0]}: lower bound exceeds upper bound")
    mask = p.integer_mask.astype(bool)
    if np.any(mask & ~(np.isfinite(p.var_lower) & np.isfinite(p.var_upper))):
        raise ProblemFormatError("integer-marked variables need finite bounds")


def append_rows(p, rows):
    """Return a copy of p with extra rows (indices, values, sense, rhs) appended in order"""
    if not rows:
        return p
    ptr = [int(p.row_ptr[-1])]
    cols, vals, senses, rhs = [], [], [], []
    for indices, values, sense, bound in rows:
        if len(indices) != len(values):
            raise ProblemFormatError("row indices and values differ in length")
        c, v = _normalize_row(indices, values)
        if len(c) and (c[0] < 0 or c[-1] >= p.num_vars):
            raise ProblemFormatError(f"Appended row references column outside 0..{p.num_vars - 1}")
        cols.append(c)
        vals.append(v)
        ptr.append(ptr[-1] + len(c))
        senses.append(_as_sense(sense))
        rhs.append(float(bound))
    return replace(
        p,
        row_ptr=np.concatenate([p.row_ptr, np.array(ptr[1:], dtype=np.int64)]),
        col_idx=np.concatenate([p.col_idx] + cols),
        coef=np.concatenate([p.coef] + vals),
        row_sense=p.row_sense + tuple(senses),
        rhs=np.concatenate([p.rhs, np.array(rhs, dtype=float)]),
    )


class _BoundedSimplex:
    """Revised simplex on [A | slacks | artificials], explicit basis inverse.

    Nonbasic variables sit at a finite bound (or at zero when free). The
    initial basis holds a slack or an artificial per row, so B starts as a
    signed identity. Artificials carry cost M and are retired (fixed at zero)
    once they leave the basis.
    """

    def __init__(self, p, opts):
        self.opts = opts
        self.m, self.n = p.num_rows, p.num_vars
        m, n = self.m, self.n
        A = p.to_csr().tocsc()

        lower = p.var_lower.astype(float)
        upper = p.var_upper.astype(float)
        start = np.where(np.isfinite(lower), lower, np.where(np.isfinite(upper), upper, 0.0))
        resid = p.rhs - A @ start if m else np.zeros(0)

        le_rows = [i for i, s in enumerate(p.row_sense) if s is RowSense.LE]
        slack_of = {row: n + k for k, row in enumerate(le_rows)}
        n_slack = len(le_rows)

        basis = np.empty(m, dtype=np.int64)
        art_rows, art_sign = [], []
        for i in range(m):
            if p.row_sense[i] is RowSense.LE and resid[i] >= 0:
                basis[i] = slack_of[i]
            else:
                if p.row_sense[i] is RowSense.LE:
                    sign = -1.0
                else:
                    sign = 1.0 if resid[i] >= 0 else -1.0
                basis[i] = n + n_slack + len(art_rows)
                art_rows.append(i)
                art_sign.append(sign)
        n_art = len(art_rows)
        self.first_art = n + n_slack

        slack_block = sp.csc_matrix(
            (np.ones(n_slack), (np.array(le_rows, dtype=np.int64), np.arange(n_slack))), shape=(m, n_slack))
        art_block = sp.csc_matrix(
            (np.array(art_sign, dtype=float), (np.array(art_rows, dtype=np.int64), np.arange(n_art))),
            shape=(m, n_art))
        blocks = [A] + [block for block in (slack_block, art_block) if block.shape[1]]
        self.A = sp.hstack(blocks, format="csc") if len(blocks) > 1 else A.tocsc()
        self.AT = self.A.T.tocsr()
        self.b = p.rhs.astype(float)

        total = n + n_slack + n_art
        self.lower = np.concatenate([lower, np.zeros(n_slack + n_art)])
        self.upper = np.concatenate([upper, np.full(n_slack + n_art, np.inf)])
        self.cost = np.concatenate([p.objective.astype(float), np.zeros(n_slack + n_art)])
        self.art_cost = np.concatenate([np.zeros(n + n_slack), np.ones(n_art)])

        scale = max([1.0] + [float(np.abs(arr).max()) for arr in (p.coef, p.objective, p.rhs) if len(arr)])
        self.big_m = opts.big_m_factor * scale

        self.x = np.concatenate([start, np.zeros(n_slack + n_art)])
        self.basis = basis
        self.is_basic = np.zeros(total, dtype=bool)
        self.is_basic[basis] = True
        diag = np.ones(m)
        for row, sign in zip(art_rows, art_sign):
            diag[row] = sign
        self.Binv = np.diag(diag)
        self.x[basis] = diag * resid

        self.iterations = 0
        self.phase_one = False
        self.degenerate_run = 0
        self.since_refactor = 0
        limit = opts.max_iterations
        self.max_iterations = limit if limit is not None else 50 * (n + m)

    def _column(self, j):
        col = np.zeros(self.m)
        start, stop = self.A.indptr[j], self.A.indptr[j + 1]
        col[self.A.indices[start:stop]] = self.A.data[start:stop]
        return col

    def _infeasibility(self):
        art = self.x[self.first_art:]
        return float(art.max()) if len(art) else 0.0

    def _reduced_costs(self):
        if self.phase_one:
            y = self.art_cost[self.basis] @ self.Binv
            d = self.art_cost - self.AT @ y
            d[self.basis] = 0.0
            return d
        y = self.cost[self.basis] @ self.Binv
        d = self.cost - self.AT @ y
        art_basic = self.art_cost[self.basis]
        if art_basic.any():
            y_art = art_basic @ self.Binv
            d_art = self.art_cost - self.AT @ y_art
            d_art[np.abs(d_art) <= self.opts.optimality_tol] = 0.0
            d = d + self.big_m * d_art
        d[self.basis] = 0.0
        return d

    def _entering(self, d):
        tol = self.opts.optimality_tol
        nonbasic = ~self.is_basic
        can_increase = nonbasic & (self.x < self.upper) & (d < -tol)
        can_decrease = nonbasic & (self.x > self.lower) & (d > tol)
        eligible = np.flatnonzero(can_increase | can_decrease)
        if not len(eligible):
            return -1, 0
        if self.degenerate_run > 2 * (self.n + self.m):
            j = int(eligible[0])
        else:
            j = int(eligible[np.argmax(np.abs(d[eligible]))])
        return j, (1 if d[j] < 0 else -1)

    def _ratio_test(self, delta):
        if not self.m:
            return np.inf, -1
        xb = self.x[self.basis]
        lb = self.lower[self.basis]
        ub = self.upper[self.basis]
        ratios = np.full(self.m, np.inf)
        falling = (delta < -PIVOT_TOL) & np.isfinite(lb)
        rising = (delta > PIVOT_TOL) & np.isfinite(ub)
        ratios[falling] = (xb[falling] - lb[falling]) / -delta[falling]
        ratios[rising] = (ub[rising] - xb[rising]) / delta[rising]
        np.maximum(ratios, 0.0, out=ratios)
        t_min = ratios.min()
        if not np.isfinite(t_min):
            return np.inf, -1
        ties = np.flatnonzero(ratios <= t_min + DEGENERATE_STEP)
        if self.degenerate_run > 2 * (self.n + self.m):
            pos = int(ties[np.argmin(self.basis[ties])])
        else:
            pos = int(ties[np.argmax(np.abs(delta[ties]))])
        return t_min, pos

    def _pivot(self, pos, j, alpha):
        row = self.Binv[pos] / alpha[pos]
        self.Binv -= np.outer(alpha, row)
        self.Binv[pos] = row
        leaving = self.basis[pos]
        self.is_basic[leaving] = False
        self.is_basic[j] = True
        self.basis[pos] = j
        if leaving >= self.first_art:
            self.upper[leaving] = 0.0
            self.x[leaving] = 0.0
        self.since_refactor += 1

    def _refactor(self):
        B = self.A[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            logger.warning("Basis matrix singular at refactorization; keeping product-form inverse")
            return
        nonbasic_x = np.where(self.is_basic, 0.0, self.x)
        self.x[self.basis] = self.Binv @ (self.b - self.A @ nonbasic_x)
        self.since_refactor = 0
        logger.debug("Refactorized basis after %d iterations", self.iterations)

    def run(self):
        while True:
            if self.iterations >= self.max_iterations:
                return LpStatus.ITERATION_LIMIT
            j, direction = self._entering(self._reduced_costs())
            if j < 0:
                if not self.phase_one:
                    break
                if self.m:
                    self._refactor()
                if self._infeasibility() > self.opts.feasibility_tol:
                    break
                self.phase_one = False
                logger.debug("Artificials cleared after %d iterations; back to the real cost",
                             self.iterations)
                continue
            alpha = self.Binv @ self._column(j) if self.m else np.zeros(0)
            delta = -direction * alpha
            t_basic, pos = self._ratio_test(delta)
            span = self.upper[j] - self.lower[j]
            bound_flip = np.isfinite(span) and span <= t_basic

            if not bound_flip and pos < 0:
                if self.phase_one or self._infeasibility() <= self.opts.feasibility_tol:
                    return LpStatus.UNBOUNDED
                self.phase_one = True
                logger.debug("Ray with positive artificials; minimizing infeasibility first")
                continue
            self.iterations += 1

            if bound_flip:
                step = span
                self.x[self.basis] += delta * step
                self.x[j] = self.upper[j] if direction > 0 else self.lower[j]
            else:
                step = t_basic
                leaving = self.basis[pos]
                hit_lower = delta[pos] < 0
                self.x[self.basis] += delta * step
                self.x[j] += direction * step
                self.x[leaving] = self.lower[leaving] if hit_lower else self.upper[leaving]
                self._pivot(pos, j, alpha)

            self.degenerate_run = self.degenerate_run + 1 if step <= DEGENERATE_STEP else 0
            if self.since_refactor >= self.opts.refactor_every:
                self._refactor()

        if self.m:
            self._refactor()
        art = self.x[self.first_art:]
        if len(art) and art.max() > self.opts.feasibility_tol:
            return LpStatus.INFEASIBLE
        return LpStatus.OPTIMAL


def solve_lp(p, opts=None):
    """Solve the LP relaxation of p (integer_mask is ignored)"""
    opts = opts or SolverOptions()
    validate_problem(p)
    engine = _BoundedSimplex(p, opts)
    status = engine.run()
    x = engine.x[:p.num_vars].copy()

    if status is LpStatus.OPTIMAL:
        x = np.clip(x, p.var_lower, p.var_upper)
        if p.num_rows:
            activity = p.to_csr() @ x
            violation = activity - p.rhs
            eq = np.array([s is RowSense.EQ for s in p.row_sense])
            worst = np.max(np.where(eq, np.abs(violation), np.maximum(violation, 0.0)))
            if worst > opts.feasibility_tol:
                logger.debug("Optimal basis leaves row violation %.3e", worst)
    objective = float(p.objective @ x) if status is LpStatus.OPTIMAL else math.nan
    return LpSolution(status=status, x=x, objective_value=objective,
                      simplex_iterations=engine.iterations)


@dataclass(order=True)
class _Node:
    neg_depth: int
    bound: float
    seq: int
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)


def solve_milp(p, opts=None):
    """Branch-and-bound over the integer-marked variables of p.

    Depth-first; among nodes of equal depth the one with the best parent bound
    goes first. Branches on the most fractional variable (lowest index on
    ties) and explores the rounded-up child first.
    """
    opts = opts or SolverOptions()
    validate_problem(p)
    int_idx = np.flatnonzero(p.integer_mask)
    if not len(int_idx):
        raise ProblemFormatError("solve_milp needs at least one integer-marked variable")

    heap = [_Node(0, -math.inf, 0, p.var_lower.copy(), p.var_upper.copy())]
    seq = 1
    best_x, best_obj = None, math.inf
    nodes = iterations = 0
    incomplete = False
    status = None

    while heap:
        if nodes >= opts.max_nodes:
            status = LpStatus.NODE_LIMIT
            break
        node = heapq.heappop(heap)
        prune_at = best_obj - OPTIMALITY_TOL * (1.0 + abs(best_obj)) if best_x is not None else math.inf
        if node.bound >= prune_at:
            continue
        nodes += 1
        relaxed = solve_lp(replace(p, var_lower=node.lower, var_upper=node.upper), opts)
        iterations += relaxed.simplex_iterations

        if relaxed.status is LpStatus.INFEASIBLE:
            continue
        if relaxed.status is LpStatus.UNBOUNDED:
            status = LpStatus.UNBOUNDED
            break
        if relaxed.status is LpStatus.ITERATION_LIMIT:
            incomplete = True
            continue
        if relaxed.objective_value >= prune_at:
            continue

        values = relaxed.x[int_idx]
        distance = np.abs(values - np.round(values))
        if np.all(distance <= opts.integrality_tol):
            x = relaxed.x.copy()
            x[int_idx] = np.round(values)
            obj = float(p.objective @ x)
            if best_x is None or obj < best_obj:
                best_x, best_obj = x, obj
            continue

        k = int(int_idx[np.argmax(distance)])
        v = relaxed.x[k]
        depth = -node.neg_depth + 1
        up_lower = node.lower.copy()
        up_lower[k] = math.ceil(v)
        down_upper = node.upper.copy()
        down_upper[k] = math.floor(v)
        heapq.heappush(heap, _Node(-depth, relaxed.objective_value, seq, up_lower, node.upper))
        heapq.heappush(heap, _Node(-depth, relaxed.objective_value, seq + 1, node.lower, down_upper))
        seq += 2

    logger.debug("Branch-and-bound explored %d nodes (%d simplex iterations)", nodes, iterations)

    gap = 0.0
    if status is LpStatus.NODE_LIMIT:
        open_bound = min((nd.bound for nd in heap), default=best_obj)
        gap = best_obj - open_bound if best_x is not None else math.inf
    elif status is None:
        if best_x is None:
            status = LpStatus.ITERATION_LIMIT if incomplete else LpStatus.INFEASIBLE
        else:
            status = LpStatus.ITERATION_LIMIT if incomplete else LpStatus.OPTIMAL

    x = best_x if best_x is not None else np.zeros(p.num_vars)
    return MilpSolution(
        status=status,
        x=x,
        objective_value=best_obj if best_x is not None else math.nan,
        simplex_iterations=iterations,
        branch_nodes_explored=nodes,
        integrality_gap_at_stop=gap,
    )


def _format_terms(cols, vals):
    parts = []
    for col, val in zip(cols, vals):
        sign = "-" if val < 0 else "+"
        parts.append(f"{sign} {abs(val):.12g} x{col}")
    return " ".join(parts) if parts else "0 x0"


def format_lp(p, name="relay"):
    """Plain-text dump in a CPLEX-LP-like layout for checking a problem by hand"""
    nonzero = np.flatnonzero(p.objective)
    lines = [f"\\ Problem: {name}", "Minimize", f" obj: {_format_terms(nonzero, p.objective[nonzero])}",
             "Subject To"]
    for i in range(p.num_rows):
        cols, vals = p.row(i)
        op = "<=" if p.row_sense[i] is RowSense.LE else "="
        lines.append(f" c{i}: {_format_terms(cols, vals)} {op} {p.rhs[i]:.12g}")
    lines.append("Bounds")
    for j in range(p.num_vars):
        lo, up = p.var_lower[j], p.var_upper[j]
        if np.isinf(lo) and np.isinf(up):
            lines.append(f" x{j} free")
        elif np.isinf(up):
            lines.append(f" x{j} >= {lo:.12g}")
        elif np.isinf(lo):
            lines.append(f" -inf <= x{j} <= {up:.12g}")
        else:
            lines.append(f" {lo:.12g} <= x{j} <= {up:.12g}")
    integers = np.flatnonzero(p.integer_mask)
    if len(integers):
        lines.append("General")
        lines.append(" " + " ".join(f"x{j}" for j in integers))
    lines.append("End")
    return "\n".join(lines) + "\n"
