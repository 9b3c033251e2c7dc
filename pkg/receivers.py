"""
Destination receivers for the decode-and-forward relay link.

Baselines detect symbol by symbol over the 4-point alphabet. The LP receivers
fit x, a two-tap combiner theta and slack moduli t, tau to both received
vectors; the unified ones add the direct-link LLRs and the code's parity
polytope, either all at once or grown by separation (adaptive).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from channel import CONSTELLATION, demodulate_hard
from ldpc import cut_to_row, direct_llr, enumerate_parity_inequalities, find_violated_cuts
from lp_solver import (INTEGRALITY_TOL, LpBuilder, LpStatus, RowSense, SolverOptions,
                       append_rows, solve_lp, solve_milp)

logger = logging.getLogger(__name__)

# bit pairs (b[2k], b[2k+1]) of CONSTELLATION, in the same order
CONSTELLATION_BITS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.uint8)

MODES = ("relaxed", "milp")

RECEIVER_IDS = (
    "direct-ml",
    "all-links-ml",
    "chanest-ml",
    "uncoded-lp",
    "uncoded-milp",
    "unified-lp",
    "unified-milp",
    "adaptive-lp",
    "adaptive-milp",
)
CODED_RECEIVERS = frozenset({"unified-lp", "unified-milp", "adaptive-lp", "adaptive-milp"})


class UnknownReceiverError(ValueError):
    pass


class IncompatibleReceiverError(ValueError):
    pass


@dataclass(frozen=True)
class ReceiverSettings:
    lambda_t: float = 1.0
    lambda_tau: float = 1.0
    round_limit: int = 100
    cut_on_hard_decision: bool = False
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass(frozen=True)
class VariableLayout:
    """Column map shared by the uncoded and unified formulations.

    Blocks of n_symbols columns: Re x, Im x, t^R, t^I, tau^R, tau^I; then
    Re/Im of theta_1 and theta_2; then 2 * n_symbols bit columns f when coded.
    With binary_x the x columns hold b in x = 1 - 2b.
    """
    n_symbols: int
    lambda_t: float = 1.0
    lambda_tau: float = 1.0
    coded: bool = False
    binary_x: bool = False

    def _block(self, i):
        return slice(i * self.n_symbols, (i + 1) * self.n_symbols)

    @property
    def x_re(self):
        return self._block(0)

    @property
    def x_im(self):
        return self._block(1)

    @property
    def t_re(self):
        return self._block(2)

    @property
    def t_im(self):
        return self._block(3)

    @property
    def tau_re(self):
        return self._block(4)

    @property
    def tau_im(self):
        return self._block(5)

    @property
    def theta(self):
        start = 6 * self.n_symbols
        return slice(start, start + 4)

    @property
    def f(self):
        if not self.coded:
            raise AttributeError("uncoded layout has no bit columns")
        start = 6 * self.n_symbols + 4
        return slice(start, start + 2 * self.n_symbols)

    @property
    def num_vars(self):
        return 6 * self.n_symbols + 4 + (2 * self.n_symbols if self.coded else 0)

    def combiner(self, x):
        a1, b1, a2, b2 = x[self.theta]
        return np.array([a1 + 1j * b1, a2 + 1j * b2])


@dataclass
class ReceiverReport:
    decoded_bits: np.ndarray
    objective_value: float
    is_integral: bool
    cuts_added: int = 0
    cut_rounds: int = 0
    simplex_iterations: int = 0
    branch_nodes: int = 0
    combiner_estimate: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=complex))
    final_rows: int = 0
    status: str = LpStatus.OPTIMAL.value
    truncated: bool = False
    final_problem: object = field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {
            "decoded_bits": "".join(str(int(b)) for b in self.decoded_bits),
            "objective_value": None if math.isnan(self.objective_value) else self.objective_value,
            "is_integral": self.is_integral,
            "cuts_added": self.cuts_added,
            "cut_rounds": self.cut_rounds,
            "simplex_iterations": self.simplex_iterations,
            "branch_nodes": self.branch_nodes,
            "combiner_estimate": [[float(c.real), float(c.imag)] for c in self.combiner_estimate],
            "final_rows": self.final_rows,
            "status": self.status,
            "truncated": self.truncated,
        }


@dataclass(frozen=True)
class WorkSummary:
    simplex_iterations: int
    final_rows: int
    branch_nodes: int
    cut_rounds: int
    cuts_added: int
    estimated_flops: int


def uncoded_size(n_symbols):
    """(variables, rows) of the uncoded formulation"""
    return 6 * n_symbols + 4, 8 * n_symbols


def unified_size(code_length, parity_rows=0):
    """(variables, rows) of the unified formulation; parity_rows on top of the base rows"""
    return 4 * code_length + 4, 5 * code_length + parity_rows


# --- baselines -----------------------------------------------------------------

def _bits_from_indices(indices):
    return CONSTELLATION_BITS[indices].reshape(-1)


def detect_ml_direct(r1, h1):
    if h1 == 0:
        raise ValueError("direct-link detection needs h1 != 0")
    r1 = np.asarray(r1, dtype=complex)
    metric = np.abs(h1 * CONSTELLATION[None, :] - r1[:, None]) ** 2
    return _bits_from_indices(np.argmin(metric, axis=1))


def detect_ml_all_links(r1, r2, h1, h2):
    r1 = np.asarray(r1, dtype=complex)
    r2 = np.asarray(r2, dtype=complex)
    metric = (np.abs(h1 * CONSTELLATION[None, :] - r1[:, None]) ** 2
              + np.abs(h2 * CONSTELLATION[None, :] - r2[:, None]) ** 2)
    return _bits_from_indices(np.argmin(metric, axis=1))


def estimate_relay_gain(x_hat, r2):
    """Least-squares h2 from decided symbols"""
    x_hat = np.asarray(x_hat, dtype=complex)
    return complex(np.vdot(x_hat, r2) / np.vdot(x_hat, x_hat).real)


def detect_df_chanest(r1, r2, h1):
    """Decision feedback: detect on the direct link, fit h2, detect on both links"""
    first = detect_ml_direct(r1, h1)
    x_hat = CONSTELLATION[first[0::2] * 2 + first[1::2]]
    h2_hat = estimate_relay_gain(x_hat, r2)
    return detect_ml_all_links(r1, r2, h1, h2_hat)


# --- LP formulations --------------------------------------------------------------

def _x_part(layout, col, coef):
    """coef * (real x component at col) as (terms, constant)"""
    if layout.binary_x:
        return {col: -2.0 * coef}, coef
    return {col: coef}, 0.0


def _combine(*parts):
    terms, const = {}, 0.0
    for part_terms, part_const in parts:
        for col, coef in part_terms.items():
            terms[col] = terms.get(col, 0.0) + coef
        const += part_const
    return terms, const


def _add_fit_rows(builder, layout, frame, h1):
    """Eight rows per symbol: |.| <= t^R, t^I, tau^R, tau^I, two rows each"""
    h_re, h_im = float(np.real(h1)), float(np.imag(h1))
    a1, b1, a2, b2 = range(layout.theta.start, layout.theta.stop)
    for k in range(layout.n_symbols):
        xr = layout.x_re.start + k
        xi = layout.x_im.start + k
        r1, r2 = frame.r1[k], frame.r2[k]

        terms, const = _combine(_x_part(layout, xr, h_re), _x_part(layout, xi, -h_im),
                                ({}, -r1.real))
        builder.add_abs_le(terms, const, layout.t_re.start + k)

        terms, const = _combine(_x_part(layout, xi, h_re), _x_part(layout, xr, h_im),
                                ({}, -r1.imag))
        builder.add_abs_le(terms, const, layout.t_im.start + k)

        # Re{theta^H r} = a1 r1R + b1 r1I + a2 r2R + b2 r2I
        combined_re = {a1: -r1.real, b1: -r1.imag, a2: -r2.real, b2: -r2.imag}
        terms, const = _combine(_x_part(layout, xr, 1.0), (combined_re, 0.0))
        builder.add_abs_le(terms, const, layout.tau_re.start + k)

        # Im{theta^H r} = a1 r1I - b1 r1R + a2 r2I - b2 r2R
        combined_im = {a1: -r1.imag, b1: r1.real, a2: -r2.imag, b2: r2.real}
        terms, const = _combine(_x_part(layout, xi, 1.0), (combined_im, 0.0))
        builder.add_abs_le(terms, const, layout.tau_im.start + k)


def _base_builder(layout, frame, h1):
    if layout.n_symbols < 1:
        raise ValueError("cannot build a receiver LP for an empty frame")
    builder = LpBuilder(layout.num_vars)
    for block in (layout.x_re, layout.x_im):
        cols = range(block.start, block.stop)
        if layout.binary_x:
            builder.set_bounds(cols, 0.0, 1.0, integer=True)
        else:
            builder.set_bounds(cols, -1.0, 1.0)
    for block, weight in ((layout.t_re, layout.lambda_t), (layout.t_im, layout.lambda_t),
                          (layout.tau_re, layout.lambda_tau), (layout.tau_im, layout.lambda_tau)):
        cols = range(block.start, block.stop)
        builder.set_bounds(cols, 0.0, np.inf)
        builder.set_cost(cols, weight)
    _add_fit_rows(builder, layout, frame, h1)
    return builder


def build_uncoded(frame, h1, lambda_t=1.0, lambda_tau=1.0, integer=False):
    """Uncoded joint detection LP; integer=True makes each x component binary-coded"""
    layout = VariableLayout(n_symbols=frame.num_symbols, lambda_t=lambda_t,
                            lambda_tau=lambda_tau, binary_x=integer)
    return _base_builder(layout, frame, h1).build(), layout


def frame_llr(frame, h1):
    """Direct-link LLRs, or zeros for a noiseless frame"""
    if frame.noise_var <= 0:
        return np.zeros(2 * frame.num_symbols)
    return direct_llr(frame.r1, h1, frame.noise_var)


def build_unified(frame, h1, H, gamma, lambda_t=1.0, lambda_tau=1.0, integer=False,
                  include_parity=True):
    """Unified detection-decoding LP: fit rows, Gray equalities, LLR cost, parity polytope"""
    if H.n_cols != 2 * frame.num_symbols:
        raise IncompatibleReceiverError(
            f"code length {H.n_cols} does not match a frame of {frame.num_symbols} symbols")
    layout = VariableLayout(n_symbols=frame.num_symbols, lambda_t=lambda_t,
                            lambda_tau=lambda_tau, coded=True)
    builder = _base_builder(layout, frame, h1)
    f_cols = range(layout.f.start, layout.f.stop)
    builder.set_bounds(f_cols, 0.0, 1.0, integer=integer)
    builder.set_cost(f_cols, np.asarray(gamma, dtype=float))
    for k in range(layout.n_symbols):
        builder.add_row({layout.x_re.start + k: 1.0, layout.f.start + 2 * k + 1: 2.0},
                        RowSense.EQ, 1.0)
        builder.add_row({layout.x_im.start + k: 1.0, layout.f.start + 2 * k: 2.0},
                        RowSense.EQ, 1.0)
    if include_parity:
        for cut in enumerate_parity_inequalities(H):
            cols, vals, rhs = cut_to_row(H, cut, column_of=f_cols)
            builder.add_row(zip(cols, vals), RowSense.LE, rhs)
    return builder.build(), layout


# --- decoding -------------------------------------------------------------------

def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _solve(problem, mode, settings):
    if mode == "milp":
        return solve_milp(problem, settings.solver)
    return solve_lp(problem, settings.solver)


def _usable(solution):
    if solution.status is LpStatus.OPTIMAL:
        return True
    return hasattr(solution, "branch_nodes_explored") and not math.isnan(solution.objective_value)


def _fallback_bits(frame, h1, n_bits):
    if h1 == 0:
        return np.zeros(n_bits, dtype=np.uint8)
    return detect_ml_direct(frame.r1, h1)


def _counters(solution):
    return solution.simplex_iterations, getattr(solution, "branch_nodes_explored", 0)


def _is_binary(values):
    return bool(np.all(np.minimum(np.abs(values), np.abs(values - 1.0)) <= INTEGRALITY_TOL))


def _uncoded_bits(layout, x):
    re, im = x[layout.x_re], x[layout.x_im]
    if layout.binary_x:
        re, im = 1.0 - 2.0 * np.round(re), 1.0 - 2.0 * np.round(im)
    return demodulate_hard(re + 1j * im)


def _fallback_report(frame, h1, n_bits, solution, problem, label):
    logger.warning("%s solve ended %s; falling back to direct-link ML", label, solution.status.value)
    iterations, nodes = _counters(solution)
    return ReceiverReport(
        decoded_bits=_fallback_bits(frame, h1, n_bits),
        objective_value=math.nan,
        is_integral=False,
        simplex_iterations=iterations,
        branch_nodes=nodes,
        final_rows=problem.num_rows,
        status=solution.status.value,
        final_problem=problem,
    )


def decode_uncoded(frame, h1, mode, settings=None):
    _check_mode(mode)
    settings = settings or ReceiverSettings()
    problem, layout = build_uncoded(frame, h1, settings.lambda_t, settings.lambda_tau,
                                    integer=(mode == "milp"))
    solution = _solve(problem, mode, settings)
    if not _usable(solution):
        return _fallback_report(frame, h1, 2 * frame.num_symbols, solution, problem, f"uncoded-{mode}")

    x = solution.x
    if layout.binary_x:
        integral = True
    else:
        parts = np.concatenate([x[layout.x_re], x[layout.x_im]])
        integral = bool(np.all(np.abs(np.abs(parts) - 1.0) <= INTEGRALITY_TOL))
    iterations, nodes = _counters(solution)
    return ReceiverReport(
        decoded_bits=_uncoded_bits(layout, x),
        objective_value=solution.objective_value,
        is_integral=integral,
        simplex_iterations=iterations,
        branch_nodes=nodes,
        combiner_estimate=layout.combiner(x),
        final_rows=problem.num_rows,
        status=solution.status.value,
        final_problem=problem,
    )


def decode_unified(frame, h1, H, mode, settings=None):
    """Solve the full unified problem; relaxed f is sliced at 1/2 (ties to 0)"""
    _check_mode(mode)
    settings = settings or ReceiverSettings()
    problem, layout = build_unified(frame, h1, H, frame_llr(frame, h1), settings.lambda_t,
                                    settings.lambda_tau, integer=(mode == "milp"))
    solution = _solve(problem, mode, settings)
    if not _usable(solution):
        return _fallback_report(frame, h1, H.n_cols, solution, problem, f"unified-{mode}")

    f = solution.x[layout.f]
    iterations, nodes = _counters(solution)
    return ReceiverReport(
        decoded_bits=(f > 0.5).astype(np.uint8),
        objective_value=solution.objective_value,
        is_integral=_is_binary(f),
        simplex_iterations=iterations,
        branch_nodes=nodes,
        combiner_estimate=layout.combiner(solution.x),
        final_rows=problem.num_rows,
        status=solution.status.value,
        final_problem=problem,
    )


def decode_adaptive(frame, h1, H, mode, settings=None):
    """Cutting-plane decoding: start without parity rows, add violated cuts until none remain.

    Relaxed mode searches for cuts on the fractional f unless
    settings.cut_on_hard_decision asks for the hard-decided bits; milp mode
    always uses the integral f.
    """
    _check_mode(mode)
    settings = settings or ReceiverSettings()
    problem, layout = build_unified(frame, h1, H, frame_llr(frame, h1), settings.lambda_t,
                                    settings.lambda_tau, integer=(mode == "milp"),
                                    include_parity=False)
    added = set()
    rounds = iterations = nodes = 0
    truncated = False
    f_cols = range(layout.f.start, layout.f.stop)

    while True:
        solution = _solve(problem, mode, settings)
        step_iterations, step_nodes = _counters(solution)
        iterations += step_iterations
        nodes += step_nodes
        if not _usable(solution):
            report = _fallback_report(frame, h1, H.n_cols, solution, problem, f"adaptive-{mode}")
            report.simplex_iterations, report.branch_nodes = iterations, nodes
            report.cuts_added, report.cut_rounds = len(added), rounds
            return report

        f = solution.x[layout.f]
        if mode == "milp" or settings.cut_on_hard_decision:
            probe = (f > 0.5).astype(float)
        else:
            probe = f
        cuts = [c for c in find_violated_cuts(H, probe) if c not in added]
        if not cuts:
            break
        if rounds >= settings.round_limit:
            truncated = True
            logger.warning("Adaptive decoding stopped at the %d-round limit with %d cuts pending",
                           settings.round_limit, len(cuts))
            break
        rows = []
        for cut in cuts:
            cols, vals, rhs = cut_to_row(H, cut, column_of=f_cols)
            rows.append((cols, vals, RowSense.LE, rhs))
        problem = append_rows(problem, rows)
        added.update(cuts)
        rounds += 1
        logger.debug("Cut round %d added %d rows (%d total)", rounds, len(cuts), len(added))

    return ReceiverReport(
        decoded_bits=(f > 0.5).astype(np.uint8),
        objective_value=solution.objective_value,
        is_integral=_is_binary(f),
        cuts_added=len(added),
        cut_rounds=rounds,
        simplex_iterations=iterations,
        branch_nodes=nodes,
        combiner_estimate=layout.combiner(solution.x),
        final_rows=problem.num_rows,
        status=solution.status.value,
        truncated=truncated,
        final_problem=problem,
    )


def estimate_work(report):
    """Deterministic work counters; estimated_flops charges each pivot a dense rows^2 update"""
    return WorkSummary(
        simplex_iterations=report.simplex_iterations,
        final_rows=report.final_rows,
        branch_nodes=report.branch_nodes,
        cut_rounds=report.cut_rounds,
        cuts_added=report.cuts_added,
        estimated_flops=report.simplex_iterations * report.final_rows ** 2,
    )


# --- registry --------------------------------------------------------------------

def _ml_report(bits, frame, h1, h2):
    x = CONSTELLATION[bits[0::2] * 2 + bits[1::2]]
    metric = np.sum(np.abs(h1 * x - frame.r1) ** 2)
    if h2 is not None:
        metric += np.sum(np.abs(h2 * x - frame.r2) ** 2)
    return ReceiverReport(decoded_bits=bits, objective_value=float(metric), is_integral=True)


def run_receiver(receiver_id, frame, H=None, settings=None):
    """Run a registered receiver on one frame; the destination knows h1 (and h2 for all-links)"""
    if receiver_id not in RECEIVER_IDS:
        raise UnknownReceiverError(f"Unknown receiver {receiver_id!r}; choose from {', '.join(RECEIVER_IDS)}")
    if receiver_id in CODED_RECEIVERS and H is None:
        raise IncompatibleReceiverError(f"{receiver_id} needs a code; the frame is uncoded")
    settings = settings or ReceiverSettings()
    h1, h2 = frame.channel.h1, frame.channel.h2

    if receiver_id == "direct-ml":
        return _ml_report(detect_ml_direct(frame.r1, h1), frame, h1, None)
    if receiver_id == "all-links-ml":
        return _ml_report(detect_ml_all_links(frame.r1, frame.r2, h1, h2), frame, h1, h2)
    if receiver_id == "chanest-ml":
        bits = detect_df_chanest(frame.r1, frame.r2, h1)
        x_hat = CONSTELLATION[bits[0::2] * 2 + bits[1::2]]
        return _ml_report(bits, frame, h1, estimate_relay_gain(x_hat, frame.r2))

    family, kind = receiver_id.rsplit("-", 1)
    mode = "milp" if kind == "milp" else "relaxed"
    if family == "uncoded":
        return decode_uncoded(frame, h1, mode, settings)
    if family == "unified":
        return decode_unified(frame, h1, H, mode, settings)
    return decode_adaptive(frame, h1, H, mode, settings)

