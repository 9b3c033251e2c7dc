"""
Monte-Carlo experiment driver: BER sweeps, formulation size reports, and the
exhaustive codeword oracle used to check the MILP receivers.
"""

import csv
import io
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from dotenv import dotenv_values

from channel import FrameParams, make_frame, make_rng, modulate_qam4_gray, snr_db_to_noise_var
from ldpc import (ParityCheckMatrix, codewords, count_parity_inequalities, gallager_construct,
                  load_alist, systematize)
from lp_solver import LpBuilder, LpStatus, solve_lp
from receivers import (CODED_RECEIVERS, RECEIVER_IDS, IncompatibleReceiverError,
                       ReceiverSettings, UnknownReceiverError, estimate_work, frame_llr,
                       run_receiver, uncoded_size, unified_size)

logger = logging.getLogger(__name__)

BATCH_SIZE = 8
ORACLE_TIE_TOL = 1e-9
DEFAULT_COMPLEXITY_LENGTHS = (256, 512, 1024, 1536, 2048)
DEFAULT_UNCODED_SYMBOLS = 20

CSV_COLUMNS = ("receiver", "snr_db", "bits", "errors", "ber", "cuts", "rounds", "iters",
               "nodes", "rows", "flops", "seconds")
MEASURED_RECEIVERS = ("adaptive-lp", "unified-lp", "uncoded-lp")


class ConfigError(ValueError):
    pass


# --- code specs -------------------------------------------------------------------

@dataclass(frozen=True)
class CodeSpec:
    kind: str
    length: int = 0
    col_weight: int = 3
    row_weight: int = 6
    path: str = ""

    @property
    def label(self):
        if self.kind == "uncoded":
            return f"uncoded N={self.length // 2}"
        if self.kind == "alist":
            return os.path.basename(self.path)
        return f"({self.length},{self.col_weight},{self.row_weight})"


@dataclass(frozen=True, eq=False)
class CodeSetup:
    spec: CodeSpec
    H: ParityCheckMatrix = None
    encoder: object = None

    @property
    def n_symbols(self):
        return self.spec.length // 2 if self.H is None else self.H.n_cols // 2

    @property
    def coded(self):
        return self.H is not None


def parse_code_spec(text):
    """'uncoded N=20', 'n,col_weight,row_weight', a bare length (3,6 regular) or a .alist path"""
    text = str(text).strip()
    if text.lower().startswith("uncoded"):
        match = re.fullmatch(r"uncoded(?:\s+N\s*=\s*(\d+))?", text, flags=re.IGNORECASE)
        if not match:
            raise ConfigError(f"Cannot parse code spec {text!r}")
        n_symbols = int(match.group(1) or DEFAULT_UNCODED_SYMBOLS)
        if n_symbols < 1:
            raise ConfigError("uncoded frames need at least one symbol")
        return CodeSpec(kind="uncoded", length=2 * n_symbols)
    if text.endswith(".alist"):
        return CodeSpec(kind="alist", path=text)
    numbers = re.findall(r"-?\d+", text)
    if not numbers or re.sub(r"[\d\s,()\-]", "", text):
        raise ConfigError(f"Cannot parse code spec {text!r}")
    values = [int(v) for v in numbers]
    if len(values) == 1:
        values += [3, 6]
    if len(values) != 3 or min(values) < 1:
        raise ConfigError(f"Code spec {text!r} needs positive length, col_weight, row_weight")
    return CodeSpec(kind="gallager", length=values[0], col_weight=values[1], row_weight=values[2])


def load_code(spec, code_seed=7):
    if isinstance(spec, str):
        spec = parse_code_spec(spec)
    if spec.kind == "uncoded":
        return CodeSetup(spec=spec)
    if spec.kind == "alist":
        try:
            with open(spec.path) as handle:
                H = load_alist(handle.read())
        except OSError as e:
            raise ConfigError(f"Cannot read alist file {spec.path}: {e}") from e
        spec = replace(spec, length=H.n_cols)
    else:
        H = gallager_construct(spec.length, spec.col_weight, spec.row_weight, code_seed)
    if H.n_cols % 2:
        raise ConfigError(f"code length {H.n_cols} is odd; QAM4 frames need an even length")
    return CodeSetup(spec=spec, H=H, encoder=systematize(H))


# --- experiment config ------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    snr_grid_db: tuple
    receivers: tuple
    frames_per_point: int = 1000
    target_errors: int = 200
    code_spec: str = "uncoded N=20"
    code_seed: int = 7
    sigma1_sq: float = 0.5
    sigma2_sq: float = 1.0
    lambda_t: float = 1.0
    lambda_tau: float = 1.0
    seed: int = 0
    round_limit: int = 100
    cut_on_hard_decision: bool = False
    record_timing: bool = False

    def __post_init__(self):
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db must list at least one SNR")
        if not self.receivers:
            raise ConfigError("receivers must name at least one receiver")
        unknown = [r for r in self.receivers if r not in RECEIVER_IDS]
        if unknown:
            raise UnknownReceiverError(
                f"Unknown receiver {unknown[0]!r}; choose from {', '.join(RECEIVER_IDS)}")
        if self.frames_per_point < 1:
            raise ConfigError("frames_per_point must be at least 1")
        if self.target_errors < 1:
            raise ConfigError("target_errors must be at least 1")
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise ConfigError("channel variances must be non-negative")
        if self.seed < 0 or self.code_seed < 0:
            raise ConfigError("seeds must be non-negative")
        if self.round_limit < 0:
            raise ConfigError("round_limit must be non-negative")
        parse_code_spec(self.code_spec)

    @property
    def receiver_settings(self):
        return ReceiverSettings(lambda_t=self.lambda_t, lambda_tau=self.lambda_tau,
                                round_limit=self.round_limit,
                                cut_on_hard_decision=self.cut_on_hard_decision)


def parse_snr_grid(text):
    """'0, 2, 4' or 'start:stop:step' (stop included)"""
    text = str(text).strip()
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ConfigError(f"SNR range {text!r} must have step > 0 and stop >= start")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 10) for i in range(count))
        return tuple(float(v) for v in re.split(r"[,\s]+", text) if v)
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Cannot parse SNR grid {text!r}") from None


def parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_receivers(text):
    return tuple(r for r in re.split(r"[,\s]+", str(text).strip()) if r)


_PARSERS = {
    "snr_grid_db": parse_snr_grid,
    "receivers": _parse_receivers,
    "frames_per_point": int,
    "target_errors": int,
    "code_spec": lambda v: str(v).strip(),
    "code_seed": int,
    "sigma1_sq": float,
    "sigma2_sq": float,
    "lambda_t": float,
    "lambda_tau": float,
    "seed": int,
    "round_limit": int,
    "cut_on_hard_decision": parse_bool,
    "record_timing": parse_bool,
}


def config_from_mapping(values, base_dir=None):
    """Build an ExperimentConfig from string (or already typed) values keyed by field name"""
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
    missing = [k for k in ("snr_grid_db", "receivers") if values.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"Missing required config key(s): {', '.join(missing)}")
    parsed = {}
    for key, raw in values.items():
        if raw is None:
            raise ConfigError(f"Config key {key} has no value")
        if isinstance(raw, str):
            try:
                parsed[key] = _PARSERS[key](raw)
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"Invalid value for {key}: {raw!r}") from None
        elif isinstance(raw, (list, tuple)):
            parsed[key] = tuple(raw)
        else:
            parsed[key] = raw
    code_spec = parsed.get("code_spec")
    if base_dir and code_spec and code_spec.endswith(".alist") and not os.path.isabs(code_spec):
        candidate = os.path.join(base_dir, code_spec)
        if os.path.exists(candidate):
            parsed["code_spec"] = candidate
    return ExperimentConfig(**parsed)


def load_config(path, overrides=None):
    """Read a flat key = value experiment file; overrides (e.g. CLI flags) win over file keys"""
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    values = dict(dotenv_values(path, interpolate=False))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(values, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_config_text(text, overrides=None):
    values = dict(dotenv_values(stream=io.StringIO(text), interpolate=False))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(values)


# --- sweeps -------------------------------------------------------------------------

@dataclass
class SweepPoint:
    receiver: str
    snr_db: float
    frames: int = 0
    bits: int = 0
    errors: int = 0
    cuts: int = 0
    rounds: int = 0
    iterations: int = 0
    nodes: int = 0
    final_rows: int = 0
    flops: int = 0
    seconds: float = 0.0

    @property
    def ber(self):
        return self.errors / self.bits if self.bits else 0.0

    def mean(self, total):
        return total / self.frames if self.frames else 0.0


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list = field(default_factory=list)

    def point(self, receiver, snr_db):
        for p in self.points:
            if p.receiver == receiver and p.snr_db == snr_db:
                return p
        raise KeyError((receiver, snr_db))

    def rows(self):
        for p in self.points:
            yield {
                "receiver": p.receiver,
                "snr_db": f"{p.snr_db:g}",
                "bits": str(p.bits),
                "errors": str(p.errors),
                "ber": f"{p.ber:.6e}",
                "cuts": f"{p.mean(p.cuts):.3f}",
                "rounds": f"{p.mean(p.rounds):.3f}",
                "iters": f"{p.mean(p.iterations):.3f}",
                "nodes": f"{p.mean(p.nodes):.3f}",
                "rows": f"{p.mean(p.final_rows):.3f}",
                "flops": f"{p.mean(p.flops):.6e}",
                "seconds": f"{p.mean(p.seconds):.6f}",
            }


def check_receivers(receivers, code):
    for receiver in receivers:
        if receiver not in RECEIVER_IDS:
            raise UnknownReceiverError(
                f"Unknown receiver {receiver!r}; choose from {', '.join(RECEIVER_IDS)}")
        if receiver in CODED_RECEIVERS and not code.coded:
            raise IncompatibleReceiverError(
                f"{receiver} needs an LDPC code; code_spec is {code.spec.label!r}")


def simulate_frame(task):
    """Run every receiver on one frame; returns per-receiver counter tuples.

    task = (config, code, snr_db, frame_index). The frame stream depends only on
    (seed, frame_index), so every SNR point reuses the same bits, channel and
    unit-variance noise.
    """
    config, code, snr_db, frame_index = task
    params = FrameParams(noise_var=snr_db_to_noise_var(snr_db, config.sigma1_sq),
                         sigma1_sq=config.sigma1_sq, sigma2_sq=config.sigma2_sq,
                         n_symbols=code.n_symbols)
    frame = make_frame(code.encoder, make_rng(config.seed, frame_index), params)
    settings = config.receiver_settings
    outcome = {}
    for receiver in config.receivers:
        started = time.perf_counter()
        report = run_receiver(receiver, frame, code.H, settings)
        elapsed = time.perf_counter() - started if config.record_timing else 0.0
        errors = int(np.count_nonzero(report.decoded_bits != frame.tx_bits))
        work = estimate_work(report)
        outcome[receiver] = (len(frame.tx_bits), errors, work.cuts_added, work.cut_rounds,
                             work.simplex_iterations, work.branch_nodes, work.final_rows,
                             work.estimated_flops, elapsed)
    return outcome


def run_sweep(config, jobs=1, code=None):
    """BER sweep over config.snr_grid_db for every configured receiver.

    Frames run in fixed batches; a point stops after the batch in which every
    receiver reached target_errors, so the result does not depend on jobs.
    """
    code = code or load_code(config.code_spec, config.code_seed)
    check_receivers(config.receivers, code)
    if config.sigma1_sq >= config.sigma2_sq:
        logger.warning("sigma1_sq = %g is not below sigma2_sq = %g; the relay link is not the stronger one",
                       config.sigma1_sq, config.sigma2_sq)

    result = SweepResult(config=config)
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for snr_db in config.snr_grid_db:
            points = {r: SweepPoint(receiver=r, snr_db=snr_db) for r in config.receivers}
            done = 0
            while done < config.frames_per_point:
                batch = range(done, min(done + BATCH_SIZE, config.frames_per_point))
                tasks = [(config, code, snr_db, i) for i in batch]
                outcomes = pool.map(simulate_frame, tasks) if pool else map(simulate_frame, tasks)
                for outcome in outcomes:
                    for receiver, counters in outcome.items():
                        _accumulate(points[receiver], counters)
                done = batch.stop
                if all(p.errors >= config.target_errors for p in points.values()):
                    break
            for p in points.values():
                logger.info("%s @ %g dB: %d errors / %d bits (BER %.3e) over %d frames",
                            p.receiver, snr_db, p.errors, p.bits, p.ber, p.frames)
            result.points.extend(points.values())
    finally:
        if pool:
            pool.shutdown()
    return result


def _accumulate(point, counters):
    bits, errors, cuts, rounds, iterations, nodes, final_rows, flops, seconds = counters
    point.frames += 1
    point.bits += bits
    point.errors += errors
    point.cuts += cuts
    point.rounds += rounds
    point.iterations += iterations
    point.nodes += nodes
    point.final_rows += final_rows
    point.flops += flops
    point.seconds += seconds


def sweep_to_csv(result):
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(result.rows())
    return buffer.getvalue()


def emit_csv(result, path):
    with open(path, "w", newline="") as handle:
        handle.write(sweep_to_csv(result))


def emit_plotdata(result, path):
    """One whitespace-separated block per receiver, blocks split by two blank lines"""
    blocks = []
    for receiver in result.config.receivers:
        lines = [f"# receiver {receiver}", "# snr_db ber errors bits"]
        for p in result.points:
            if p.receiver == receiver:
                lines.append(f"{p.snr_db:g} {p.ber:.6e} {p.errors} {p.bits}")
        blocks.append("\n".join(lines))
    with open(path, "w", newline="") as handle:
        handle.write("\n\n\n".join(blocks) + "\n")


# --- complexity ----------------------------------------------------------------------

@dataclass(frozen=True)
class ComplexityRow:
    code: str
    code_length: int
    checks: int
    parity_inequalities: int
    unified_rows: int
    adaptive_vars: int
    adaptive_rows: int
    uncoded_vars: int
    uncoded_rows: int
    mean_cuts: float = None
    mean_iterations: float = None
    adaptive_final_rows: float = None
    adaptive_flops: float = None
    unified_iterations: float = None
    unified_flops: float = None
    uncoded_iterations: float = None
    uncoded_flops: float = None


COMPLEXITY_COLUMNS = tuple(f.name for f in fields(ComplexityRow))


def _measured_means(code, code_seed, measure_frames, snr_db, seed):
    config = ExperimentConfig(snr_grid_db=(snr_db,), receivers=MEASURED_RECEIVERS,
                              frames_per_point=measure_frames, target_errors=10**9,
                              code_spec=code.spec.label, code_seed=code_seed, seed=seed)
    result = run_sweep(config, code=code)
    adaptive, unified, uncoded = (result.point(r, snr_db) for r in MEASURED_RECEIVERS)
    return dict(
        mean_cuts=adaptive.mean(adaptive.cuts),
        mean_iterations=adaptive.mean(adaptive.iterations),
        adaptive_final_rows=adaptive.mean(adaptive.final_rows),
        adaptive_flops=adaptive.mean(adaptive.flops),
        unified_iterations=unified.mean(unified.iterations),
        unified_flops=unified.mean(unified.flops),
        uncoded_iterations=uncoded.mean(uncoded.iterations),
        uncoded_flops=uncoded.mean(uncoded.flops),
    )


def complexity_report(code_specs, code_seed=7, measure_frames=0, snr_db=8.0, seed=0):
    """Formulation sizes per code.

    measure_frames > 0 adds per-frame means of iterations and the rows^2 flops
    proxy for the adaptive, unified and uncoded LPs on the same frames.
    """
    rows = []
    for spec in code_specs:
        code = spec if isinstance(spec, CodeSetup) else load_code(
            spec if isinstance(spec, CodeSpec) else parse_code_spec(str(spec)), code_seed)
        if not code.coded:
            raise IncompatibleReceiverError("complexity_report needs LDPC codes")
        H = code.H
        parity = count_parity_inequalities(H)
        adaptive_vars, adaptive_rows = unified_size(H.n_cols)
        _, unified_rows = unified_size(H.n_cols, parity)
        uncoded_vars, uncoded_rows = uncoded_size(H.n_cols // 2)
        measured = _measured_means(code, code_seed, measure_frames, snr_db, seed) if measure_frames > 0 else {}
        rows.append(ComplexityRow(
            code=code.spec.label, code_length=H.n_cols, checks=H.n_rows,
            parity_inequalities=parity, unified_rows=unified_rows,
            adaptive_vars=adaptive_vars, adaptive_rows=adaptive_rows,
            uncoded_vars=uncoded_vars, uncoded_rows=uncoded_rows,
            **measured,
        ))
        logger.info("Complexity %s: %d parity inequalities, unified rows %d", code.spec.label,
                    parity, unified_rows)
    return rows


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def emit_complexity_csv(rows, path):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(COMPLEXITY_COLUMNS)
        for row in rows:
            writer.writerow([_cell(getattr(row, c)) for c in COMPLEXITY_COLUMNS])


def format_complexity_table(rows):
    table = [COMPLEXITY_COLUMNS] + [tuple(_cell(getattr(r, c)) for c in COMPLEXITY_COLUMNS) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(COMPLEXITY_COLUMNS))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in table) + "\n"


# --- oracle ---------------------------------------------------------------------------

def _residual_objective(frame, x, lambda_tau):
    """min lambda_tau * sum(tau) over theta and tau with x fixed"""
    n = len(x)
    builder = LpBuilder(4 + 2 * n)
    taus = range(4, 4 + 2 * n)
    builder.set_bounds(taus, 0.0, np.inf)
    builder.set_cost(taus, lambda_tau)
    for k in range(n):
        r1, r2 = frame.r1[k], frame.r2[k]
        builder.add_abs_le({0: -r1.real, 1: -r1.imag, 2: -r2.real, 3: -r2.imag}, x[k].real, 4 + k)
        builder.add_abs_le({0: -r1.imag, 1: r1.real, 2: -r2.imag, 3: r2.real}, x[k].imag, 4 + n + k)
    solution = solve_lp(builder.build())
    if solution.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"residual combiner LP ended {solution.status.value}")
    return solution.objective_value


def brute_force_oracle(frame, h1, code, lambda_t=1.0, lambda_tau=1.0):
    """Exact unified-MILP optimum by enumerating every codeword.

    code is a ParityCheckMatrix or an Encoder. Ties within 1e-9 go to the
    lexicographically smallest bit vector.
    """
    encoder = systematize(code) if isinstance(code, ParityCheckMatrix) else code
    gamma = frame_llr(frame, h1)
    best_bits, best_obj = None, math.inf
    for word in codewords(encoder):
        x = modulate_qam4_gray(word)
        fitted = h1 * x - frame.r1
        objective = (lambda_t * float(np.sum(np.abs(fitted.real)) + np.sum(np.abs(fitted.imag)))
                     + _residual_objective(frame, x, lambda_tau)
                     + float(gamma @ word))
        if best_bits is None or objective < best_obj - ORACLE_TIE_TOL:
            best_bits, best_obj = word, objective
        elif abs(objective - best_obj) <= ORACLE_TIE_TOL and tuple(word) < tuple(best_bits):
            best_bits, best_obj = word, min(objective, best_obj)
    return best_bits, best_obj
