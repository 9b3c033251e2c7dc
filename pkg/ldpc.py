"""
LDPC parity-check matrices and the parity-polytope machinery built on them.

Covers code construction (seeded Gallager permutation blocks), alist
interchange, GF(2) systematic encoding, the odd-subset parity inequalities,
the most-violated-cut search used by the adaptive receiver, and the LLRs the
direct link provides for each bit.
"""

import itertools
import logging
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

MAX_ENUMERATED_DEGREE = 24
MAX_CODEWORD_ENUMERATION_BITS = 16
CUT_TOL = 1e-6


class CodeConstructionError(ValueError):
    """Raised for code parameters that cannot produce a regular matrix"""


class AlistFormatError(ValueError):
    """Raised when alist text cannot be parsed; carries the 1-based line number"""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ParityCheckMatrix:
    """Sparse binary H kept as neighbor lists in both directions"""
    n_cols: int
    n_rows: int
    row_neighbors: tuple
    col_neighbors: tuple

    def __post_init__(self):
        if len(self.row_neighbors) != self.n_rows or len(self.col_neighbors) != self.n_cols:
            raise ValueError("neighbor lists do not match the matrix dimensions")
        edges = set()
        for m, row in enumerate(self.row_neighbors):
            if not row:
                raise ValueError(f"check {m} has no neighbors")
            if len(set(row)) != len(row):
                raise ValueError(f"check {m} repeats a variable index")
            if min(row) < 0 or max(row) >= self.n_cols:
                raise ValueError(f"check {m} references a column outside 0..{self.n_cols - 1}")
            edges.update((m, v) for v in row)
        transposed = {(m, v) for v, col in enumerate(self.col_neighbors) for m in col}
        if transposed != edges or sum(len(c) for c in self.col_neighbors) != len(edges):
            raise ValueError("row and column neighbor lists describe different matrices")

    @classmethod
    def from_rows(cls, n_cols, rows):
        row_neighbors = tuple(tuple(sorted(int(v) for v in row)) for row in rows)
        cols = [[] for _ in range(n_cols)]
        for m, row in enumerate(row_neighbors):
            for v in row:
                if 0 <= v < n_cols:
                    cols[v].append(m)
        return cls(n_cols=int(n_cols), n_rows=len(row_neighbors),
                   row_neighbors=row_neighbors,
                   col_neighbors=tuple(tuple(c) for c in cols))

    @classmethod
    def from_dense(cls, matrix):
        matrix = np.asarray(matrix)
        return cls.from_rows(matrix.shape[1], [np.flatnonzero(r) for r in matrix])

    def to_dense(self):
        dense = np.zeros((self.n_rows, self.n_cols), dtype=np.uint8)
        for m, row in enumerate(self.row_neighbors):
            dense[m, list(row)] = 1
        return dense

    @cached_property
    def sparse(self):
        rows = [m for m, row in enumerate(self.row_neighbors) for _ in row]
        cols = [v for row in self.row_neighbors for v in row]
        return sp.csr_matrix((np.ones(len(cols), dtype=np.int64), (rows, cols)),
                             shape=(self.n_rows, self.n_cols))

    @property
    def row_degrees(self):
        return [len(row) for row in self.row_neighbors]

    @property
    def col_degrees(self):
        return [len(col) for col in self.col_neighbors]

    @property
    def num_ones(self):
        return sum(self.row_degrees)


@dataclass(frozen=True)
class ParityCut:
    """sum_{n in F} f[n] - sum_{n in N_m \\ F} f[n] <= |F| - 1 for check m, |F| odd"""
    check: int
    subset_f: tuple

    def __post_init__(self):
        if not self.subset_f or len(self.subset_f) % 2 == 0:
            raise ValueError("a parity cut needs a nonempty odd subset")


@dataclass(frozen=True, eq=False)
class Encoder:
    """Systematic encoder from GF(2) elimination of H.

    Codeword positions split into message_positions (free) and
    parity_positions (pivots); parity bits = generator @ message mod 2.
    """
    H: ParityCheckMatrix
    message_positions: tuple
    parity_positions: tuple
    generator: np.ndarray
    rank: int

    @property
    def n(self):
        return self.H.n_cols

    @property
    def message_length(self):
        return len(self.message_positions)

    @property
    def rank_deficit(self):
        return self.H.n_rows - self.rank

    @property
    def permutation(self):
        """Column order that puts the reduced H into [A | I]"""
        return self.message_positions + self.parity_positions


def _sockets_to_rows(order, row_weight):
    return [list(order[i:i + row_weight]) for i in range(0, len(order), row_weight)]


def _repair_repeats(rows, rng):
    """Swap entries between rows until no row holds a column twice"""
    for m, row in enumerate(rows):
        seen = set()
        for pos, v in enumerate(row):
            if v not in seen:
                seen.add(v)
                continue
            for other in rng.permutation(len(rows)):
                if other == m or v in rows[other]:
                    continue
                candidates = [q for q, w in enumerate(rows[other]) if w not in seen]
                if candidates:
                    q = candidates[0]
                    row[pos], rows[other][q] = rows[other][q], row[pos]
                    seen.add(row[pos])
                    break
            else:
                raise CodeConstructionError("could not place every column without repeats")


def _row_cycles(rows, col_sets, m):
    overlap = Counter(c for v in rows[m] for c in col_sets[v] if c != m)
    return sum(k * (k - 1) // 2 for k in overlap.values())


def _touching_cycles(rows, col_sets, a, c):
    """4-cycles through row a or row c, the pair (a, c) counted once"""
    shared = len(set(rows[a]) & set(rows[c]))
    return _row_cycles(rows, col_sets, a) + _row_cycles(rows, col_sets, c) - shared * (shared - 1) // 2


def _reduce_four_cycles(rows, n_cols, rng, max_passes):
    """Best-effort swaps that lower the 4-cycle count.

    A swap exchanges v in row a with w in row c, which keeps every row and
    column weight unchanged.
    """
    col_sets = [set() for _ in range(n_cols)]
    for m, row in enumerate(rows):
        for v in row:
            col_sets[v].add(m)

    for _ in range(max_passes):
        H = sp.csr_matrix((np.ones(sum(len(r) for r in rows)),
                           ([m for m, r in enumerate(rows) for _ in r], [v for r in rows for v in r])),
                          shape=(len(rows), n_cols))
        overlap = sp.triu(H @ H.T, k=1).tocoo()
        offending = [(int(a), int(b)) for a, b, k in zip(overlap.row, overlap.col, overlap.data) if k >= 2]
        if not offending:
            return 0
        improved = 0
        for a, b in offending:
            shared = sorted(set(rows[a]) & set(rows[b]))
            if len(shared) < 2:
                continue
            v = shared[-1]
            for c in rng.permutation(len(rows))[:8]:
                c = int(c)
                if c in (a, b) or v in rows[c]:
                    continue
                options = [w for w in rows[c] if w not in rows[a]]
                if not options:
                    continue
                w = options[int(rng.integers(len(options)))]
                before = _touching_cycles(rows, col_sets, a, c)
                ia, ic = rows[a].index(v), rows[c].index(w)
                rows[a][ia], rows[c][ic] = w, v
                col_sets[v].discard(a); col_sets[v].add(c)
                col_sets[w].discard(c); col_sets[w].add(a)
                after = _touching_cycles(rows, col_sets, a, c)
                if after < before:
                    improved += 1
                    break
                rows[a][ia], rows[c][ic] = v, w
                col_sets[v].discard(c); col_sets[v].add(a)
                col_sets[w].discard(a); col_sets[w].add(c)
        if not improved:
            break
    remaining = _count_offending_pairs(rows, n_cols)
    if remaining:
        logger.warning("4-cycle reduction stopped with %d row pairs still sharing two columns", remaining)
    return remaining


def _count_offending_pairs(rows, n_cols):
    H = sp.csr_matrix((np.ones(sum(len(r) for r in rows)),
                       ([m for m, r in enumerate(rows) for _ in r], [v for r in rows for v in r])),
                      shape=(len(rows), n_cols))
    overlap = sp.triu(H @ H.T, k=1)
    return int((overlap.data >= 2).sum())


def gallager_construct(n, col_weight, row_weight, seed, max_cycle_passes=10):
    """Regular (col_weight, row_weight) parity-check matrix of length n.

    Stacks col_weight column permutations of the length-n socket list (the
    first one the identity) and cuts the result into rows of row_weight; with
    n divisible by row_weight this is Gallager's block construction exactly.
    """
    if min(n, col_weight, row_weight) < 1:
        raise CodeConstructionError("length and weights must be positive")
    if (n * col_weight) % row_weight:
        raise CodeConstructionError(
            f"n*col_weight = {n * col_weight} is not divisible by row_weight = {row_weight}")
    if row_weight > n:
        raise CodeConstructionError("row_weight cannot exceed the code length")
    n_rows = n * col_weight // row_weight
    if col_weight > n_rows:
        raise CodeConstructionError("col_weight cannot exceed the number of checks")

    rng = np.random.Generator(np.random.Philox(seed))
    order = np.concatenate([np.arange(n)] + [rng.permutation(n) for _ in range(col_weight - 1)])
    rows = [[int(v) for v in row] for row in _sockets_to_rows(order, row_weight)]
    _repair_repeats(rows, rng)
    if col_weight > 1:
        _reduce_four_cycles(rows, n, rng, max_cycle_passes)

    H = ParityCheckMatrix.from_rows(n, rows)
    logger.info("Constructed (%d, %d, %d) code with %d checks, seed %d",
                n, col_weight, row_weight, H.n_rows, seed)
    return H


def save_alist(H):
    """alist text: dims, max degrees, degree lists, 1-indexed neighbor lists (zero padded)"""
    col_deg, row_deg = H.col_degrees, H.row_degrees
    max_col, max_row = max(col_deg, default=0), max(row_deg, default=0)
    lines = [f"{H.n_cols} {H.n_rows}", f"{max_col} {max_row}",
             " ".join(str(d) for d in col_deg), " ".join(str(d) for d in row_deg)]
    for col in H.col_neighbors:
        padded = [m + 1 for m in col] + [0] * (max_col - len(col))
        lines.append(" ".join(str(v) for v in padded))
    for row in H.row_neighbors:
        padded = [v + 1 for v in row] + [0] * (max_row - len(row))
        lines.append(" ".join(str(v) for v in padded))
    return "\n".join(lines) + "\n"


def load_alist(text):
    """Parse alist text produced by save_alist (or any standard alist file)"""
    numbered = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            try:
                numbered.append((lineno, [int(tok) for tok in raw.split()]))
            except ValueError:
                raise AlistFormatError(lineno, f"non-integer token in {raw.strip()!r}") from None
    last_line = len(text.splitlines())

    def take(idx, what, count=None):
        if idx >= len(numbered):
            raise AlistFormatError(last_line + 1, f"expected {what}, got end of file")
        lineno, values = numbered[idx]
        if count is not None and len(values) != count:
            raise AlistFormatError(lineno, f"expected {count} values for {what}, got {len(values)}")
        return lineno, values

    _, (n_cols, n_rows) = take(0, "dimensions", 2)
    if n_cols < 1 or n_rows < 1:
        raise AlistFormatError(numbered[0][0], "dimensions must be positive")
    _, (max_col, max_row) = take(1, "maximum degrees", 2)
    line, col_deg = take(2, "column degrees", n_cols)
    if max(col_deg) > max_col:
        raise AlistFormatError(line, "column degree exceeds declared maximum")
    line, row_deg = take(3, "row degrees", n_rows)
    if max(row_deg) > max_row:
        raise AlistFormatError(line, "row degree exceeds declared maximum")
    if sum(col_deg) != sum(row_deg):
        raise AlistFormatError(line, "column and row degrees count different numbers of ones")

    def neighbor_list(idx, what, degree, limit):
        lineno, values = take(idx, what)
        entries = [v for v in values if v != 0]
        if len(entries) != degree:
            raise AlistFormatError(lineno, f"{what} lists {len(entries)} entries, degree is {degree}")
        if any(v < 1 or v > limit for v in entries):
            raise AlistFormatError(lineno, f"{what} has an index outside 1..{limit}")
        return [v - 1 for v in entries]

    cols = [neighbor_list(4 + v, f"column {v + 1}", col_deg[v], n_rows) for v in range(n_cols)]
    rows = [neighbor_list(4 + n_cols + m, f"row {m + 1}", row_deg[m], n_cols) for m in range(n_rows)]

    try:
        H = ParityCheckMatrix.from_rows(n_cols, rows)
    except ValueError as e:
        raise AlistFormatError(numbered[min(4 + n_cols, len(numbered) - 1)][0], str(e)) from None
    if [sorted(c) for c in cols] != [list(c) for c in H.col_neighbors]:
        raise AlistFormatError(numbered[4][0], "column lists disagree with row lists")
    return H


def systematize(H):
    """Row-reduce H over GF(2) and build the systematic encoder.

    Rank deficiency only shrinks the pivot set; the message length becomes
    n_cols - rank.
    """
    mat = H.to_dense().astype(bool)
    n_rows, n_cols = mat.shape
    pivots = []
    r = 0
    for c in range(n_cols):
        if r == n_rows:
            break
        hits = np.flatnonzero(mat[r:, c])
        if not len(hits):
            continue
        p = r + hits[0]
        if p != r:
            mat[[r, p]] = mat[[p, r]]
        others = np.flatnonzero(mat[:, c])
        others = others[others != r]
        mat[others] ^= mat[r]
        pivots.append(c)
        r += 1

    pivot_set = set(pivots)
    message_positions = tuple(c for c in range(n_cols) if c not in pivot_set)
    generator = mat[:r][:, list(message_positions)].astype(np.uint8)
    generator.setflags(write=False)
    if r < n_rows:
        logger.info("Parity-check matrix has rank %d of %d rows; message length %d",
                    r, n_rows, len(message_positions))
    return Encoder(H=H, message_positions=message_positions, parity_positions=tuple(pivots),
                   generator=generator, rank=r)


def encode(encoder, message):
    message = np.asarray(message, dtype=np.uint8)
    if message.shape != (encoder.message_length,):
        raise ValueError(f"message must hold {encoder.message_length} bits")
    codeword = np.zeros(encoder.n, dtype=np.uint8)
    codeword[list(encoder.message_positions)] = message
    if encoder.rank:
        codeword[list(encoder.parity_positions)] = (encoder.generator.astype(np.int64) @ message) % 2
    return codeword


def codewords(encoder):
    """Every codeword, in message order (message read as a big-endian integer)"""
    k = encoder.message_length
    if k > MAX_CODEWORD_ENUMERATION_BITS:
        raise ValueError(f"refusing to enumerate 2^{k} codewords")
    for value in range(2 ** k):
        message = np.array([(value >> (k - 1 - i)) & 1 for i in range(k)], dtype=np.uint8)
        yield encode(encoder, message)


def check_codeword(H, f):
    f = np.asarray(f)
    if f.shape != (H.n_cols,):
        raise ValueError(f"vector must have length {H.n_cols}")
    if not np.all((f == 0) | (f == 1)):
        raise ValueError("check_codeword expects a binary vector")
    return not np.any((H.sparse @ f.astype(np.int64)) % 2)


def count_parity_inequalities(H):
    return sum(2 ** (d - 1) for d in H.row_degrees)


def enumerate_parity_inequalities(H):
    """All odd-subset inequalities, ordered by check, subset size, then lexicographically"""
    cuts = []
    for m, row in enumerate(H.row_neighbors):
        if len(row) > MAX_ENUMERATED_DEGREE:
            raise ValueError(f"check {m} has degree {len(row)} > {MAX_ENUMERATED_DEGREE}; "
                             "use find_violated_cuts instead")
        for size in range(1, len(row) + 1, 2):
            cuts.extend(ParityCut(m, subset) for subset in itertools.combinations(row, size))
    return cuts


def cut_to_row(H, cut, column_of=None):
    """(indices, values, rhs) of a cut; column_of maps bit n to an LP column"""
    subset = set(cut.subset_f)
    cols, vals = [], []
    for n in H.row_neighbors[cut.check]:
        cols.append(n if column_of is None else int(column_of[n]))
        vals.append(1.0 if n in subset else -1.0)
    return cols, vals, float(len(subset) - 1)


def cut_violation(H, cut, f):
    """LHS - (|F| - 1); positive means the cut is violated at f"""
    cols, vals, rhs = cut_to_row(H, cut)
    return float(np.dot(np.asarray(f, dtype=float)[cols], vals) - rhs)


def find_violated_cuts(H, f, tol=CUT_TOL):
    """Most violated odd-subset inequality per check, kept when it beats tol.

    Picks F = {n : f[n] > 1/2}; when |F| is even the cheapest element is
    toggled (the one with f closest to 1/2).
    """
    f = np.clip(np.asarray(f, dtype=float), 0.0, 1.0)
    if f.shape != (H.n_cols,):
        raise ValueError(f"vector must have length {H.n_cols}")
    cuts = []
    for m, row in enumerate(H.row_neighbors):
        idx = np.array(row)
        vals = f[idx]
        order = np.argsort(-vals, kind="stable")
        ranked, ranked_vals = idx[order], vals[order]
        size = int(np.count_nonzero(ranked_vals > 0.5))
        if size % 2 == 0:
            drop_cost = 2 * ranked_vals[size - 1] - 1 if size > 0 else np.inf
            add_cost = 1 - 2 * ranked_vals[size] if size < len(ranked) else np.inf
            size = size - 1 if drop_cost <= add_cost else size + 1
        chosen = ranked[:size]
        in_f = ranked_vals[:size]
        out_f = ranked_vals[size:]
        violation = in_f.sum() - out_f.sum() - (size - 1)
        if violation > tol:
            cuts.append(ParityCut(m, tuple(sorted(int(v) for v in chosen))))
    return cuts


def direct_llr(r1, h1, noise_var):
    """Per-bit LLRs log Pr(r|f=0)/Pr(r|f=1) from the direct link.

    Symbol k carries bits 2k (imaginary part) and 2k+1 (real part).
    """
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    z = np.conj(h1) * np.asarray(r1, dtype=complex)
    gamma = np.empty(2 * len(z))
    gamma[0::2] = 4.0 / noise_var * z.imag
    gamma[1::2] = 4.0 / noise_var * z.real
    return gamma
