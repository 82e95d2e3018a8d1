"""Row- and column-stochastic mixing matrices aligned with a directed graph.

Decision variables are mixed with a row-stochastic matrix A (each agent
averages what it receives), trackers with a column-stochastic matrix B
(each agent splits what it sends).  Both must be sparsity-aligned with the
communication graph: A[i, j] > 0 exactly when j is an in-neighbor of i or
j == i, and B[j, i] > 0 exactly when j is an out-neighbor of i or j == i.

Matrix rows/columns are 0-based; row i-1 belongs to agent i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import DiGraph

#: absolute tolerance on row/column sums; construction rounds near 1e-16,
#: so breaches at this level indicate bugs rather than rounding
STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class WeightMatrix:
    """Dense nonnegative (n, n) matrix, row- or column-stochastic."""

    entries: np.ndarray
    mode: str  # "row" or "column"

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {e.shape}")
        if self.mode not in ("row", "column"):
            raise ValueError(f"mode must be 'row' or 'column', got {self.mode!r}")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class WeightPair:
    """Aligned (A, B) pair for one graph."""

    A: WeightMatrix
    B: WeightMatrix
    graph: DiGraph


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)
    min_pos_a: float = float("nan")
    min_pos_b: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.issues


def build_row_stochastic(g: DiGraph, rule=None) -> WeightMatrix:
    """Row-stochastic A aligned with g.

    The default rule gives agent i uniform weight 1/(|N_in(i)| + 1) on each
    in-neighbor and itself.  A custom ``rule(g, i) -> dict`` may return the
    weights for row i (keyed by 1-based node, must cover N_in(i) and i).
    """
    n = g.n
    A = np.zeros((n, n))
    for i in range(1, n + 1):
        nbrs = g.in_neighbors(i)
        if rule is None:
            w = 1.0 / (len(nbrs) + 1)
            for j in nbrs:
                A[i - 1, j - 1] = w
            A[i - 1, i - 1] = w
        else:
            row = rule(g, i)
            if set(row) != nbrs | {i}:
                raise ValueError(f"custom rule for row {i} must weight exactly N_in({i}) and {i}")
            for j, wj in row.items():
                A[i - 1, j - 1] = wj
    return WeightMatrix(A, "row")


def build_column_stochastic(g: DiGraph, rule=None) -> WeightMatrix:
    """Column-stochastic B aligned with g.

    The default rule has agent i send weight 1/(|N_out(i)| + 1) to each
    out-neighbor and keep the same for itself; ``rule(g, i) -> dict`` may
    override column i (keyed by 1-based receiver, must cover N_out(i) and i).
    """
    n = g.n
    B = np.zeros((n, n))
    for i in range(1, n + 1):
        nbrs = g.out_neighbors(i)
        if rule is None:
            w = 1.0 / (len(nbrs) + 1)
            for j in nbrs:
                B[j - 1, i - 1] = w
            B[i - 1, i - 1] = w
        else:
            col = rule(g, i)
            if set(col) != nbrs | {i}:
                raise ValueError(f"custom rule for column {i} must weight exactly N_out({i}) and {i}")
            for j, wj in col.items():
                B[j - 1, i - 1] = wj
    return WeightMatrix(B, "column")


def build_pair(g: DiGraph) -> WeightPair:
    return WeightPair(build_row_stochastic(g), build_column_stochastic(g), g)


def min_positive(W: WeightMatrix) -> float:
    """Smallest strictly positive entry."""
    pos = W.entries[W.entries > 0.0]
    if pos.size == 0:
        raise ValueError("matrix has no positive entries")
    return float(pos.min())


def validate_alignment(pair: WeightPair) -> ValidationReport:
    """Check stochasticity, nonnegativity and graph alignment of (A, B).

    Zero entries must be exactly zero where the graph has no edge; an empty
    issue list means the pair is valid.
    """
    rep = ValidationReport()
    g = pair.graph
    n = g.n
    A, B = pair.A.entries, pair.B.entries
    if pair.A.mode != "row":
        rep.issues.append("A is not marked row-stochastic")
    if pair.B.mode != "column":
        rep.issues.append("B is not marked column-stochastic")
    if A.shape != (n, n) or B.shape != (n, n):
        rep.issues.append(f"shape mismatch with graph of {n} nodes: A {A.shape}, B {B.shape}")
        return rep

    for name, W in (("A", A), ("B", B)):
        bad = np.argwhere(W < 0.0)
        for i, j in bad:
            rep.issues.append(f"{name}[{i + 1},{j + 1}] = {W[i, j]!r} is negative")
    sums = A.sum(axis=1)
    for i in np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)[0]:
        rep.issues.append(f"row {i + 1} of A sums to {sums[i]!r} (tolerance {STOCHASTIC_TOL})")
    sums = B.sum(axis=0)
    for i in np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)[0]:
        rep.issues.append(f"column {i + 1} of B sums to {sums[i]!r} (tolerance {STOCHASTIC_TOL})")

    for i in range(1, n + 1):
        allowed_in = g.in_neighbors(i) | {i}
        allowed_out = g.out_neighbors(i) | {i}
        for j in range(1, n + 1):
            a = A[i - 1, j - 1]
            if j in allowed_in:
                if a <= 0.0:
                    rep.issues.append(f"A[{i},{j}] must be positive (j in N_in({i}) or self)")
            elif a != 0.0:
                rep.issues.append(f"A[{i},{j}] = {a!r} must be exactly zero (j not in N_in({i}))")
            b = B[j - 1, i - 1]
            if j in allowed_out:
                if b <= 0.0:
                    rep.issues.append(f"B[{j},{i}] must be positive (j in N_out({i}) or self)")
            elif b != 0.0:
                rep.issues.append(f"B[{j},{i}] = {b!r} must be exactly zero (j not in N_out({i}))")

    try:
        rep.min_pos_a = min_positive(pair.A)
        rep.min_pos_b = min_positive(pair.B)
    except ValueError:
        rep.issues.append("matrix has no positive entries")
    return rep


def export_csv(W: WeightMatrix) -> str:
    """Row-major CSV with shortest round-trip float formatting."""
    return "\n".join(",".join(repr(x) for x in row) for row in W.entries)


def stochastic_stacks(adj: np.ndarray) -> tuple:
    """Uniform-weight (A, B) stacks from stacked receiver adjacency.

    adj has shape (steps, n, n) with adj[t, i, j] = 1.0 iff agent i+1
    receives from j+1 (diagonal set).  Row-normalizing gives A_k and
    column-normalizing gives B_k, matching the per-graph builders exactly.
    """
    A = adj / adj.sum(axis=2, keepdims=True)
    B = adj / adj.sum(axis=1, keepdims=True)
    return np.ascontiguousarray(A), np.ascontiguousarray(B)
