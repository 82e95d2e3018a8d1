"""Directed communication graphs and time-varying graph schedules.

Nodes are numbered 1..n.  An edge (j, i) means node i receives from node j.
Self-loops are implied at every node and are never stored explicitly, so
degree counts derived from the edge set exclude them.

Schedules generate one graph per iteration index k.  Generation is a pure
function of (schedule, k): the extra random edges for iteration k are drawn
from a counter-based RNG block addressed by k, so graphs can be produced in
any order (including backwards) and always agree with a sequential sweep.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

#: iterations per RNG block for schedule edge sampling
_BLOCK = 1024

SCHEDULE_KINDS = ("static", "rotating", "replayed")


class GraphStructureError(ValueError):
    """Raised when an operation requires structure the graph lacks."""


@dataclass(frozen=True)
class DiGraph:
    """Immutable directed graph with implicit self-loops.

    Parameters
    ----------
    n : int
        Node count; nodes are 1..n.
    edges : frozenset of (int, int)
        Ordered pairs (j, i): i receives from j.  Must not contain
        self-loops (they are implicit) or out-of-range endpoints.
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"node count must be >= 1, got {self.n}")
        object.__setattr__(self, "edges", frozenset(map(tuple, self.edges)))
        for j, i in self.edges:
            if not (1 <= j <= self.n and 1 <= i <= self.n):
                raise ValueError(f"edge ({j}, {i}) out of range [1, {self.n}]")
            if j == i:
                raise ValueError(f"self-loop ({j}, {i}) must not be stored explicitly")

    def in_neighbors(self, i: int) -> set:
        """Nodes j with an edge (j, i), excluding i itself."""
        self._check_node(i)
        return {j for (j, r) in self.edges if r == i}

    def out_neighbors(self, i: int) -> set:
        """Nodes l with an edge (i, l), excluding i itself."""
        self._check_node(i)
        return {r for (j, r) in self.edges if j == i}

    def _check_node(self, i: int):
        if not (1 <= i <= self.n):
            raise ValueError(f"node index {i} out of range [1, {self.n}]")

    def receiver_adjacency(self) -> np.ndarray:
        """Boolean (n, n) matrix: entry [i-1, j-1] true iff j in N_in(i) or j == i."""
        adj = np.eye(self.n, dtype=bool)
        for j, i in self.edges:
            adj[i - 1, j - 1] = True
        return adj

    def _out_lists(self):
        """Sorted out-neighbor lists (0-based), self-loops excluded."""
        out = [[] for _ in range(self.n)]
        for j, i in self.edges:
            out[j - 1].append(i - 1)
        for lst in out:
            lst.sort()
        return out


def in_neighbors(g: DiGraph, i: int) -> set:
    return g.in_neighbors(i)


def is_strongly_connected(g: DiGraph) -> bool:
    """True iff every node reaches every other node along directed paths."""
    if g.n == 1:
        return True
    fwd = g._out_lists()
    rev = [[] for _ in range(g.n)]
    for j, i in g.edges:
        rev[i - 1].append(j - 1)
    for lists in (fwd, rev):
        seen = _reachable(lists, 0, g.n)
        if len(seen) != g.n:
            return False
    return True


def _reachable(adj_lists, src, n):
    seen = {src}
    stack = [src]
    while stack:
        u = stack.pop()
        for v in adj_lists[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _bfs_levels_parents(out_lists, src, n):
    """BFS from src over ascending-index neighbor lists.

    Returns (dist, parent); parent[v] is the canonical predecessor of v on
    the canonical shortest path tree (first discoverer in BFS order).
    """
    dist = [-1] * n
    parent = [-1] * n
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in out_lists[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                parent[v] = u
                queue.append(v)
    return dist, parent


def diameter(g: DiGraph) -> int:
    """Longest shortest directed path length over ordered node pairs.

    Self-loops do not shorten paths.  Single-node graphs have diameter 1 by
    convention (used as a neutral factor in contraction constants).
    """
    if g.n == 1:
        return 1
    out_lists = g._out_lists()
    best = 0
    for src in range(g.n):
        dist, _ = _bfs_levels_parents(out_lists, src, g.n)
        for v, d in enumerate(dist):
            if v == src:
                continue
            if d < 0:
                raise GraphStructureError("graph is not strongly connected")
            best = max(best, d)
    return best


def max_edge_utility(g: DiGraph) -> int:
    """Maximum, over non-self-loop edges, of canonical shortest paths using it.

    One canonical shortest path is fixed per ordered node pair by a BFS that
    expands neighbors in ascending node-index order; the utility of an edge
    is the number of canonical paths traversing it.  Single-node graphs
    return 1 by convention.
    """
    if g.n == 1:
        return 1
    out_lists = g._out_lists()
    use = {}
    for src in range(g.n):
        dist, parent = _bfs_levels_parents(out_lists, src, g.n)
        for v in range(g.n):
            if v == src:
                continue
            if dist[v] < 0:
                raise GraphStructureError("graph is not strongly connected")
            w = v
            while w != src:
                p = parent[w]
                use[(p, w)] = use.get((p, w), 0) + 1
                w = p
    return max(use.values())


def export_edge_list(g: DiGraph) -> str:
    """Edge-list text, one \"j i\" pair per line, sorted for stability."""
    return "\n".join(f"{j} {i}" for j, i in sorted(g.edges))


def parse_edge_list(text: str, n: int) -> DiGraph:
    edges = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'j i', got {line!r}")
        edges.add((int(parts[0]), int(parts[1])))
    return DiGraph(n, frozenset(edges))


def complete_digraph(n: int) -> DiGraph:
    edges = frozenset((j, i) for j in range(1, n + 1) for i in range(1, n + 1) if j != i)
    return DiGraph(n, edges)


def _cycle_edges(n: int) -> frozenset:
    if n == 1:
        return frozenset()
    return frozenset((i, i % n + 1) for i in range(1, n + 1))


@dataclass(frozen=True)
class GraphSchedule:
    """Generator of per-iteration directed graphs.

    kind is one of:

    - ``static``: one graph (cycle + ``extra_edges`` random chords sampled
      once from ``seed``) reused at every iteration;
    - ``rotating``: directed cycle whose starting offset rotates by
      k mod n, plus ``extra_edges`` random chords resampled every
      iteration (the rotation is an automorphism of the cycle, so the
      time variation comes from the chords);
    - ``replayed``: replays an explicit graph sequence cyclically.

    Every generated graph contains the full directed cycle plus self-loops,
    hence is strongly connected by construction.
    """

    kind: str
    n: int
    extra_edges: int = 0
    seed: int = 0
    sequence: tuple = ()

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if self.n < 1:
            raise ValueError("schedule needs n >= 1")
        if self.extra_edges < 0:
            raise ValueError("extra_edges must be >= 0")
        if self.kind == "replayed":
            if not self.sequence:
                raise ValueError("replayed schedule needs a non-empty graph sequence")
            for g in self.sequence:
                if g.n != self.n:
                    raise ValueError("replayed graphs must share the schedule's n")
        else:
            cap = len(_noncycle_pairs(self.n))
            if self.extra_edges > cap:
                raise ValueError(f"extra_edges {self.extra_edges} exceeds the {cap} available non-cycle pairs")

    @property
    def effectively_static(self) -> bool:
        """True when every iteration yields the same graph."""
        if self.kind == "static":
            return True
        if self.kind == "replayed":
            return len(set(self.sequence)) == 1
        cap = len(_noncycle_pairs(self.n))
        return self.extra_edges in (0, cap)


@lru_cache(maxsize=64)
def _noncycle_pairs(n: int) -> tuple:
    """Ordered non-self, non-cycle pairs, fixed ordering for reproducibility."""
    cyc = _cycle_edges(n)
    return tuple(
        (j, i)
        for j in range(1, n + 1)
        for i in range(1, n + 1)
        if j != i and (j, i) not in cyc
    )


def _schedule_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(entropy=seed, spawn_key=(0x5AB,)).generate_state(2, np.uint64)


@lru_cache(maxsize=16)
def _extra_choice_block(n: int, extra: int, seed: int, block: int) -> np.ndarray:
    """(block_size, extra) array of pair indices, sampled without replacement per row."""
    pairs = _noncycle_pairs(n)
    npairs = len(pairs)
    bitgen = np.random.Philox(key=_schedule_key(seed), counter=[0, 0, np.uint64(block), 0])
    rng = np.random.Generator(bitgen)
    if extra == npairs:
        return np.tile(np.arange(npairs), (_BLOCK, 1))
    keys = rng.random((_BLOCK, npairs))
    return np.argpartition(keys, extra - 1, axis=1)[:, :extra].copy()


def _extra_pair_indices(schedule: GraphSchedule, k: int) -> np.ndarray:
    if schedule.extra_edges == 0:
        return np.empty(0, dtype=np.intp)
    if schedule.kind == "static":
        k = 0
    return _extra_choice_block(schedule.n, schedule.extra_edges, schedule.seed, k // _BLOCK)[k % _BLOCK]


def generate(schedule: GraphSchedule, k: int) -> DiGraph:
    """Graph for iteration k; deterministic in (schedule, k)."""
    if k < 0:
        raise ValueError(f"iteration index must be >= 0, got {k}")
    if schedule.kind == "replayed":
        return schedule.sequence[k % len(schedule.sequence)]
    pairs = _noncycle_pairs(schedule.n)
    edges = set(_cycle_edges(schedule.n))
    for idx in _extra_pair_indices(schedule, k):
        edges.add(pairs[idx])
    return DiGraph(schedule.n, frozenset(edges))


def receiver_adjacency_chunk(schedule: GraphSchedule, k0: int, count: int) -> np.ndarray:
    """Stacked receiver adjacency for iterations [k0, k0+count).

    Entry [t, i-1, j-1] is 1.0 iff at iteration k0+t node i receives from j
    or i == j.  This is the vectorized counterpart of
    ``generate(...).receiver_adjacency()`` and agrees with it exactly.
    """
    n = schedule.n
    if schedule.kind == "replayed":
        adj = np.empty((count, n, n))
        for t in range(count):
            adj[t] = schedule.sequence[(k0 + t) % len(schedule.sequence)].receiver_adjacency()
        return adj
    base = np.eye(n)
    for j, i in _cycle_edges(n):
        base[i - 1, j - 1] = 1.0
    adj = np.broadcast_to(base, (count, n, n)).copy()
    if schedule.extra_edges == 0:
        return adj
    pairs = np.asarray(_noncycle_pairs(n), dtype=np.intp)
    if schedule.kind == "static" or schedule.effectively_static:
        sel = pairs[_extra_pair_indices(schedule, 0 if schedule.kind == "static" else k0)]
        adj[:, sel[:, 1] - 1, sel[:, 0] - 1] = 1.0
        return adj
    ks = np.arange(k0, k0 + count)
    for block in np.unique(ks // _BLOCK):
        rows = _extra_choice_block(n, schedule.extra_edges, schedule.seed, int(block))
        mask = ks // _BLOCK == block
        sel = pairs[rows[ks[mask] % _BLOCK]]  # (m, extra, 2)
        t_idx = np.nonzero(mask)[0][:, None]
        adj[t_idx, sel[:, :, 1] - 1, sel[:, :, 0] - 1] = 1.0
    return adj
