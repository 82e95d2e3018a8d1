"""Distributed gradient-tracking iteration and centralized baselines.

The tracked method keeps, per agent, a decision row x and a tracker row y.
One step mixes decisions with the row-stochastic A_k, moves against the
tracker, then refreshes the tracker with the column-stochastic B_k plus the
increment of fresh oracle draws:

    X' = A_k X - alpha * Y
    Y' = B_k Y + g(X', xi') - g(X, xi)

Initializing Y from the first draws makes the tracker column sums equal the
draw column sums at every iteration (1'B = 1' preserves them), which is
checked on every recorded snapshot.

Baselines: ``abpp`` is the same loop with exact gradients, ``cgd`` / ``csgd``
are centralized full-batch and single-draw descent on the average cost.

Randomness: draw index k (the oracle call at iterate x_k) is served from
per-agent counter-based streams; blocks of 1024 draw rows are addressed
directly by block index, so chunked and one-at-a-time generation agree and
per-agent generation can be parallelized without changing results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .graph import GraphSchedule, receiver_adjacency_chunk
from .objective import AgentEnsemble, local_gradient
from .weights import WeightPair, stochastic_stacks

ALGORITHMS = ("sabtv", "abpp", "cgd", "csgd")

#: draw rows per RNG block; also the iteration chunk size of the run loop
BLOCK = 1024


class DivergenceError(RuntimeError):
    """Non-finite iterate detected; carries the failing iteration index."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite values at iteration {iteration}; step-size too large?")
        self.iteration = iteration


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    iterations: int
    seed: int = 0
    record_every: int | None = None
    algorithm: str = "sabtv"

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def stride(self) -> int:
        if self.record_every is not None:
            return self.record_every
        return max(1, self.iterations // 10_000)


@dataclass
class AlgState:
    """Iteration counter plus stacked decision, tracker and last-draw rows."""

    k: int
    X: np.ndarray
    Y: np.ndarray
    G_prev: np.ndarray


@dataclass
class Trace:
    """Recorded snapshots of one run; metric columns are filled by analysis."""

    algorithm: str
    alpha: float
    seed: int
    ks: np.ndarray
    epochs: np.ndarray
    X: np.ndarray            # (records, n, p)
    Y: np.ndarray | None     # tracked methods only
    G: np.ndarray | None
    evals_per_iteration: int
    batch_total: int
    wall_seconds: float
    metrics: dict = field(default_factory=dict)

    @property
    def records(self) -> int:
        return len(self.ks)


class OracleStreams:
    """Per-agent counter-based randomness, addressable by draw index."""

    def __init__(self, master_seed: int, n: int):
        self.master_seed = master_seed
        self.n = n
        self._keys = [
            np.random.SeedSequence(entropy=master_seed, spawn_key=(agent,)).generate_state(2, np.uint64)
            for agent in range(n)
        ]

    def _generator(self, agent: int, block: int) -> np.random.Generator:
        counter = np.array([0, 0, block, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._keys[agent], counter=counter))

    def _rows(self, lo: int, hi: int, draw_block) -> np.ndarray:
        """Stack rows [lo, hi) of the infinite per-agent draw tables."""
        parts = []
        for block in range(lo // BLOCK, (hi - 1) // BLOCK + 1):
            base = block * BLOCK
            full = np.stack([draw_block(a, block) for a in range(self.n)], axis=1)
            parts.append(full[max(lo, base) - base:min(hi, base + BLOCK) - base])
        return np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]

    def normal_rows(self, lo: int, hi: int, p: int) -> np.ndarray:
        """(hi-lo, n, p) standard normal draws for draw indices [lo, hi)."""
        return self._rows(lo, hi, lambda a, b: self._generator(a, b).standard_normal((BLOCK, p)))

    def index_rows(self, lo: int, hi: int, sizes, s: int) -> np.ndarray:
        """(hi-lo, n, s) uniform local sample indices, agent a in [0, sizes[a])."""
        return self._rows(
            lo, hi, lambda a, b: self._generator(a, b).integers(0, sizes[a], size=(BLOCK, s), dtype=np.int64)
        )


def _oracle_draws(ensemble: AgentEnsemble, streams: OracleStreams, X: np.ndarray,
                  lo: int, exact: bool) -> np.ndarray:
    """Draw matrix at one iterate (rows = agents), draw index lo."""
    n, p = X.shape
    oracle = ensemble.oracle
    if ensemble.is_quadratic or oracle.kind == "gaussian" or exact:
        G = np.stack([local_gradient(ensemble.locals[i], X[i]) for i in range(n)])
        if not exact and oracle.kind == "gaussian" and oracle.sigma > 0.0:
            G = G + streams.normal_rows(lo, lo + 1, p)[0] * (oracle.sigma / np.sqrt(p))
        return G
    sizes = [l.batch_size for l in ensemble.locals]
    idx = streams.index_rows(lo, lo + 1, sizes, oracle.batch_size)[0]
    return np.stack([
        ensemble.locals[i].sample_gradient(X[i], idx[i]) for i in range(n)
    ])


def init(ensemble: AgentEnsemble, x0, streams: OracleStreams, exact: bool = False) -> AlgState:
    """Initial state: trackers start at the first oracle draws."""
    n, p = ensemble.n, ensemble.dim
    if x0 is None:
        X = np.zeros((n, p))
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape == (p,):
            X = np.tile(x0, (n, 1))
        elif x0.shape == (n, p):
            X = x0.copy()
        else:
            raise ValueError(f"x0 must have shape {(p,)} or {(n, p)}, got {x0.shape}")
    G = _oracle_draws(ensemble, streams, X, 0, exact)
    return AlgState(0, X, G.copy(), G)


def step(state: AlgState, pair: WeightPair, alpha: float, ensemble: AgentEnsemble,
         streams: OracleStreams, exact: bool = False) -> AlgState:
    """One reference step (plain numpy); chunked runs produce the same numbers."""
    if pair.graph.n != state.X.shape[0]:
        raise ValueError("weight pair and state disagree on the agent count")
    Xn = pair.A.entries @ state.X - alpha * state.Y
    if not np.isfinite(Xn.sum()):
        raise DivergenceError(state.k + 1)
    Gn = _oracle_draws(ensemble, streams, Xn, state.k + 1, exact)
    Yn = pair.B.entries @ state.Y + Gn - state.G_prev
    return AlgState(state.k + 1, Xn, Yn, Gn)


def _weight_chunks(schedule: GraphSchedule, iterations: int):
    """Yield (k0, A_stack, B_stack) in BLOCK-sized chunks; static stacks are reused."""
    if schedule.effectively_static:
        size = min(BLOCK, max(iterations, 1))
        adj = receiver_adjacency_chunk(schedule, 0, 1)
        A1, B1 = stochastic_stacks(adj)
        A_full = np.ascontiguousarray(np.broadcast_to(A1[0], (size, schedule.n, schedule.n)))
        B_full = np.ascontiguousarray(np.broadcast_to(B1[0], (size, schedule.n, schedule.n)))
        for k0 in range(0, iterations, BLOCK):
            c = min(BLOCK, iterations - k0)
            yield k0, A_full[:c], B_full[:c]
    else:
        for k0 in range(0, iterations, BLOCK):
            c = min(BLOCK, iterations - k0)
            adj = receiver_adjacency_chunk(schedule, k0, c)
            A, B = stochastic_stacks(adj)
            yield k0, A, B


def _check_sum_tracking(trace: Trace):
    """Column sums of Y must track column sums of the last draws."""
    gs = trace.G.sum(axis=1)
    ys = trace.Y.sum(axis=1)
    err = np.abs(ys - gs)
    tol = 1e-9 * (1.0 + np.abs(gs))
    if np.any(err > tol):
        r, c = np.unravel_index(np.argmax(err - tol), err.shape)
        raise RuntimeError(
            f"tracker sum identity violated at k={trace.ks[r]} coord {c}: |{ys[r, c]!r} - {gs[r, c]!r}|"
        )


def _epoch_units(ensemble: AgentEnsemble) -> int:
    """Gradient evaluations that constitute one epoch (the full batch)."""
    if ensemble.is_quadratic:
        return ensemble.n
    return sum(l.batch_size for l in ensemble.locals)


def run(ensemble: AgentEnsemble, schedule: GraphSchedule, config: RunConfig,
        x0=None, backend: str | None = None) -> Trace:
    """Execute the configured algorithm and record snapshots every stride."""
    if config.algorithm in ("sabtv", "abpp"):
        return _run_tracking(ensemble, schedule, config, x0, backend,
                             exact=config.algorithm == "abpp")
    return _run_centralized(ensemble, config, x0, backend,
                            stochastic=config.algorithm == "csgd")


def abpp_run(ensemble: AgentEnsemble, schedule: GraphSchedule, config: RunConfig,
             x0=None, backend: str | None = None) -> Trace:
    """Deterministic push-pull baseline: the tracked loop with exact gradients."""
    return _run_tracking(ensemble, schedule, config, x0, backend, exact=True)


def _run_tracking(ensemble, schedule, config, x0, backend, exact) -> Trace:
    if schedule.n != ensemble.n:
        raise ValueError("schedule and ensemble disagree on the agent count")
    kern = _kernels.get_kernels(backend)
    n, p = ensemble.n, ensemble.dim
    K, stride = config.iterations, config.stride
    streams = OracleStreams(config.seed, n)
    t0 = time.perf_counter()
    state = init(ensemble, x0, streams, exact)

    records = K // stride + 1
    rec_X = np.empty((records, n, p))
    rec_Y = np.empty((records, n, p))
    rec_G = np.empty((records, n, p))
    rec_X[0], rec_Y[0], rec_G[0] = state.X, state.Y, state.G_prev

    oracle = ensemble.oracle
    gaussian_like = ensemble.is_quadratic or oracle.kind == "gaussian" or exact
    if ensemble.is_quadratic:
        Q = np.ascontiguousarray(np.stack([l.Q for l in ensemble.locals]))
        qlin = np.ascontiguousarray(np.stack([l.q for l in ensemble.locals]))
    else:
        feats = np.vstack([l.features for l in ensemble.locals])
        labels = np.concatenate([l.labels for l in ensemble.locals])
        sizes = np.array([l.batch_size for l in ensemble.locals], dtype=np.int64)
        starts = np.concatenate(([0], np.cumsum(sizes)))[:-1]
        lam = ensemble.locals[0].lam
    sigma = 0.0 if exact else oracle.sigma

    def noise_rows(k0, c):
        if sigma > 0.0:
            return streams.normal_rows(k0 + 1, k0 + c + 1, p) * (sigma / np.sqrt(p))
        return np.zeros((c, n, p))

    X, Y, G = state.X, state.Y, state.G_prev
    for k0, A_stack, B_stack in _weight_chunks(schedule, K):
        c = A_stack.shape[0]
        if ensemble.is_quadratic:
            code, X, Y, G = kern["track_quadratic_chunk"](
                X, Y, G, A_stack, B_stack, Q, qlin, noise_rows(k0, c), config.alpha,
                k0, stride, rec_X, rec_Y, rec_G)
        elif gaussian_like:
            code, X, Y, G = kern["track_logistic_exact_chunk"](
                X, Y, G, A_stack, B_stack, feats, labels, starts, sizes, lam,
                noise_rows(k0, c), config.alpha, k0, stride, rec_X, rec_Y, rec_G)
        else:
            idx = streams.index_rows(k0 + 1, k0 + c + 1, sizes, oracle.batch_size)
            idx = np.ascontiguousarray(idx + starts[None, :, None])
            code, X, Y, G = kern["track_logistic_chunk"](
                X, Y, G, A_stack, B_stack, feats, labels, idx, lam,
                config.alpha, k0, stride, rec_X, rec_Y, rec_G)
        if code >= 0:
            raise DivergenceError(int(code))

    batch_total = _epoch_units(ensemble)
    if ensemble.is_quadratic:
        evals = n  # one oracle call per agent per iteration
    elif exact or oracle.kind == "gaussian":
        evals = batch_total
    else:
        evals = n * oracle.batch_size
    ks = np.arange(records, dtype=np.int64) * stride
    trace = Trace(
        algorithm="abpp" if exact else "sabtv", alpha=config.alpha, seed=config.seed,
        ks=ks, epochs=ks * (evals / batch_total), X=rec_X, Y=rec_Y, G=rec_G,
        evals_per_iteration=evals, batch_total=batch_total,
        wall_seconds=time.perf_counter() - t0)
    _check_sum_tracking(trace)
    return trace


def cgd_step(x: np.ndarray, alpha: float, ensemble: AgentEnsemble) -> np.ndarray:
    """One centralized full-batch descent step on the average cost."""
    from .objective import global_gradient

    return x - alpha * global_gradient(ensemble, x)


def csgd_step(x: np.ndarray, alpha: float, ensemble: AgentEnsemble,
              rng: np.random.Generator) -> np.ndarray:
    """One centralized stochastic step: single pooled sample or noisy gradient."""
    from .objective import global_gradient

    p = ensemble.dim
    if ensemble.is_quadratic:
        g = global_gradient(ensemble, x)
        if ensemble.oracle.sigma > 0.0:
            g = g + rng.standard_normal(p) * (ensemble.oracle.sigma / np.sqrt(p))
        return x - alpha * g
    feats = np.vstack([l.features for l in ensemble.locals])
    labels = np.concatenate([l.labels for l in ensemble.locals])
    row = int(rng.integers(0, feats.shape[0]))
    from scipy.special import expit

    b = feats[row]
    coef = -labels[row] * expit(-labels[row] * (x[1:] @ b + x[0]))
    g = np.empty(p)
    g[0] = coef
    g[1:] = coef * b
    return x - alpha * (g + ensemble.locals[0].lam * x)


def _run_centralized(ensemble, config, x0, backend, stochastic) -> Trace:
    kern = _kernels.get_kernels(backend)
    p = ensemble.dim
    K, stride = config.iterations, config.stride
    streams = OracleStreams(config.seed, 1)
    t0 = time.perf_counter()
    if x0 is None:
        x = np.zeros(p)
    else:
        x = np.asarray(x0, dtype=float).reshape(p).copy()

    records = K // stride + 1
    rec_x = np.empty((records, p))
    rec_x[0] = x

    if ensemble.is_quadratic:
        Qavg = sum(l.Q for l in ensemble.locals) / ensemble.n
        qavg = sum(l.q for l in ensemble.locals) / ensemble.n
        sigma = ensemble.oracle.sigma if stochastic else 0.0
    else:
        feats = np.vstack([l.features for l in ensemble.locals])
        labels = np.concatenate([l.labels for l in ensemble.locals])
        wts = np.concatenate([
            np.full(l.batch_size, 1.0 / (ensemble.n * l.batch_size)) for l in ensemble.locals
        ])
        lam = ensemble.locals[0].lam
        total = feats.shape[0]

    for k0 in range(0, K, BLOCK):
        c = min(BLOCK, K - k0)
        if ensemble.is_quadratic:
            noise = np.zeros((c, p))
            if stochastic and sigma > 0.0:
                noise = streams.normal_rows(k0, k0 + c, p)[:, 0, :] * (sigma / np.sqrt(p))
            code, x = kern["central_quadratic_chunk"](
                x, Qavg, qavg, noise, config.alpha, k0, stride, rec_x)
        elif stochastic:
            idx = np.ascontiguousarray(
                streams.index_rows(k0, k0 + c, [total], 1)[:, 0, 0])
            code, x = kern["central_logistic_sample_chunk"](
                x, feats, labels, idx, lam, config.alpha, k0, stride, rec_x)
        else:
            code, x = kern["central_logistic_exact_chunk"](
                x, feats, labels, wts, lam, config.alpha, c, k0, stride, rec_x)
        if code >= 0:
            raise DivergenceError(int(code))

    batch_total = _epoch_units(ensemble)
    evals = 1 if stochastic else batch_total
    ks = np.arange(records, dtype=np.int64) * stride
    return Trace(
        algorithm="csgd" if stochastic else "cgd", alpha=config.alpha, seed=config.seed,
        ks=ks, epochs=ks * (evals / batch_total), X=rec_x[:, None, :], Y=None, G=None,
        evals_per_iteration=evals, batch_total=batch_total,
        wall_seconds=time.perf_counter() - t0)
