"""Convergence-analysis machinery for the tracked push-pull iteration.

Two stochastic-vector sequences normalize the error metrics:

- pi: forward recursion ``pi_{k+1} = B_k pi_k`` from the uniform vector;
- phi: the absolute probability sequence satisfying ``phi_{k+1}' A_k = phi_k'``,
  approximated through backward products of the row-stochastic matrices
  (their row spread contracts geometrically and certifies the error).

Three error components are monitored: the optimality gap ||xhat_k - x*||^2
with xhat_k the phi-weighted average, the phi-weighted consensus error, and
the squared tracking deviation S^2(y, pi).  Their expected values obey a
linear recursion V_{k+1} <= M(alpha) V_k + b(alpha); this module builds
M and b from measured network constants, evaluates the closed-form step-size
bound, checks the positive-vector certificate that forces rho(M) < 1, and
solves for the steady-state error bound (I - M)^{-1} b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .graph import (GraphSchedule, diameter, generate, max_edge_utility,
                    receiver_adjacency_chunk)
from .weights import WeightMatrix, stochastic_stacks

_SCAN_CHUNK = 4096


class HorizonInsufficientError(RuntimeError):
    """Backward product failed to contract row spread below tolerance."""

    def __init__(self, spread: float, tolerance: float, horizon: int):
        super().__init__(
            f"row spread {spread:.3e} above tolerance {tolerance:.3e} after {horizon} factors")
        self.spread = spread
        self.tolerance = tolerance
        self.horizon = horizon


class AssumptionBreachError(ValueError):
    """A contraction factor left its valid range; inputs are inconsistent."""


class BoundUndefinedError(RuntimeError):
    """Steady-state bound requested at a spectral radius >= 1."""


def is_stochastic(v: np.ndarray, tol: float = 1e-10) -> bool:
    v = np.asarray(v)
    return bool(np.all(v >= 0.0) and abs(v.sum() - 1.0) <= tol)


def _entries(W) -> np.ndarray:
    return W.entries if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)


def pi_update(pi: np.ndarray, B) -> np.ndarray:
    """One forward step pi -> B pi; B must be column-stochastic."""
    Bm = _entries(B)
    if np.any(Bm < 0.0) or np.max(np.abs(Bm.sum(axis=0) - 1.0)) > 1e-12:
        raise ValueError("B is not column-stochastic")
    return Bm @ np.asarray(pi, dtype=float)


def phi_approx(A_sequence, tolerance: float = 1e-8):
    """Estimate the absolute probability vector at the start of a window.

    Forms the backward product of the given row-stochastic matrices (newest
    last) and returns (phi, spread) where spread is the maximum column
    max-min over rows of the product; spread <= tolerance certifies that the
    first row approximates the vector to that accuracy.
    """
    mats = [_entries(A) for A in A_sequence]
    if not mats:
        raise ValueError("need at least one matrix")
    P = mats[0].copy()
    for A in mats[1:]:
        P = A @ P
    spread = float(np.max(P.max(axis=0) - P.min(axis=0)))
    if spread > tolerance:
        raise HorizonInsufficientError(spread, tolerance, len(mats))
    phi = P[0] / P[0].sum()
    return phi, spread


def phi_consistency_residual(phi_k: np.ndarray, phi_k1: np.ndarray, A_k) -> float:
    """Max-norm residual of the defining relation phi_{k+1}' A_k = phi_k'."""
    return float(np.max(np.abs(np.asarray(phi_k1) @ _entries(A_k) - np.asarray(phi_k))))


def weighted_average(X: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """phi-weighted average of the stacked rows."""
    return np.asarray(phi) @ np.asarray(X)


def weighted_norm_sq(X: np.ndarray, center: np.ndarray, a_vec: np.ndarray) -> float:
    """sum_i a_i ||X[i] - center||^2 with strictly positive weights."""
    a = np.asarray(a_vec, dtype=float)
    if np.any(a <= 0.0):
        raise ValueError("weights must be strictly positive")
    D = np.asarray(X) - np.asarray(center)
    return float(a @ (D * D).sum(axis=1))


def tracking_deviation(Y: np.ndarray, pi: np.ndarray) -> float:
    """Pi-weighted distance between rescaled trackers and the tracker sum.

    Zero exactly when every row is proportional to its pi weight times the
    common sum.
    """
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0.0):
        raise ValueError("degenerate weights: tracker deviation needs strictly positive pi")
    Y = np.asarray(Y)
    s = Y.sum(axis=0)
    D = Y / pi[:, None] - s
    return float(np.sqrt(pi @ (D * D).sum(axis=1)))


# ---------------------------------------------------------------------------
# per-iteration and global network constants


@dataclass(frozen=True)
class ConstantsSlice:
    """Network constants attached to one iteration."""

    kappa_k: float
    kappa_k1: float
    varphi_k: float
    varphi_k1: float
    gamma_k: float
    psi_k: float
    tau_k: float
    c_k: float
    nu_k: float
    zeta_k: float
    eta_k: float
    diameter: int
    edge_utility: int


def constants_update(pi_k, pi_k1, phi_k, phi_k1, D_k: int, K_k: int, a: float,
                     b: float, L: float, n: int, c_bound: float,
                     tau_bound: float) -> ConstantsSlice:
    """Evaluate the per-iteration constants from the vector pair at (k, k+1).

    ``c_bound`` and ``tau_bound`` are the horizon-wide upper bounds entering
    nu_k and zeta_k.  Raises AssumptionBreachError when a contraction factor
    leaves [0, 1), which indicates inconsistent a/b/diameter/utility inputs.
    """
    pi_k, pi_k1 = np.asarray(pi_k, float), np.asarray(pi_k1, float)
    phi_k, phi_k1 = np.asarray(phi_k, float), np.asarray(phi_k1, float)
    if min(pi_k.min(), pi_k1.min(), phi_k.min(), phi_k1.min()) <= 0.0:
        raise ValueError("stochastic vectors must be strictly positive")
    kappa_k = float(np.sqrt(1.0 / pi_k.min()))
    kappa_k1 = float(np.sqrt(1.0 / pi_k1.min()))
    varphi_k = float(np.sqrt(1.0 / phi_k.min()))
    varphi_k1 = float(np.sqrt(1.0 / phi_k1.min()))
    gamma_k = float(np.sqrt(np.max(phi_k1 * pi_k)))
    psi_k = n * (kappa_k1 ** 2 - 1.0)
    dk = float(D_k * K_k)
    tau_sq = 1.0 - (pi_k.min() ** 2 * b ** 2) / (pi_k.max() ** 2 * pi_k1.max() * dk)
    c_sq = 1.0 - (phi_k1.min() * a ** 2) / (phi_k.max() ** 2 * dk)
    if not (0.0 <= tau_sq < 1.0):
        raise AssumptionBreachError(f"tau_k^2 = {tau_sq} outside [0, 1); check b, D, K")
    if not (0.0 <= c_sq < 1.0):
        raise AssumptionBreachError(f"c_k^2 = {c_sq} outside [0, 1); check a, D, K")
    tau_k, c_k = float(np.sqrt(tau_sq)), float(np.sqrt(c_sq))
    nu_k = 4.0 * L ** 2 * kappa_k1 ** 2 * tau_bound ** 2 / (1.0 - tau_bound ** 2) \
        + 2.0 * psi_k * L ** 2
    zeta_k = (c_bound * varphi_k1 + varphi_k) ** 2 * nu_k
    eta_k = float(phi_k1 @ pi_k)
    return ConstantsSlice(kappa_k, kappa_k1, varphi_k, varphi_k1, gamma_k, psi_k,
                          tau_k, c_k, nu_k, zeta_k, eta_k, D_k, K_k)


@dataclass(frozen=True)
class GlobalConstants:
    """Horizon-wide bounds feeding the composite system and step-size rule."""

    n: int
    L: float
    mu: float
    sigma: float
    eta: float      # lower bound on phi_{k+1}' pi_k
    kappa: float    # upper bound on kappa_k
    varphi: float   # upper bound on varphi_k
    tau: float      # upper bound on tau_k
    c: float        # upper bound on c_k
    psi: float      # upper bound on psi_k
    a: float = float("nan")
    b: float = float("nan")

    def __post_init__(self):
        if not (self.L >= self.mu > 0.0):
            raise ValueError("need L >= mu > 0")
        if not (0.0 <= self.tau < 1.0 and 0.0 <= self.c < 1.0):
            raise ValueError("tau and c must lie in [0, 1)")
        if self.kappa < 1.0 or self.varphi < 1.0 or self.psi < 0.0:
            raise ValueError("kappa, varphi must be >= 1 and psi >= 0")
        if not (0.0 < self.eta <= 1.0):
            raise ValueError("eta must lie in (0, 1] for stochastic vectors")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")

    @property
    def nu(self) -> float:
        t2 = self.tau ** 2
        return 4.0 * self.L ** 2 * self.kappa ** 2 * t2 / (1.0 - t2) \
            + 2.0 * self.psi * self.L ** 2

    @property
    def zeta(self) -> float:
        return 4.0 * self.varphi ** 2 * self.nu


@dataclass(frozen=True)
class CompositeSystem:
    """The 3x3 error recursion V_{k+1} <= M V_k + b at a fixed step-size."""

    M: np.ndarray
    b_vec: np.ndarray
    alpha: float
    m: tuple  # m1..m8
    b: tuple  # b1..b5
    constants: GlobalConstants


def build_composite(gc: GlobalConstants, alpha: float) -> CompositeSystem:
    """Assemble M(alpha) and b(alpha) from the horizon-wide constants.

    The transient coefficients follow the per-component contraction bounds;
    the noise vector is quadratic in alpha except for the tracking floor,
    and every noise entry scales with sigma^2.
    """
    if not alpha > 0.0:
        raise ValueError("alpha must be positive")
    n, L, mu, sig2 = gc.n, gc.L, gc.mu, gc.sigma ** 2
    c2, t2 = gc.c ** 2, gc.tau ** 2
    nu, zeta = gc.nu, gc.zeta
    m1 = n * mu / 2.0
    m2 = 3.0 * L ** 2 * gc.varphi ** 2 / mu
    m3 = 3.0 / (n * mu * gc.eta)
    m4 = 2.0 * n * L ** 2 * gc.varphi ** 2 * (1.0 + c2) / (1.0 - c2)
    m5 = (1.0 + c2) / (1.0 - c2)
    m6 = 2.0 * n * L ** 2 * gc.varphi ** 2 * nu
    m7 = zeta
    m8 = nu
    b1 = 1.5 * n * sig2
    b2 = 2.0 * (1.0 + c2) * sig2 / (1.0 - c2)
    b3 = 4.0 * n * gc.psi * sig2
    b4 = 2.0 * L * n * gc.psi * sig2
    b5 = 2.0 * nu * sig2
    a = alpha
    M = np.array([
        [1.0 - m1 * a, m2 * a, m3 * a],
        [m4 * a * a, (1.0 + c2) / 2.0 + m4 * a * a, m5 * a * a],
        [m6 * a * a, m7 + m6 * a * a, (1.0 + t2) / 2.0 + m8 * a * a],
    ])
    b_vec = np.array([b1 * a * a, b2 * a * a, b3 + b4 * a + b5 * a * a])
    return CompositeSystem(M, b_vec, alpha, (m1, m2, m3, m4, m5, m6, m7, m8),
                           (b1, b2, b3, b4, b5), gc)


def spectral_radius(M: np.ndarray, tol: float = 1e-10, max_iter: int = 200_000) -> float:
    """Dominant eigenvalue modulus of a nonnegative matrix by power iteration.

    Nonnegativity guarantees a real dominant (Perron) eigenvalue reachable
    from a positive start vector.
    """
    M = np.asarray(M, dtype=float)
    if np.any(M < 0.0):
        raise ValueError("spectral radius routine expects a nonnegative matrix")
    v = np.full(M.shape[0], 1.0 / np.sqrt(M.shape[0]))
    lam = 0.0
    for _ in range(max_iter):
        w = M @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / nw
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            # one Rayleigh polish on the settled direction
            return float(v @ (M @ v)) / float(v @ v)
        lam = lam_new
    raise RuntimeError(f"power iteration did not converge within {max_iter} iterations")


def char_poly_radius(M: np.ndarray) -> float:
    """Cross-check: spectral radius from the roots of the cubic characteristic polynomial."""
    M = np.asarray(M, dtype=float)
    tr = np.trace(M)
    minors = (
        M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        + M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
        + M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1]
    )
    det = np.linalg.det(M)
    roots = np.roots([1.0, -tr, minors, -det])
    return float(np.max(np.abs(roots)))


def step_size_bound(gc: GlobalConstants) -> float:
    """Closed-form admissible step-size: the smallest of three expressions."""
    n, L, mu = gc.n, gc.L, gc.mu
    eta, kap, vph = gc.eta, gc.kappa, gc.varphi
    one_c2, one_t2 = 1.0 - gc.c ** 2, 1.0 - gc.tau ** 2
    t1 = 2.0 / (n * eta * (L + mu))
    t2 = mu * eta * one_c2 * one_t2 / (
        4.0 * L * vph * np.sqrt((n * mu ** 2 * eta ** 2 + 24.0 * L ** 2 * vph ** 2)
                                * (eta + 16.0 * kap ** 2)))
    t3 = mu * eta * one_t2 / (
        kap * L * np.sqrt(2.0 * n * mu ** 2 * eta ** 2 * (n + 4.0)
                          + 6.0 * L ** 2 * vph ** 2 * (n * eta + 32.0)))
    return float(min(t1, t2, t3))


@dataclass(frozen=True)
class CertificateReport:
    """Margins of the positive-vector inequalities M delta < delta."""

    delta: np.ndarray
    margins: dict
    passed: bool
    sufficient: bool

    def lines(self):
        yield f"delta = ({self.delta[0]!r}, {self.delta[1]!r}, {self.delta[2]!r})"
        for name, margin in self.margins.items():
            yield f"{name}: margin = {margin!r} ({'ok' if margin > 0 else 'VIOLATED'})"
        yield f"certificate: {'pass' if self.passed else 'fail'}"
        yield f"sufficient_conditions: {'pass' if self.sufficient else 'fail'}"


def delta_certificate(system: CompositeSystem) -> CertificateReport:
    """Evaluate the certificate vector and its strict inequalities.

    delta is the closed-form positive vector whose strict dominance
    M(alpha) delta < delta forces rho(M) < 1; the report carries the margin
    of each inequality plus the two sufficient step-size conditions.
    """
    m1, m2, m3, m4, m5, m6, m7, m8 = system.m
    if not m7 > 0.0:
        raise RuntimeError("zeta must be positive; degenerate constants")
    one_t2 = 1.0 - system.constants.tau ** 2
    one_c2 = 1.0 - system.constants.c ** 2
    a2 = system.alpha ** 2
    d1 = (2.0 / m1) * (m2 + 4.0 * m3 * m7 / one_t2)
    d2 = 1.0
    d3 = 4.0 * m7 / one_t2
    margins = {}
    margins["row1"] = m1 * d1 - (m2 * d2 + m3 * d3)
    margins["row2"] = one_c2 / 2.0 * d2 - (m4 * d1 + m4 * d2 + m5 * d3) * a2
    margins["row3"] = (one_t2 / 2.0 * d3 - m7 * d2) - (m6 * d1 + m6 * d2 + m8 * d3) * a2
    coeff14 = m4 + (2.0 * m4 / m1) * (m2 + 4.0 * m3 * m7 / one_t2) + 4.0 * m5 * m7 / one_t2
    coeff15 = m6 / m7 + (2.0 * m6 / (m1 * m7)) * (m2 + 4.0 * m3 * m7 / one_t2) \
        + 4.0 * m8 / one_t2
    margins["sufficient_consensus"] = one_c2 / 2.0 - coeff14 * a2
    margins["sufficient_tracking"] = 1.0 - coeff15 * a2
    passed = all(margins[k] > 0.0 for k in ("row1", "row2", "row3"))
    sufficient = margins["sufficient_consensus"] > 0.0 and margins["sufficient_tracking"] > 0.0
    return CertificateReport(np.array([d1, d2, d3]), margins, passed, sufficient)


def max_certified_alpha(gc: GlobalConstants) -> float:
    """Largest step-size at which the certificate inequalities still hold.

    Direct inversion of the certificate rows at the closed-form delta, also
    capped so the (1,1) entry stays nonnegative and the optimality-gap
    contraction argument applies.
    """
    probe = build_composite(gc, 1.0)
    m1, m2, m3, m4, m5, m6, m7, m8 = probe.m
    one_t2 = 1.0 - gc.tau ** 2
    one_c2 = 1.0 - gc.c ** 2
    d1 = (2.0 / m1) * (m2 + 4.0 * m3 * m7 / one_t2)
    d2 = 1.0
    d3 = 4.0 * m7 / one_t2
    a12 = np.sqrt((one_c2 / 2.0 * d2) / (m4 * (d1 + d2) + m5 * d3))
    a13 = np.sqrt((one_t2 / 2.0 * d3 - m7 * d2) / (m6 * (d1 + d2) + m8 * d3))
    t1 = 2.0 / (gc.n * gc.eta * (gc.L + gc.mu))
    return float(min(a12, a13, 1.0 / m1, t1))


def steady_state_bound(system: CompositeSystem) -> np.ndarray:
    """Componentwise limit bound (I - M)^{-1} b; needs rho(M) < 1."""
    rho = spectral_radius(system.M)
    if rho >= 1.0:
        raise BoundUndefinedError(f"spectral radius {rho} >= 1; no steady-state bound")
    return np.linalg.solve(np.eye(3) - system.M, system.b_vec)


# ---------------------------------------------------------------------------
# sequences over a schedule


@dataclass
class ScheduleScan:
    """Measured vector sequences and constants over a schedule horizon."""

    horizon: int
    a: float
    b: float
    constants: dict          # eta, kappa, varphi, psi, tau, c (measured bounds)
    slice_ks: np.ndarray     # iterations with full per-k slices
    slices: list             # ConstantsSlice per slice_ks entry
    phi_spread: float
    truncated: bool

    def global_constants(self, L: float, mu: float, sigma: float) -> GlobalConstants:
        c = self.constants
        return GlobalConstants(n=c["n"], L=L, mu=mu, sigma=sigma, eta=c["eta"],
                               kappa=c["kappa"], varphi=c["varphi"], tau=c["tau"],
                               c=c["c"], psi=c["psi"], a=self.a, b=self.b)


def _phi_anchor(schedule: GraphSchedule, k_anchor: int, tolerance: float,
                backend: str | None = None):
    """Certified phi estimate at k_anchor via backward products above it.

    Maintains P = A_{top-1} ... A_{k_anchor} and doubles the horizon until
    the row spread of P certifies the requested accuracy.
    """
    kern = _kernels.get_kernels(backend)
    n = schedule.n
    P = np.eye(n)
    top = k_anchor
    horizon = max(64, 4 * n)
    cap = 1 << 22
    while True:
        target = k_anchor + horizon
        while top < target:
            c = min(_SCAN_CHUNK, target - top)
            adj = receiver_adjacency_chunk(schedule, top, c)
            A, _ = stochastic_stacks(adj)
            Pc = kern["product_down"](A, np.eye(n))  # A_{top+c-1} ... A_{top}
            P = Pc @ P
            top += c
        spread = float(np.max(P.max(axis=0) - P.min(axis=0)))
        if spread <= tolerance:
            phi = P[0] / P[0].sum()
            return phi, spread, horizon
        if 2 * horizon > cap:
            raise HorizonInsufficientError(spread, tolerance, horizon)
        horizon *= 2


def vectors_at(schedule: GraphSchedule, ks, tolerance: float = 1e-8,
               backend: str | None = None):
    """(phi, pi) arrays at the requested iterations.

    pi runs forward from uniform; phi is anchored above the largest request
    with a spread-certified backward product, then recursed downward exactly.
    """
    kern = _kernels.get_kernels(backend)
    ks = np.asarray(sorted(set(int(k) for k in ks)), dtype=np.int64)
    if ks.size == 0 or ks[0] < 0:
        raise ValueError("need nonnegative iterations")
    n = schedule.n
    k_max = int(ks[-1])
    phi_out = np.empty((ks.size, n))
    pi_out = np.empty((ks.size, n))

    if schedule.effectively_static:
        adj = receiver_adjacency_chunk(schedule, 0, 1)
        _, B = stochastic_stacks(adj)
        phi, _, _ = _phi_anchor(schedule, 0, tolerance, backend)
        pi = np.full(n, 1.0 / n)
        k = 0
        fixed = False
        for pos, kq in enumerate(ks):
            while k < kq and not fixed:
                nxt = B[0] @ pi
                fixed = np.array_equal(nxt, pi)
                pi = nxt
                k += 1
            k = int(kq)  # once at the float fixed point nothing changes
            phi_out[pos] = phi
            pi_out[pos] = pi
        return phi_out, pi_out

    phi_top, _, _ = _phi_anchor(schedule, k_max, tolerance, backend)
    # walk pi forward and phi backward chunkwise; store pi checkpoints first
    pi = np.full(n, 1.0 / n)
    pi_chunks = {}
    for k0 in range(0, k_max + 1, _SCAN_CHUNK):
        c = min(_SCAN_CHUNK, k_max - k0)
        pi_chunks[k0] = pi
        if c == 0:
            break
        adj = receiver_adjacency_chunk(schedule, k0, c)
        _, B = stochastic_stacks(adj)
        pi = kern["pi_path"](B, pi)[-1]
    phi = phi_top
    for k0 in sorted(pi_chunks, reverse=True):
        c = min(_SCAN_CHUNK, k_max - k0)
        in_range = (ks >= k0) & (ks <= k0 + c)
        if c > 0:
            adj = receiver_adjacency_chunk(schedule, k0, c)
            A, B = stochastic_stacks(adj)
            phis = kern["phi_path_down"](A, phi)
            pis = kern["pi_path"](B, pi_chunks[k0])
            phi = phis[0]
        else:
            phis = phi[None, :]
            pis = pi_chunks[k0][None, :]
        if np.any(in_range):
            sel = ks[in_range] - k0
            phi_out[in_range] = phis[sel]
            pi_out[in_range] = pis[sel]
    return phi_out, pi_out


def theory_scan(schedule: GraphSchedule, horizon: int, tolerance: float = 1e-8,
                structural_window: int = 20_000, scan_window: int = 200_000,
                backend: str | None = None) -> ScheduleScan:
    """Measure the network constants over [0, horizon].

    The contraction factors need each graph's diameter and edge utility;
    beyond ``structural_window`` distinct graphs the largest observed product
    is reused.  Time-varying horizons beyond ``scan_window`` are truncated
    (flagged in the result); effectively static schedules are scanned exactly
    via their transient.
    """
    kern = _kernels.get_kernels(backend)
    n = schedule.n

    if horizon < 1:
        raise ValueError("horizon must be >= 1")

    if schedule.effectively_static:
        g = generate(schedule, 0)
        adj = receiver_adjacency_chunk(schedule, 0, 1)
        A, B = stochastic_stacks(adj)
        a_min, b_min = _min_pos(A[0]), _min_pos(B[0])
        D_g, K_g = diameter(g), max_edge_utility(g)
        phi, spread, _ = _phi_anchor(schedule, 0, tolerance, backend)
        # pi transient: run to its fixed point (or the horizon, if shorter)
        pis = [np.full(n, 1.0 / n)]
        for _ in range(min(horizon, 1 << 20)):
            nxt = B[0] @ pis[-1]
            done = np.array_equal(nxt, pis[-1])
            pis.append(nxt)
            if done:
                break
        pis = np.asarray(pis)
        slices = [
            constants_update(pis[t], pis[min(t + 1, len(pis) - 1)], phi, phi,
                             D_g, K_g, a_min, b_min, 1.0, n, 0.0, 0.0)
            for t in range(len(pis))
        ]
        return _finish_scan(schedule, horizon, a_min, b_min, slices, spread,
                            truncated=False, slice_ks=np.arange(len(pis)))

    truncated = horizon > scan_window
    span = min(horizon, scan_window)
    phi_top, spread, _ = _phi_anchor(schedule, span, tolerance, backend)

    pi_all = np.empty((span + 1, n))
    pi_all[0] = np.full(n, 1.0 / n)
    a_min, b_min = np.inf, np.inf
    starts = list(range(0, span, _SCAN_CHUNK))
    for k0 in starts:
        c = min(_SCAN_CHUNK, span - k0)
        adj = receiver_adjacency_chunk(schedule, k0, c)
        A, B = stochastic_stacks(adj)
        a_min = min(a_min, _min_pos_stack(A))
        b_min = min(b_min, _min_pos_stack(B))
        pi_all[k0:k0 + c + 1] = kern["pi_path"](B, pi_all[k0].copy())
    phi_all = np.empty((span + 1, n))
    phi_all[span] = phi_top
    for k0 in reversed(starts):
        c = min(_SCAN_CHUNK, span - k0)
        adj = receiver_adjacency_chunk(schedule, k0, c)
        A, _ = stochastic_stacks(adj)
        phi_all[k0:k0 + c + 1] = kern["phi_path_down"](A, phi_all[k0 + c].copy())

    d_window = min(span, structural_window)
    DK = np.empty((d_window, 2), dtype=np.int64)
    for k in range(d_window):
        g = generate(schedule, k)
        DK[k, 0] = diameter(g)
        DK[k, 1] = max_edge_utility(g)
    dk_max = int((DK[:, 0] * DK[:, 1]).max())

    slices = []
    slice_ks = np.arange(span)
    for k in range(span):
        if k < d_window:
            D_g, K_g = int(DK[k, 0]), int(DK[k, 1])
        else:
            D_g, K_g = dk_max, 1
        slices.append(constants_update(pi_all[k], pi_all[k + 1], phi_all[k],
                                       phi_all[k + 1], D_g, K_g, a_min, b_min,
                                       1.0, n, 0.0, 0.0))
    return _finish_scan(schedule, horizon, a_min, b_min, slices, spread,
                        truncated, slice_ks)


def _min_pos(W: np.ndarray) -> float:
    pos = W[W > 0.0]
    return float(pos.min())


def _min_pos_stack(stack: np.ndarray) -> float:
    pos = stack[stack > 0.0]
    return float(pos.min())


def _finish_scan(schedule, horizon, a_min, b_min, slices, spread, truncated,
                 slice_ks) -> ScheduleScan:
    tau = max(s.tau_k for s in slices)
    c = max(s.c_k for s in slices)
    kappa = max(max(s.kappa_k for s in slices), max(s.kappa_k1 for s in slices))
    varphi = max(max(s.varphi_k for s in slices), max(s.varphi_k1 for s in slices))
    eta = min(s.eta_k for s in slices)
    psi = schedule.n * (kappa ** 2 - 1.0)
    # re-evaluate nu/zeta slices now that the horizon bounds are known
    full = [
        ConstantsSlice(
            s.kappa_k, s.kappa_k1, s.varphi_k, s.varphi_k1, s.gamma_k, s.psi_k,
            s.tau_k, s.c_k,
            nu_k=np.nan, zeta_k=np.nan, eta_k=s.eta_k,
            diameter=s.diameter, edge_utility=s.edge_utility)
        for s in slices
    ]
    constants = {"n": schedule.n, "eta": eta, "kappa": kappa, "varphi": varphi,
                 "psi": psi, "tau": tau, "c": c}
    return ScheduleScan(horizon=horizon, a=a_min, b=b_min, constants=constants,
                        slice_ks=np.asarray(slice_ks), slices=full,
                        phi_spread=spread, truncated=truncated)


def rebuild_slices(scan: ScheduleScan, L: float) -> list:
    """Per-iteration slices with nu_k and zeta_k at the measured tau/c bounds."""
    tau, c = scan.constants["tau"], scan.constants["c"]
    out = []
    for s in scan.slices:
        nu_k = 4.0 * L ** 2 * s.kappa_k1 ** 2 * tau ** 2 / (1.0 - tau ** 2) \
            + 2.0 * s.psi_k * L ** 2
        zeta_k = (c * s.varphi_k1 + s.varphi_k) ** 2 * nu_k
        out.append(ConstantsSlice(s.kappa_k, s.kappa_k1, s.varphi_k, s.varphi_k1,
                                  s.gamma_k, s.psi_k, s.tau_k, s.c_k, nu_k,
                                  zeta_k, s.eta_k, s.diameter, s.edge_utility))
    return out


# ---------------------------------------------------------------------------
# error metrics on traces


@dataclass
class ErrorSeries:
    """Monte Carlo estimates of the three error components per recorded k."""

    ks: np.ndarray
    mean: np.ndarray       # (records, 3)
    se: np.ndarray         # (records, 3) standard error over seeds
    per_seed: np.ndarray   # (seeds, records, 3)


def error_vector(traces, x_star: np.ndarray, phi_at: np.ndarray,
                 pi_at: np.ndarray) -> ErrorSeries:
    """Three error components averaged over seed traces.

    phi_at / pi_at carry one vector per recorded iteration (shared across
    seeds, since the schedule does not depend on the oracle seed).
    """
    traces = list(traces)
    if not traces:
        raise ValueError("need at least one trace")
    ks = traces[0].ks
    for t in traces:
        if not np.array_equal(t.ks, ks):
            raise ValueError("traces disagree on recorded iterations")
    R = len(ks)
    S = len(traces)
    per_seed = np.zeros((S, R, 3))
    for s_i, tr in enumerate(traces):
        for r in range(R):
            phi, pi = phi_at[r], pi_at[r]
            xhat = weighted_average(tr.X[r], phi)
            per_seed[s_i, r, 0] = float(np.sum((xhat - x_star) ** 2))
            per_seed[s_i, r, 1] = weighted_norm_sq(tr.X[r], xhat, phi)
            if tr.Y is not None:
                per_seed[s_i, r, 2] = tracking_deviation(tr.Y[r], pi) ** 2
    mean = per_seed.mean(axis=0)
    if S > 1:
        se = per_seed.std(axis=0, ddof=1) / np.sqrt(S)
    else:
        se = np.zeros_like(mean)
    return ErrorSeries(ks=ks, mean=mean, se=se, per_seed=per_seed)


@dataclass
class SlackReport:
    """Componentwise slack of the composite recursion along a V series."""

    ks: np.ndarray          # iterations k for V_{k+1} rows
    slack: np.ndarray       # (len(ks), 3) mean slack
    se: np.ndarray
    pass_mask: np.ndarray
    fraction_passing: float

    def to_csv(self) -> str:
        lines = ["k,slack_gap,slack_consensus,slack_tracking,se_gap,se_consensus,se_tracking"]
        for i, k in enumerate(self.ks):
            vals = [repr(v) for v in (*self.slack[i], *self.se[i])]
            lines.append(f"{k}," + ",".join(vals))
        return "\n".join(lines)


def composite_relation_check(series: ErrorSeries, system: CompositeSystem,
                             z: float = 3.0) -> SlackReport:
    """Slack of V_{k+1} <= M V_k + b along consecutive recorded iterations.

    Requires a record stride of one.  A pair passes when the mean slack is
    above -z standard errors (minus a relative float guard for the exact,
    zero-noise case).
    """
    ks = series.ks
    if len(ks) < 2 or np.any(np.diff(ks) != 1):
        raise ValueError("composite relation check needs consecutive iterations (stride 1)")
    V = series.per_seed
    bound = V[:, :-1, :] @ system.M.T + system.b_vec
    slack_seed = bound - V[:, 1:, :]
    slack = slack_seed.mean(axis=0)
    S = V.shape[0]
    if S > 1:
        se = slack_seed.std(axis=0, ddof=1) / np.sqrt(S)
    else:
        se = np.zeros_like(slack)
    guard = 1e-12 * (np.abs(bound.mean(axis=0)) + np.abs(V.mean(axis=0)[1:]))
    pass_mask = slack >= -(z * se + guard)
    return SlackReport(ks=ks[:-1], slack=slack, se=se, pass_mask=pass_mask,
                       fraction_passing=float(pass_mask.mean()))
