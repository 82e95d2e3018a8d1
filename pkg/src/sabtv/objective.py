"""Local cost functions, the global average cost, and stochastic gradient oracles.

Two families are supported: strongly convex quadratics (closed-form optimum,
used for convergence studies) and L2-regularized logistic regression over
per-agent sample batches (the binary classification task).  For logistic
costs the decision vector is x = [x0, x1:] with x0 the intercept; the
intercept is included in the L2 penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

ORACLE_KINDS = ("gaussian", "minibatch")


@dataclass(frozen=True)
class QuadraticLocal:
    """f_i(x) = 0.5 x'Qx + q'x with Q symmetric positive definite."""

    Q: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or q.shape != (Q.shape[0],):
            raise ValueError(f"inconsistent quadratic shapes Q{Q.shape}, q{q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12, rtol=0.0):
            raise ValueError("Q must be symmetric within 1e-12")
        if np.linalg.eigvalsh(Q)[0] <= 0.0:
            raise ValueError("Q must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x)


@dataclass(frozen=True)
class LogisticLocal:
    """Average regularized logistic loss over a local batch.

    features has shape (m, d) and labels (m,) with entries +1/-1; the
    decision dimension is d + 1 (intercept first).  lam > 0 is the L2
    coefficient, applied to the full vector including the intercept.
    """

    features: np.ndarray
    labels: np.ndarray
    lam: float

    def __post_init__(self):
        F = np.ascontiguousarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if F.ndim != 2 or y.shape != (F.shape[0],):
            raise ValueError(f"inconsistent logistic shapes features{F.shape}, labels{y.shape}")
        if F.shape[0] < 1:
            raise ValueError("local batch must contain at least one sample")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be +1 or -1")
        if not self.lam > 0.0:
            raise ValueError("lam must be positive (strong convexity needs it)")
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "labels", y)

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1] + 1

    def value(self, x: np.ndarray) -> float:
        z = self.features @ x[1:] + x[0]
        # log(1 + exp(-y z)) computed stably
        m = -self.labels * z
        loss = np.where(m > 0, m + np.log1p(np.exp(-m)), np.log1p(np.exp(m)))
        return float(loss.mean() + 0.5 * self.lam * (x @ x))

    def sample_gradient(self, x: np.ndarray, idx) -> np.ndarray:
        """Mean gradient over sample indices idx, including the L2 term."""
        idx = np.atleast_1d(idx)
        F = self.features[idx]
        y = self.labels[idx]
        coef = -y * expit(-y * (F @ x[1:] + x[0]))
        g = np.empty_like(x)
        g[0] = coef.mean()
        g[1:] = F.T @ coef / len(idx)
        return g + self.lam * x


@dataclass(frozen=True)
class OracleConfig:
    """Stochastic first-order oracle settings.

    ``gaussian`` adds zero-mean Gaussian noise with total variance sigma**2
    (per-coordinate variance sigma**2 / p, so the variance bound is met with
    equality).  ``minibatch`` averages the gradients of ``batch_size``
    uniformly sampled (with replacement) local data points.
    """

    kind: str = "gaussian"
    sigma: float = 0.0
    batch_size: int = 1

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"oracle kind must be one of {ORACLE_KINDS}, got {self.kind!r}")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class AgentEnsemble:
    """n local objectives of one family plus the oracle configuration."""

    locals: tuple
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def __post_init__(self):
        locs = tuple(self.locals)
        if not locs:
            raise ValueError("ensemble needs at least one local objective")
        kinds = {type(l) for l in locs}
        if len(kinds) != 1:
            raise ValueError("all locals must share one objective family")
        dims = {l.dim for l in locs}
        if len(dims) != 1:
            raise ValueError("all locals must share one dimension")
        if isinstance(locs[0], LogisticLocal) and self.oracle.kind == "gaussian" and self.oracle.sigma > 0:
            # supported, but minibatch is the natural noise model here
            pass
        if isinstance(locs[0], QuadraticLocal) and self.oracle.kind == "minibatch":
            raise ValueError("minibatch oracle needs sample batches; use the gaussian oracle for quadratics")
        object.__setattr__(self, "locals", locs)

    @property
    def n(self) -> int:
        return len(self.locals)

    @property
    def dim(self) -> int:
        return self.locals[0].dim

    @property
    def is_quadratic(self) -> bool:
        return isinstance(self.locals[0], QuadraticLocal)


def local_gradient(local, x: np.ndarray) -> np.ndarray:
    """Exact gradient of one local cost."""
    x = np.asarray(x, dtype=float)
    if x.shape != (local.dim,):
        raise ValueError(f"dimension mismatch: expected {(local.dim,)}, got {x.shape}")
    if isinstance(local, QuadraticLocal):
        return local.Q @ x + local.q
    return local.sample_gradient(x, np.arange(local.batch_size))


def oracle_gradient(local, x: np.ndarray, rng: np.random.Generator, oracle: OracleConfig) -> np.ndarray:
    """One stochastic oracle draw at x; unbiased for local_gradient(local, x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (local.dim,):
        raise ValueError(f"dimension mismatch: expected {(local.dim,)}, got {x.shape}")
    if oracle.kind == "gaussian":
        g = local_gradient(local, x)
        if oracle.sigma > 0.0:
            g = g + rng.standard_normal(local.dim) * (oracle.sigma / np.sqrt(local.dim))
        return g
    if not isinstance(local, LogisticLocal):
        raise ValueError("minibatch oracle requires a sample-based objective")
    idx = rng.integers(0, local.batch_size, size=oracle.batch_size)
    return local.sample_gradient(x, idx)


def global_gradient(ensemble: AgentEnsemble, x: np.ndarray) -> np.ndarray:
    """Gradient of the average cost f = (1/n) sum_i f_i."""
    g = local_gradient(ensemble.locals[0], x).copy()
    for local in ensemble.locals[1:]:
        g += local_gradient(local, x)
    return g / ensemble.n


def global_value(ensemble: AgentEnsemble, x: np.ndarray) -> float:
    return sum(l.value(x) for l in ensemble.locals) / ensemble.n


def analytic_optimum(ensemble: AgentEnsemble) -> np.ndarray:
    """Closed-form minimizer of a quadratic ensemble."""
    if not ensemble.is_quadratic:
        raise ValueError("analytic optimum exists only for quadratic ensembles")
    Qsum = sum(l.Q for l in ensemble.locals)
    qsum = sum(l.q for l in ensemble.locals)
    x_star = np.linalg.solve(Qsum, -qsum)
    resid = float(np.linalg.norm(global_gradient(ensemble, x_star)))
    if resid > 1e-10:
        raise RuntimeError(f"optimum residual {resid} exceeds 1e-10; ill-conditioned ensemble")
    return x_star


def smoothness_and_convexity(ensemble: AgentEnsemble) -> tuple:
    """(L, mu): max per-local gradient Lipschitz constant and strong convexity of the average.

    Quadratics: L = max_i lambda_max(Q_i), mu = lambda_min of the average Q.
    Logistic: L = max_i [lam + (1/(4 m_i)) sum_j ||(1, b_ij)||^2] (the logistic
    curvature never exceeds 1/4), mu = lam.
    """
    if ensemble.is_quadratic:
        L = max(float(np.linalg.eigvalsh(l.Q)[-1]) for l in ensemble.locals)
        Qavg = sum(l.Q for l in ensemble.locals) / ensemble.n
        mu = float(np.linalg.eigvalsh(Qavg)[0])
        return L, mu
    L = 0.0
    for l in ensemble.locals:
        sq = 1.0 + (l.features ** 2).sum(axis=1)
        L = max(L, l.lam + float(sq.mean()) / 4.0)
    return L, ensemble.locals[0].lam


def random_quadratic_ensemble(n: int, p: int, condition_number: float = 10.0,
                              seed: int = 0, sigma: float = 0.0) -> AgentEnsemble:
    """Random SPD quadratic ensemble with heterogeneous linear terms.

    Per-agent eigenvalues span [1, condition_number] under a random rotation,
    so L = condition_number and mu >= 1 (the average of SPD matrices has
    lambda_min at least the mean of the locals' minima).
    """
    if condition_number < 1.0:
        raise ValueError("condition_number must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xE25,)))
    locs = []
    for _ in range(n):
        if p == 1:
            R = np.ones((1, 1))
        else:
            R, _ = np.linalg.qr(rng.standard_normal((p, p)))
        lams = np.linspace(1.0, condition_number, p)
        Q = (R * lams) @ R.T
        Q = 0.5 * (Q + Q.T)
        q = rng.standard_normal(p)
        locs.append(QuadraticLocal(Q, q))
    return AgentEnsemble(tuple(locs), OracleConfig("gaussian", sigma=sigma))


def build_logistic_ensemble(batches, lam: float,
                            oracle: OracleConfig | None = None) -> AgentEnsemble:
    """Ensemble from per-agent (features, labels) batches."""
    locs = tuple(LogisticLocal(F, y, lam) for F, y in batches)
    if oracle is None:
        oracle = OracleConfig("minibatch", batch_size=1)
    return AgentEnsemble(locs, oracle)


def reference_optimum(ensemble: AgentEnsemble, grad_tol: float = 1e-10) -> np.ndarray:
    """High-precision minimizer of the average cost.

    Quadratics use the closed form; logistic ensembles run damped Newton on
    the average cost until the gradient norm is below grad_tol.
    """
    if ensemble.is_quadratic:
        return analytic_optimum(ensemble)
    # stack all samples once; the average cost is a weighted logistic loss
    feats = np.vstack([l.features for l in ensemble.locals])
    labels = np.concatenate([l.labels for l in ensemble.locals])
    wts = np.concatenate([
        np.full(l.batch_size, 1.0 / (ensemble.n * l.batch_size)) for l in ensemble.locals
    ])
    lam = ensemble.locals[0].lam
    p = ensemble.dim
    x = np.zeros(p)
    for _ in range(200):
        z = feats @ x[1:] + x[0]
        s = expit(-labels * z)
        coef = -labels * s * wts
        g = np.empty(p)
        g[0] = coef.sum()
        g[1:] = feats.T @ coef
        g += lam * x
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            return x
        # Hessian of the weighted loss plus lam * I
        h = s * (1.0 - s) * wts
        Fw = feats * h[:, None]
        H = np.empty((p, p))
        H[0, 0] = h.sum()
        H[0, 1:] = H[1:, 0] = Fw.sum(axis=0)
        H[1:, 1:] = feats.T @ Fw
        H[np.diag_indices(p)] += lam
        step = np.linalg.solve(H, g)
        # backtracking keeps early steps from overshooting on stiff problems
        t = 1.0
        f0 = global_value(ensemble, x)
        while t > 1e-8 and global_value(ensemble, x - t * step) > f0 - 0.25 * t * float(g @ step):
            t *= 0.5
        x = x - t * step
    raise RuntimeError(f"Newton failed to reach gradient norm {grad_tol} (last {gnorm})")
