"""Hot iteration kernels with a numba backend and a pure-numpy fallback.

Every kernel is written once, in numba-compatible numpy, at module level.
``get_kernels("numba")`` returns jit-compiled wrappers, ``get_kernels("numpy")``
the plain functions; the default backend is numba when importable, overridable
with the environment variable ``SABTV_BACKEND`` (``numba`` or ``numpy``).
Elementwise operations and BLAS-backed ``np.dot`` keep the two backends
numerically aligned.

Kernels advance a chunk of iterations and return ``(code, ...state)`` where
code >= 0 flags the first iteration at which a non-finite value appeared.
Recording arrays are written at slot k // stride whenever k % stride == 0.
"""

from __future__ import annotations

import os

import numpy as np

_KERNEL_NAMES = (
    "track_quadratic_chunk",
    "track_logistic_chunk",
    "track_logistic_exact_chunk",
    "central_quadratic_chunk",
    "central_logistic_exact_chunk",
    "central_logistic_sample_chunk",
    "pi_path",
    "phi_path_down",
    "product_down",
)


def track_quadratic_chunk(X, Y, G, A_stack, B_stack, Q, qlin, noise, alpha,
                          k_start, stride, rec_X, rec_Y, rec_G):
    """Gradient-tracking steps on a quadratic ensemble with additive noise."""
    steps = A_stack.shape[0]
    n = X.shape[0]
    for t in range(steps):
        Xn = np.dot(A_stack[t], X) - alpha * Y
        if not np.isfinite(Xn.sum()):
            return k_start + t + 1, X, Y, G
        Gn = np.empty_like(G)
        for i in range(n):
            Gn[i] = np.dot(Q[i], Xn[i]) + qlin[i] + noise[t, i]
        Yn = np.dot(B_stack[t], Y) + Gn - G
        X, Y, G = Xn, Yn, Gn
        k = k_start + t + 1
        if k % stride == 0:
            rec_X[k // stride] = X
            rec_Y[k // stride] = Y
            rec_G[k // stride] = G
    return -1, X, Y, G


def track_logistic_chunk(X, Y, G, A_stack, B_stack, feats, labels, idx, lam,
                         alpha, k_start, stride, rec_X, rec_Y, rec_G):
    """Gradient-tracking steps with per-agent sampled logistic gradients.

    idx has shape (steps, n, s) and holds global sample row indices.
    """
    steps = A_stack.shape[0]
    n = X.shape[0]
    s = idx.shape[2]
    for t in range(steps):
        Xn = np.dot(A_stack[t], X) - alpha * Y
        if not np.isfinite(Xn.sum()):
            return k_start + t + 1, X, Y, G
        Gn = np.empty_like(G)
        for i in range(n):
            x = Xn[i]
            acc = np.zeros(x.shape[0])
            for c in range(s):
                row = idx[t, i, c]
                b = feats[row]
                z = x[0] + np.dot(x[1:], b)
                m = -labels[row] * z
                if m >= 0.0:
                    sg = 1.0 / (1.0 + np.exp(-m))
                else:
                    e = np.exp(m)
                    sg = e / (1.0 + e)
                coef = -labels[row] * sg
                acc[0] += coef
                acc[1:] += coef * b
            Gn[i] = acc / s + lam * x
        Yn = np.dot(B_stack[t], Y) + Gn - G
        X, Y, G = Xn, Yn, Gn
        k = k_start + t + 1
        if k % stride == 0:
            rec_X[k // stride] = X
            rec_Y[k // stride] = Y
            rec_G[k // stride] = G
    return -1, X, Y, G


def track_logistic_exact_chunk(X, Y, G, A_stack, B_stack, feats, labels,
                               starts, counts, lam, noise, alpha, k_start,
                               stride, rec_X, rec_Y, rec_G):
    """Gradient-tracking steps with exact per-agent logistic gradients."""
    steps = A_stack.shape[0]
    n = X.shape[0]
    for t in range(steps):
        Xn = np.dot(A_stack[t], X) - alpha * Y
        if not np.isfinite(Xn.sum()):
            return k_start + t + 1, X, Y, G
        Gn = np.empty_like(G)
        for i in range(n):
            x = Xn[i]
            lo = starts[i]
            m_i = counts[i]
            F = feats[lo:lo + m_i]
            y = labels[lo:lo + m_i]
            z = np.dot(F, x[1:]) + x[0]
            marg = -y * z
            em = np.exp(-np.abs(marg))
            sg = np.where(marg >= 0.0, 1.0 / (1.0 + em), em / (1.0 + em))
            coef = -y * sg
            g = np.empty_like(x)
            g[0] = coef.sum() / m_i
            g[1:] = np.dot(coef, F) / m_i
            Gn[i] = g + lam * x + noise[t, i]
        Yn = np.dot(B_stack[t], Y) + Gn - G
        X, Y, G = Xn, Yn, Gn
        k = k_start + t + 1
        if k % stride == 0:
            rec_X[k // stride] = X
            rec_Y[k // stride] = Y
            rec_G[k // stride] = G
    return -1, X, Y, G


def central_quadratic_chunk(x, Qavg, qavg, noise, alpha, k_start, stride, rec_x):
    """Centralized (stochastic) gradient descent on the average quadratic."""
    steps = noise.shape[0]
    for t in range(steps):
        g = np.dot(Qavg, x) + qavg + noise[t]
        x = x - alpha * g
        if not np.isfinite(x.sum()):
            return k_start + t + 1, x
        k = k_start + t + 1
        if k % stride == 0:
            rec_x[k // stride] = x
    return -1, x


def central_logistic_exact_chunk(x, feats, labels, wts, lam, alpha, steps,
                                 k_start, stride, rec_x):
    """Full-batch gradient descent on the weighted logistic average cost."""
    p = x.shape[0]
    for t in range(steps):
        z = np.dot(feats, x[1:]) + x[0]
        marg = -labels * z
        em = np.exp(-np.abs(marg))
        sg = np.where(marg >= 0.0, 1.0 / (1.0 + em), em / (1.0 + em))
        coef = -labels * sg * wts
        g = np.empty(p)
        g[0] = coef.sum()
        g[1:] = np.dot(coef, feats)
        g += lam * x
        x = x - alpha * g
        if not np.isfinite(x.sum()):
            return k_start + t + 1, x
        k = k_start + t + 1
        if k % stride == 0:
            rec_x[k // stride] = x
    return -1, x


def central_logistic_sample_chunk(x, feats, labels, idx, lam, alpha, k_start,
                                  stride, rec_x):
    """Single-sample stochastic gradient descent over the pooled batch."""
    steps = idx.shape[0]
    p = x.shape[0]
    for t in range(steps):
        row = idx[t]
        b = feats[row]
        z = x[0] + np.dot(x[1:], b)
        m = -labels[row] * z
        if m >= 0.0:
            sg = 1.0 / (1.0 + np.exp(-m))
        else:
            e = np.exp(m)
            sg = e / (1.0 + e)
        coef = -labels[row] * sg
        g = np.empty(p)
        g[0] = coef
        g[1:] = coef * b
        g = g + lam * x
        x = x - alpha * g
        if not np.isfinite(x.sum()):
            return k_start + t + 1, x
        k = k_start + t + 1
        if k % stride == 0:
            rec_x[k // stride] = x
    return -1, x


def pi_path(B_stack, pi0):
    """Forward tracker-weight recursion; row t holds the vector at offset t."""
    steps = B_stack.shape[0]
    out = np.empty((steps + 1, pi0.shape[0]))
    out[0] = pi0
    for t in range(steps):
        out[t + 1] = np.dot(B_stack[t], out[t])
    return out


def phi_path_down(A_stack, phi_end):
    """Backward absolute-probability recursion over a chunk of A matrices."""
    steps = A_stack.shape[0]
    out = np.empty((steps + 1, phi_end.shape[0]))
    out[steps] = phi_end
    for t in range(steps - 1, -1, -1):
        out[t] = np.dot(out[t + 1], A_stack[t])
    return out


def product_down(A_stack, P):
    """Extend a backward product P by the chunk's matrices, newest on the right."""
    for t in range(A_stack.shape[0] - 1, -1, -1):
        P = np.dot(P, A_stack[t])
    return P


_PLAIN = {name: globals()[name] for name in _KERNEL_NAMES}
_JITTED: dict = {}


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def default_backend() -> str:
    choice = os.environ.get("SABTV_BACKEND", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"SABTV_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    if choice == "numba" and not _numba_available():
        raise ValueError("SABTV_BACKEND=numba but numba is not importable")
    return "numba" if _numba_available() else "numpy"


def get_kernels(backend: str | None = None) -> dict:
    backend = backend or default_backend()
    if backend == "numpy":
        return _PLAIN
    if backend != "numba":
        raise ValueError(f"unknown backend {backend!r}")
    if not _JITTED:
        from numba import njit

        for name in _KERNEL_NAMES:
            _JITTED[name] = njit(cache=True)(_PLAIN[name])
    return _JITTED
