"""Numerically stable scalar/vector primitives and a finite-difference oracle.

All computation is 64-bit; episode-sized problems are far too small for
reduced precision to pay off, and the gradient checks need the headroom.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateVectorError, DomainError, OracleError

NORM_FLOOR = 1e-12


def _as_finite_array(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.size == 0:
        raise DomainError(f"{name}: empty input")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name}: non-finite entries")
    return arr


def log_sum_exp(v: Sequence[float]) -> float:
    """log(sum(exp(v))) with max-shift so no intermediate overflows.

    Shift invariant: log_sum_exp(v + c) == log_sum_exp(v) + c.
    """
    arr = _as_finite_array(v, "log_sum_exp")
    m = float(np.max(arr))
    return m + float(np.log(np.sum(np.exp(arr - m))))


def softmax(v: Sequence[float]) -> np.ndarray:
    """Probability vector exp(v_i)/sum exp(v); invariant to adding a constant."""
    arr = _as_finite_array(v, "softmax")
    e = np.exp(arr - np.max(arr))
    return e / np.sum(e)


def stable_sigmoid(x: float) -> float:
    """1/(1 + exp(-x)) with a negative-x branch so exp never overflows."""
    if not np.isfinite(x):
        raise DomainError("stable_sigmoid: non-finite input")
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return float(e / (1.0 + e))


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between a and b, clamped to [-1, 1].

    Raises DegenerateVectorError if either norm is below 1e-12; after task
    centering that only happens in degenerate episodes, which should fail
    loudly rather than produce junk logits.
    """
    va = _as_finite_array(a, "cosine_similarity")
    vb = _as_finite_array(b, "cosine_similarity")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise DegenerateVectorError(
            f"cosine_similarity: norm below {NORM_FLOOR:g} (|a|={na:.3e}, |b|={nb:.3e})"
        )
    c = float(np.dot(va / na, vb / nb))
    return min(1.0, max(-1.0, c))


def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    x: Sequence[float],
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.

    The default h = 1e-5 balances truncation against rounding error at
    float64. This is the reference every analytic gradient in the package
    is validated against; it deliberately knows nothing about how f is
    computed.
    """
    if h <= 0:
        raise DomainError("finite_diff_gradient: h must be positive")
    x0 = np.array(x, dtype=np.float64)
    grad = np.empty_like(x0)
    for i in range(x0.size):
        step = np.zeros_like(x0)
        step[i] = h
        fp = float(f(x0 + step))
        fm = float(f(x0 - step))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(
                f"finite_diff_gradient: non-finite evaluation at coordinate {i}"
            )
        grad[i] = (fp - fm) / (2.0 * h)
    return grad
