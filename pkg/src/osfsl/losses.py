"""Scalar objectives for transductive inference.

Both methods combine three ingredients computed from posterior tables:
a support-set cross-entropy, a marginal-entropy term over the per-class
query marginals, and a conditional-entropy term over per-query posteriors.
The "eol" variant reweights the marginal term by inverse anticipated class
frequency (class_weights) and restricts the conditional term to the inlier
columns.

All logarithms clamp their argument at 1e-300: the entropy sums are
otherwise undefined at the exact zeros that one-hot limits produce. Clamp
events are counted in a module counter and surfaced on LossBreakdown.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .model import EOL, ORIENT_FLIPPED, ORIENT_VERBATIM, OSTIM, PosteriorTable

PROB_FLOOR = 1e-300

_clamp_events = 0


def clamp_event_count() -> int:
    """Total clamped-probability events in this process since last reset."""
    return _clamp_events


def reset_clamp_counter() -> None:
    global _clamp_events
    _clamp_events = 0


def _log_clamped(p: np.ndarray) -> np.ndarray:
    global _clamp_events
    n_bad = int(np.count_nonzero(p < PROB_FLOOR))
    if n_bad:
        _clamp_events += n_bad
        return np.log(np.maximum(p, PROB_FLOOR))
    return np.log(p)


@dataclass(frozen=True)
class LossWeights:
    """Term weights, balancing prior b, and method selector.

    orientation applies to the "eol" head only; see
    model.eol_inlier_probability. Benchmarks default to "flipped".
    """

    lambda_ce: float = 1.0
    lambda_ma: float = 1.0
    lambda_co: float = 1.0
    b: float = 0.5
    method: str = EOL
    orientation: str = ORIENT_FLIPPED

    def __post_init__(self):
        if self.lambda_ce < 0 or self.lambda_ma < 0 or self.lambda_co < 0:
            raise ParameterError("loss weights must be non-negative")
        if self.lambda_ce == self.lambda_ma == self.lambda_co == 0:
            raise ParameterError("at least one loss weight must be positive")
        if self.method not in (OSTIM, EOL):
            raise ParameterError(f"unknown method {self.method!r}")
        if self.method == EOL and not 0.0 < self.b < 1.0:
            raise ParameterError(f"b must lie strictly in (0, 1), got {self.b}")
        if self.orientation not in (ORIENT_VERBATIM, ORIENT_FLIPPED):
            raise ParameterError(f"unknown orientation {self.orientation!r}")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float          # sum_i sum_j y_ij * log p_ij  (<= 0)
    ma: float          # marginal term (weighted for "eol")
    ma_inlier: float
    ma_outlier: float
    co: float          # conditional term ("eol": inlier columns only)
    co_inlier: float
    co_outlier: float
    total: float
    clamp_events: int = 0


def cross_entropy(support_posteriors: np.ndarray, support_labels: np.ndarray) -> float:
    """sum_i log p[i, y_i] over support rows (zero iff predictions are one-hot).

    The 1/|S| prefactor and the CE weight are applied by total_loss.
    """
    labels = np.asarray(support_labels)
    n = support_posteriors.shape[1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n:
        raise ParameterError("support labels out of range for posterior table")
    picked = support_posteriors[np.arange(len(labels)), labels]
    return float(np.sum(_log_clamped(picked)))


def _check_marginals(marginals: np.ndarray) -> np.ndarray:
    m = np.asarray(marginals, dtype=np.float64)
    if m.ndim != 1 or m.size < 2:
        raise ParameterError("marginals must be a vector over n_in + 1 classes")
    if np.min(m) < 0 or np.max(m) > 1 + 1e-12:
        raise ParameterError("marginal entries must lie in [0, 1]")
    if abs(float(np.sum(m)) - 1.0) > 1e-9:
        raise ParameterError("marginals must sum to 1 within 1e-9")
    return m


def ostim_ma(marginals: np.ndarray) -> tuple[float, float, float]:
    """sum_k phat_k log phat_k split at the catch-all column.

    Returns (total, inlier_part, outlier_part) with total computed as the
    sum of the parts, so the decomposition identity is exact.
    """
    m = _check_marginals(marginals)
    terms = m * _log_clamped(m)
    inlier = float(np.sum(terms[:-1]))
    outlier = float(terms[-1])
    return inlier + outlier, inlier, outlier


def ostim_co(query_posteriors: np.ndarray) -> tuple[float, float, float]:
    """sum_i sum_k p_ik log p_ik over the n_in + 1 columns, split likewise."""
    p = query_posteriors
    terms = p * _log_clamped(p)
    inlier = float(np.sum(terms[:, :-1]))
    outlier = float(np.sum(terms[:, -1]))
    return inlier + outlier, inlier, outlier


def class_weights(b: float, n_in: int) -> tuple[float, float]:
    """Inverse anticipated-frequency weights: (n_in/(1-b), 1/b).

    b in (0, 1) strictly; the limits would send a weight to infinity.
    """
    if not 0.0 < b < 1.0:
        raise ParameterError(f"b must lie strictly in (0, 1), got {b}")
    if n_in < 1:
        raise ParameterError("n_in must be >= 1")
    return n_in / (1.0 - b), 1.0 / b


def _weighted_ma(marginals: np.ndarray, w_in: float, w_out: float) -> tuple[float, float, float]:
    m = _check_marginals(marginals)
    logs = _log_clamped(m)
    inlier = w_in * float(np.sum(m[:-1] * logs[:-1]))
    outlier = w_out * float(m[-1] * logs[-1])
    return inlier + outlier, inlier, outlier


def eol_ma(marginals: np.ndarray, b: float) -> float:
    """Marginal term with classes reweighted by class_weights(b, n_in)."""
    w_in, w_out = class_weights(b, len(np.asarray(marginals)) - 1)
    total, _, _ = _weighted_ma(marginals, w_in, w_out)
    return total


def eol_co(query_inlier_probs: np.ndarray) -> float:
    """sum_i sum_{j<n_in} p_ij log p_ij over the full mixed query set."""
    p = query_inlier_probs
    return float(np.sum(p * _log_clamped(p)))


def total_loss(
    support_posteriors: np.ndarray,
    support_labels: np.ndarray,
    query_table: PosteriorTable,
    weights: LossWeights,
) -> LossBreakdown:
    """Assemble the selected method's objective.

    ostim: total = (l_ce/|S|) * NLL + l_ma * MA - (l_co/|Q|) * CO
    eol:   total = (l_ce/|S|) * NLL + (l_ma/(n_in+1)) * MA_w - (l_co/|Q|) * CO_in

    where NLL = -ce is the support negative log-likelihood. The ce field
    keeps the raw sum-of-log-probabilities sign; the total uses NLL, the
    orientation under which descent drives support predictions toward the
    labels (and |ce| toward 0) instead of away from them.
    """
    before = clamp_event_count()
    n_s = support_posteriors.shape[0]
    n_q = query_table.probs.shape[0]
    n_in = query_table.probs.shape[1] - 1
    if n_s == 0 or n_q == 0:
        raise ParameterError("total_loss needs non-empty support and query")

    ce = cross_entropy(support_posteriors, support_labels)
    if weights.method == OSTIM:
        ma, ma_in, ma_out = ostim_ma(query_table.marginals)
        co, co_in, co_out = ostim_co(query_table.probs)
        total = (
            (weights.lambda_ce / n_s) * (-ce)
            + weights.lambda_ma * ma
            - (weights.lambda_co / n_q) * co
        )
    else:
        w_in, w_out = class_weights(weights.b, n_in)
        ma, ma_in, ma_out = _weighted_ma(query_table.marginals, w_in, w_out)
        co = eol_co(query_table.probs[:, :n_in])
        co_in, co_out = co, 0.0
        total = (
            (weights.lambda_ce / n_s) * (-ce)
            + (weights.lambda_ma / (n_in + 1)) * ma
            - (weights.lambda_co / n_q) * co
        )
    return LossBreakdown(
        ce=ce,
        ma=ma,
        ma_inlier=ma_in,
        ma_outlier=ma_out,
        co=co,
        co_inlier=co_in,
        co_outlier=co_out,
        total=float(total),
        clamp_events=clamp_event_count() - before,
    )
