"""Transductive inference: fixed-step gradient descent on the selected loss.

The optimized parameters are the class prototypes and, for the "eol"
method, the per-class calibration scale/shift. The task mean is computed
once from the raw features and held fixed; prototypes move, the centering
does not. Plain fixed-step descent is used deliberately: the parameter
count is n_in * (D + 2), far too small for adaptive machinery to matter,
and a fixed-step scheme is trivially reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .episodes import Episode, TaskInputs
from .errors import OptimizationError, ParameterError
from .losses import LossBreakdown, LossWeights
from .model import (
    DEFAULT_ETA0,
    EOL,
    ORIENT_FLIPPED,
    ORIENT_VERBATIM,
    OSTIM,
    ModelState,
    TaskEmbedding,
    center_episode,
    init_state,
    unit_rows,
)

DEFAULT_STEP_SIZE = 0.05
DEFAULT_ITERATIONS = 150
DEFAULT_GRAD_CLIP = 10.0


@dataclass(frozen=True)
class OptimConfig:
    step_size: float = DEFAULT_STEP_SIZE
    iterations: int = DEFAULT_ITERATIONS
    optimize_eta: bool = True
    optimize_delta: bool = True
    grad_clip: float | None = DEFAULT_GRAD_CLIP
    record_trajectory: bool = False
    eta0: float = DEFAULT_ETA0

    def __post_init__(self):
        # step_size 0 is allowed as an explicit null update (useful in tests).
        if self.step_size < 0:
            raise ParameterError("step_size must be >= 0")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ParameterError("grad_clip must be > 0 or None")


@dataclass
class Trajectory:
    breakdowns: list[LossBreakdown] = field(default_factory=list)
    final_state: ModelState | None = None


def _orient_sign(orientation: str) -> float:
    return (
        kernels.ORIENT_SIGN_VERBATIM
        if orientation == ORIENT_VERBATIM
        else kernels.ORIENT_SIGN_FLIPPED
    )


def _kernel_eval(us, ys, uq, state: ModelState, weights: LossWeights):
    if state.method == OSTIM:
        return kernels.ostim_loss_grad(
            us, ys, uq, state.prototypes, state.eta, state.delta,
            weights.lambda_ce, weights.lambda_ma, weights.lambda_co,
        )
    return kernels.eol_loss_grad(
        us, ys, uq, state.prototypes, state.eta, state.delta,
        weights.lambda_ce, weights.lambda_ma, weights.lambda_co,
        weights.b, _orient_sign(weights.orientation),
    )


def _breakdown(raw) -> LossBreakdown:
    ce, ma, ma_in, ma_out, co, co_in, co_out, total, clamps = raw[:9]
    return LossBreakdown(
        ce=ce, ma=ma, ma_inlier=ma_in, ma_outlier=ma_out,
        co=co, co_inlier=co_in, co_outlier=co_out,
        total=total, clamp_events=int(clamps),
    )


class _Prepared:
    """Unit-normalized centered rows, computed once per episode."""

    def __init__(self, te: TaskEmbedding):
        self.us = np.ascontiguousarray(unit_rows(te.centered_support))
        self.ys = np.ascontiguousarray(te.support_labels, dtype=np.int64)
        self.uq = np.ascontiguousarray(unit_rows(te.centered_query))


def gradients(
    state: ModelState,
    te: TaskEmbedding,
    weights: LossWeights,
    optimize_eta: bool = True,
    optimize_delta: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of the total loss w.r.t. (prototypes, eta, delta).

    Blocks frozen by the method or the flags come back as exact zeros:
    they are not free coordinates of the optimization.
    """
    prep = _Prepared(te)
    raw = _kernel_eval(prep.us, prep.ys, prep.uq, state, weights)
    g_c, g_eta, g_delta = raw[9], raw[10], raw[11]
    if state.method == OSTIM or not optimize_eta:
        g_eta = np.zeros_like(g_eta)
    if state.method == OSTIM or not optimize_delta:
        g_delta = np.zeros_like(g_delta)
    for name, g in (("prototypes", g_c), ("eta", g_eta), ("delta", g_delta)):
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite gradient in block {name!r}")
    return g_c, g_eta, g_delta


def loss_at(state: ModelState, te: TaskEmbedding, weights: LossWeights) -> LossBreakdown:
    """Loss breakdown at a state without taking a step (kernel evaluation)."""
    prep = _Prepared(te)
    return _breakdown(_kernel_eval(prep.us, prep.ys, prep.uq, state, weights))


def _clip(g: np.ndarray, limit: float | None) -> np.ndarray:
    if limit is None:
        return g
    norm = float(np.linalg.norm(g))
    if norm > limit:
        return g * (limit / norm)
    return g


def transduce(
    task: TaskInputs | Episode,
    weights: LossWeights,
    cfg: OptimConfig = OptimConfig(),
) -> tuple[ModelState, Trajectory]:
    """Run the full per-episode optimization; deterministic in its inputs.

    Accepts the truth-free task view; an Episode is narrowed to .inputs so
    ground truth is structurally out of reach. The trajectory records the
    loss at the state *entering* each iteration.
    """
    inputs = task.inputs if isinstance(task, Episode) else task
    te = center_episode(inputs)
    state = init_state(te, inputs.n_in, weights.method, weights.b, cfg.eta0)
    prep = _Prepared(te)

    opt_eta = cfg.optimize_eta and state.method == EOL
    opt_delta = cfg.optimize_delta and state.method == EOL

    traj = Trajectory()
    for it in range(cfg.iterations):
        raw = _kernel_eval(prep.us, prep.ys, prep.uq, state, weights)
        bd = _breakdown(raw)
        if not np.isfinite(bd.total):
            raise OptimizationError(f"loss diverged at iteration {it}")
        if cfg.record_trajectory:
            traj.breakdowns.append(bd)
        g_c, g_eta, g_delta = raw[9], raw[10], raw[11]
        if not (np.all(np.isfinite(g_c)) and np.all(np.isfinite(g_eta))
                and np.all(np.isfinite(g_delta))):
            raise OptimizationError(f"non-finite gradient at iteration {it}")
        state.prototypes = state.prototypes - cfg.step_size * _clip(g_c, cfg.grad_clip)
        if opt_eta:
            state.eta = state.eta - cfg.step_size * _clip(g_eta, cfg.grad_clip)
        if opt_delta:
            state.delta = state.delta - cfg.step_size * _clip(g_delta, cfg.grad_clip)
    traj.final_state = state
    return state, traj


# ---------------------------------------------------------------------------
# gradient self-check harness
# ---------------------------------------------------------------------------

def _pack(state: ModelState, opt_eta: bool, opt_delta: bool) -> np.ndarray:
    parts = [state.prototypes.ravel()]
    if opt_eta:
        parts.append(state.eta)
    if opt_delta:
        parts.append(state.delta)
    return np.concatenate(parts)


def _unpack(vec: np.ndarray, like: ModelState, opt_eta: bool, opt_delta: bool) -> ModelState:
    state = like.copy()
    n, d = like.prototypes.shape
    state.prototypes = vec[: n * d].reshape(n, d).copy()
    pos = n * d
    if opt_eta:
        state.eta = vec[pos : pos + n].copy()
        pos += n
    if opt_delta:
        state.delta = vec[pos : pos + n].copy()
    return state


def gradient_check_episode(
    task: TaskInputs,
    weights: LossWeights,
    optimize_eta: bool = True,
    optimize_delta: bool = True,
    eta0: float = DEFAULT_ETA0,
    h: float = 1e-5,
    grad_fn=gradients,
) -> dict[str, float]:
    """Worst relative error per parameter block, analytic vs central differences.

    Only active blocks are treated as coordinates; frozen blocks are held
    constant in both evaluations. grad_fn is injectable so a deliberately
    corrupted gradient can be shown to fail.
    """
    from .numerics import finite_diff_gradient

    te = center_episode(task)
    state = init_state(te, task.n_in, weights.method, weights.b, eta0)
    opt_eta = optimize_eta and weights.method == EOL
    opt_delta = optimize_delta and weights.method == EOL

    g_c, g_eta, g_delta = grad_fn(state, te, weights, optimize_eta, optimize_delta)
    analytic = [g_c.ravel()]
    if opt_eta:
        analytic.append(g_eta)
    if opt_delta:
        analytic.append(g_delta)
    analytic_vec = np.concatenate(analytic)

    def f(vec: np.ndarray) -> float:
        return loss_at(_unpack(vec, state, opt_eta, opt_delta), te, weights).total

    fd_vec = finite_diff_gradient(f, _pack(state, opt_eta, opt_delta), h)

    rel = np.abs(analytic_vec - fd_vec) / np.maximum(
        np.maximum(np.abs(analytic_vec), np.abs(fd_vec)), 1e-6
    )
    n, d = state.prototypes.shape
    report = {"prototypes": float(rel[: n * d].max())}
    pos = n * d
    if opt_eta:
        report["eta"] = float(rel[pos : pos + n].max())
        pos += n
    if opt_delta:
        report["delta"] = float(rel[pos : pos + n].max())
    return report


def run_gradient_check(
    seed: int = 0,
    trials: int = 208,
    tolerance: float = 1e-4,
    dims: tuple[int, ...] = (3, 16),
    grad_fn=gradients,
) -> dict:
    """Randomized episodes x methods x flag combinations through the oracle.

    Cycles through both methods, all four eta/delta flag combinations and
    the requested dimensionalities; fails if any block's worst relative
    error reaches the tolerance.
    """
    from .data import SyntheticSpec, synth_gaussian_features
    from .episodes import EpisodeSpec, sample_episode
    from .rng import SplitMix64, derive_seed

    rng = SplitMix64(derive_seed(seed, 0))
    combos = [(False, False), (True, False), (False, True), (True, True)]
    worst: dict[str, float] = {"prototypes": 0.0, "eta": 0.0, "delta": 0.0}
    failures = []
    for t in range(trials):
        method = (OSTIM, EOL)[t % 2]
        opt_eta, opt_delta = combos[(t // 2) % 4]
        dim = dims[(t // 8) % len(dims)]
        n_in = 2 + rng.randbelow(3)
        pool = synth_gaussian_features(SyntheticSpec(
            num_classes=n_in + 2,
            samples_per_class=8,
            dim=dim,
            center_scale=3.0,
            within_class_sigma=1.0,
            seed=derive_seed(seed, 1000 + t),
        ))
        spec = EpisodeSpec(
            n_in=n_in,
            n_out_classes=1 + rng.randbelow(2),
            k_shot=1 + rng.randbelow(3),
            k_in_query=1 + rng.randbelow(4),
            k_out_query=1 + rng.randbelow(4),
            seed=derive_seed(seed, 2000 + t),
        )
        episode = sample_episode(pool, spec)
        weights = LossWeights(
            b=0.2 + 0.6 * rng.uniform(),
            method=method,
            orientation=ORIENT_VERBATIM if t % 4 < 2 else ORIENT_FLIPPED,
        )
        report = gradient_check_episode(
            episode.inputs, weights, opt_eta, opt_delta, grad_fn=grad_fn
        )
        for block, err in report.items():
            worst[block] = max(worst[block], err)
            if err >= tolerance:
                failures.append({
                    "trial": t, "method": method, "block": block,
                    "dim": dim, "relative_error": err,
                })
    return {
        "trials": trials,
        "tolerance": tolerance,
        "worst_relative_error": worst,
        "failures": failures,
        "passed": not failures,
    }
