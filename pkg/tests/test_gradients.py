"""Analytic gradients against the central-difference oracle, and the two
kernel backends against each other."""

import numpy as np
import pytest

from osfsl import kernels
from osfsl.data import SyntheticSpec, synth_gaussian_features
from osfsl.episodes import EpisodeSpec, sample_episode
from osfsl.losses import LossWeights, total_loss
from osfsl.model import (
    EOL,
    ORIENT_FLIPPED,
    ORIENT_VERBATIM,
    OSTIM,
    calibrated_logits,
    center_episode,
    eol_posteriors,
    init_state,
    ostim_posteriors,
    row_softmax,
)
from osfsl.optim import (
    gradient_check_episode,
    gradients,
    loss_at,
    run_gradient_check,
)

FLAG_COMBOS = [(False, False), (True, False), (False, True), (True, True)]


def small_episode(dim, seed):
    pool = synth_gaussian_features(
        SyntheticSpec(6, 10, dim, 3.0, 1.0, seed=seed)
    )
    spec = EpisodeSpec(n_in=3, n_out_classes=2, k_shot=2,
                       k_in_query=3, k_out_query=2, seed=seed + 1)
    return sample_episode(pool, spec)


@pytest.mark.parametrize("dim", [3, 16])
@pytest.mark.parametrize("method", [OSTIM, EOL])
@pytest.mark.parametrize("opt_eta,opt_delta", FLAG_COMBOS)
def test_analytic_matches_finite_differences(dim, method, opt_eta, opt_delta):
    episode = small_episode(dim, seed=dim * 7 + 3)
    for orientation in (ORIENT_VERBATIM, ORIENT_FLIPPED):
        weights = LossWeights(method=method, b=0.35, orientation=orientation)
        report = gradient_check_episode(
            episode.inputs, weights, opt_eta, opt_delta
        )
        for block, err in report.items():
            assert err < 1e-4, f"{block} relative error {err:.2e}"


def test_ostim_calibration_blocks_are_zero(tiny_episode):
    te = center_episode(tiny_episode.inputs)
    state = init_state(te, 2, OSTIM, 0.5)
    _, g_eta, g_delta = gradients(state, te, LossWeights(method=OSTIM))
    np.testing.assert_array_equal(g_eta, np.zeros(2))
    np.testing.assert_array_equal(g_delta, np.zeros(2))


def test_flag_frozen_blocks_are_zero(tiny_episode):
    te = center_episode(tiny_episode.inputs)
    state = init_state(te, 2, EOL, 0.5)
    w = LossWeights(method=EOL)
    _, g_eta, g_delta = gradients(state, te, w, optimize_eta=False, optimize_delta=True)
    np.testing.assert_array_equal(g_eta, np.zeros(2))
    assert np.any(g_delta != 0.0)


def test_gradient_near_zero_at_ce_optimum(separable_pool):
    # with only the support term and a huge logit scale, posteriors are
    # one-hot and the objective is already stationary
    episode = sample_episode(separable_pool, EpisodeSpec(
        n_in=3, n_out_classes=1, k_shot=5, k_in_query=2, k_out_query=1, seed=4))
    te = center_episode(episode.inputs)
    state = init_state(te, 3, EOL, 0.5, eta0=500.0)
    w = LossWeights(method=EOL, lambda_ma=0.0, lambda_co=0.0)
    g_c, g_eta, g_delta = gradients(state, te, w)
    assert np.linalg.norm(g_c) < 1e-6
    assert np.linalg.norm(g_delta) < 1e-6


def test_kernel_loss_matches_modular_total(tiny_episode, rng):
    te = center_episode(tiny_episode.inputs)
    for method, orientation in ((OSTIM, ORIENT_VERBATIM), (EOL, ORIENT_FLIPPED),
                                (EOL, ORIENT_VERBATIM)):
        w = LossWeights(method=method, b=0.45, orientation=orientation)
        state = init_state(te, 2, method, w.b)
        state.prototypes = state.prototypes + rng.normal(scale=0.1, size=state.prototypes.shape)
        state.delta = rng.normal(scale=0.2, size=2)
        kernel_bd = loss_at(state, te, w)

        l_all = calibrated_logits(state, te)
        n_s = te.centered_support.shape[0]
        support_post = row_softmax(l_all[:n_s])
        if method == OSTIM:
            table = ostim_posteriors(l_all[n_s:])
        else:
            table = eol_posteriors(l_all[n_s:], w.b, 2, orientation)
        modular_bd = total_loss(support_post, te.support_labels, table, w)

        assert kernel_bd.total == pytest.approx(modular_bd.total, rel=1e-10)
        assert kernel_bd.ce == pytest.approx(modular_bd.ce, rel=1e-10)
        assert kernel_bd.ma == pytest.approx(modular_bd.ma, rel=1e-10)
        assert kernel_bd.co == pytest.approx(modular_bd.co, rel=1e-10)


@pytest.mark.skipif(kernels.active_backend() != "numba",
                    reason="numba backend not active")
def test_backends_agree(rng):
    S, Q, N, D = 15, 40, 4, 8
    us = rng.normal(size=(S, D))
    us /= np.linalg.norm(us, axis=1, keepdims=True)
    uq = rng.normal(size=(Q, D))
    uq /= np.linalg.norm(uq, axis=1, keepdims=True)
    ys = rng.integers(0, N, size=S).astype(np.int64)
    c = rng.normal(size=(N, D))
    eta = np.full(N, 10.0)
    delta = rng.normal(scale=0.3, size=N)

    a = kernels.ostim_loss_grad(us, ys, uq, c, eta, delta, 1.0, 0.8, 1.2)
    b = kernels.ostim_loss_grad_numpy(us, ys, uq, c, eta, delta, 1.0, 0.8, 1.2)
    for i in range(8):
        assert a[i] == pytest.approx(b[i], rel=1e-10)
    for i in (9, 10, 11):
        np.testing.assert_allclose(a[i], b[i], atol=1e-11)

    for sign in (1.0, -1.0):
        a = kernels.eol_loss_grad(us, ys, uq, c, eta, delta, 1.0, 0.8, 1.2, 0.4, sign)
        b = kernels.eol_loss_grad_numpy(us, ys, uq, c, eta, delta, 1.0, 0.8, 1.2, 0.4, sign)
        for i in range(8):
            assert a[i] == pytest.approx(b[i], rel=1e-10)
        for i in (9, 10, 11):
            np.testing.assert_allclose(a[i], b[i], atol=1e-11)


def test_numpy_backend_passes_oracle(monkeypatch):
    monkeypatch.setattr(kernels, "ostim_loss_grad", kernels.ostim_loss_grad_numpy)
    monkeypatch.setattr(kernels, "eol_loss_grad", kernels.eol_loss_grad_numpy)
    episode = small_episode(5, seed=91)
    for method in (OSTIM, EOL):
        report = gradient_check_episode(
            episode.inputs, LossWeights(method=method, b=0.5), True, True
        )
        assert max(report.values()) < 1e-4


def test_fault_injection_names_the_block():
    def corrupted(state, te, weights, optimize_eta=True, optimize_delta=True):
        g_c, g_eta, g_delta = gradients(state, te, weights, optimize_eta, optimize_delta)
        return g_c, g_eta, -g_delta  # sign error in the shift block

    report = run_gradient_check(seed=3, trials=8, grad_fn=corrupted)
    assert not report["passed"]
    assert all(f["block"] == "delta" for f in report["failures"])
    assert any(f["block"] == "delta" for f in report["failures"])


def test_run_gradient_check_reports_worst_errors():
    report = run_gradient_check(seed=1, trials=16)
    assert report["passed"]
    assert set(report["worst_relative_error"]) == {"prototypes", "eta", "delta"}
    assert report["worst_relative_error"]["prototypes"] < 1e-4
