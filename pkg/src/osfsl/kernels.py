"""Fused loss + gradient kernels for the transductive inner loop.

One optimization step needs the objective and its gradient with respect to
(prototypes, eta, delta). That evaluation runs iterations x episodes times
per benchmark, so it is implemented twice:

* loop kernels compiled with numba @njit (the default), and
* vectorized numpy fallbacks, selected when numba is unavailable or the
  environment variable ``OSFSL_NO_NUMBA`` is set to a non-empty value.

Both backends implement identical formulas and are cross-checked to 1e-10
relative by the test suite; benchmarks/bench_kernels.py compares their
speed. Gradients are closed-form chain rule through row-normalized cosine
logits, per-class scale/shift calibration, the selected head, and the
entropy terms; the finite-difference oracle in numerics.py guards them.

Sign conventions follow losses.total_loss: the support term enters the
total as a negative log-likelihood, and the conditional-entropy term is
subtracted.
"""

from __future__ import annotations

import os

import numpy as np

PROB_FLOOR = 1e-300

ORIENT_SIGN_VERBATIM = -1.0
ORIENT_SIGN_FLIPPED = 1.0


# ---------------------------------------------------------------------------
# numpy fallback kernels (vectorized)
# ---------------------------------------------------------------------------

def _row_softmax(l):
    e = np.exp(l - l.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _log_floor(p):
    return np.log(np.maximum(p, PROB_FLOOR))


def _logits(u, c_hat, radii, eta, delta):
    a = u @ c_hat.T
    return a, a * eta + delta


def _fold_param_grads(g_rows, a_rows, u_rows, c_hat, radii, eta):
    """Map d(total)/d(logit matrix) onto (prototypes, eta, delta) gradients."""
    g_delta = g_rows.sum(axis=0)
    g_eta = (g_rows * a_rows).sum(axis=0)
    m = g_rows.T @ u_rows                      # (N, D)
    g_c = (eta / radii)[:, None] * (m - g_eta[:, None] * c_hat)
    return g_c, g_eta, g_delta


def _support_ce(us, ys, c_hat, radii, eta, delta, lam_ce):
    a_s, l_s = _logits(us, c_hat, radii, eta, delta)
    ps = _row_softmax(l_s)
    picked = ps[np.arange(len(ys)), ys]
    clamps = int(np.count_nonzero(picked < PROB_FLOOR))
    ce = float(np.sum(_log_floor(picked)))
    # total carries (lam_ce/|S|) * (-ce)
    g_s = ps.copy()
    g_s[np.arange(len(ys)), ys] -= 1.0
    g_s *= lam_ce / len(ys)
    return a_s, ce, g_s, clamps


def ostim_loss_grad_numpy(us, ys, uq, c, eta, delta, lam_ce, lam_ma, lam_co):
    n, _ = c.shape
    n_s, n_q = us.shape[0], uq.shape[0]
    radii = np.linalg.norm(c, axis=1)
    c_hat = c / radii[:, None]

    a_s, ce, g_s, clamps = _support_ce(us, ys, c_hat, radii, eta, delta, lam_ce)
    a_q, l_q = _logits(uq, c_hat, radii, eta, delta)

    aug = np.hstack([l_q, -l_q.sum(axis=1, keepdims=True) / n])
    p = _row_softmax(aug)
    phat = p.mean(axis=0)

    log_phat = _log_floor(phat)
    clamps += int(np.count_nonzero(phat < PROB_FLOOR))
    ma_terms = phat * log_phat
    ma_in = float(ma_terms[:n].sum())
    ma_out = float(ma_terms[n])
    ma = ma_in + ma_out

    log_p = _log_floor(p)
    clamps += int(np.count_nonzero(p < PROB_FLOOR))
    co_terms = p * log_p
    co_in = float(co_terms[:, :n].sum())
    co_out = float(co_terms[:, n].sum())
    co = co_in + co_out

    total = (lam_ce / n_s) * (-ce) + lam_ma * ma - (lam_co / n_q) * co

    # d(total)/d(aug logits), then collapse the catch-all column back onto
    # the class logits through d(aug_N)/d(l_j) = -1/n.
    row_ma = (p * log_phat[None, :]).sum(axis=1, keepdims=True)
    d_ma = (p / n_q) * (log_phat[None, :] - row_ma)
    row_co = (p * log_p).sum(axis=1, keepdims=True)
    d_co = p * (log_p - row_co)
    g_aug = lam_ma * d_ma - (lam_co / n_q) * d_co
    g_q = g_aug[:, :n] - g_aug[:, n:] / n

    g_rows = np.vstack([g_s, g_q])
    a_rows = np.vstack([a_s, a_q])
    u_rows = np.vstack([us, uq])
    g_c, _, _ = _fold_param_grads(g_rows, a_rows, u_rows, c_hat, radii, eta)
    # eta/delta are frozen under this method.
    return (ce, ma, ma_in, ma_out, co, co_in, co_out, total, clamps,
            g_c, np.zeros(n), np.zeros(n))


def eol_loss_grad_numpy(us, ys, uq, c, eta, delta,
                        lam_ce, lam_ma, lam_co, b, orient_sign):
    n, _ = c.shape
    n_s, n_q = us.shape[0], uq.shape[0]
    radii = np.linalg.norm(c, axis=1)
    c_hat = c / radii[:, None]

    a_s, ce, g_s, clamps = _support_ce(us, ys, c_hat, radii, eta, delta, lam_ce)
    a_q, l_q = _logits(uq, c_hat, radii, eta, delta)

    m = l_q.max(axis=1)
    s = np.exp(l_q - m[:, None])
    z = s.sum(axis=1)
    lse = m + np.log(z)
    s /= z[:, None]

    arg = orient_sign * (lse - np.log(n)) - np.log(b)
    p_in = np.empty_like(arg)
    pos = arg >= 0
    p_in[pos] = 1.0 / (1.0 + np.exp(-arg[pos]))
    e = np.exp(arg[~pos])
    p_in[~pos] = e / (1.0 + e)
    sig_slope = p_in * (1.0 - p_in)

    p = s * p_in[:, None]
    p_out = 1.0 - p_in
    phat = p.mean(axis=0)
    phat_out = float(p_out.mean())

    w_in = n / (1.0 - b)
    w_out = 1.0 / b
    log_phat = _log_floor(phat)
    log_phat_out = float(_log_floor(np.array([phat_out]))[0])
    clamps += int(np.count_nonzero(phat < PROB_FLOOR)) + int(phat_out < PROB_FLOOR)
    ma_in = w_in * float((phat * log_phat).sum())
    ma_out = w_out * phat_out * log_phat_out
    ma = ma_in + ma_out

    log_p = _log_floor(p)
    clamps += int(np.count_nonzero(p < PROB_FLOOR))
    co = float((p * log_p).sum())
    co_in, co_out = co, 0.0

    total = ((lam_ce / n_s) * (-ce)
             + (lam_ma / (n + 1)) * ma
             - (lam_co / n_q) * co)

    # Marginal term: beta_j through p_ij, gamma through the complement mass.
    beta = (w_in / n_q) * (log_phat + 1.0)
    gamma = -(w_out / n_q) * (log_phat_out + 1.0)
    beta_bar = (s * beta[None, :]).sum(axis=1)
    d_ma = (p_in[:, None] * s * (beta[None, :] - beta_bar[:, None])
            + orient_sign * (sig_slope * (beta_bar + gamma))[:, None] * s)

    d_rows = log_p + 1.0
    d_bar = (s * d_rows).sum(axis=1)
    d_co = (p_in[:, None] * s * (d_rows - d_bar[:, None])
            + orient_sign * (sig_slope * d_bar)[:, None] * s)

    g_q = (lam_ma / (n + 1)) * d_ma - (lam_co / n_q) * d_co

    g_rows = np.vstack([g_s, g_q])
    a_rows = np.vstack([a_s, a_q])
    u_rows = np.vstack([us, uq])
    g_c, g_eta, g_delta = _fold_param_grads(g_rows, a_rows, u_rows, c_hat, radii, eta)
    return (ce, ma, ma_in, ma_out, co, co_in, co_out, total, clamps,
            g_c, g_eta, g_delta)


# ---------------------------------------------------------------------------
# numba loop kernels (same math, explicit loops; compiled on first use)
# ---------------------------------------------------------------------------

def _ostim_loops(us, ys, uq, c, eta, delta, lam_ce, lam_ma, lam_co):
    n, d = c.shape
    n_s = us.shape[0]
    n_q = uq.shape[0]
    floor = PROB_FLOOR
    clamps = 0

    radii = np.empty(n)
    c_hat = np.empty((n, d))
    for j in range(n):
        acc = 0.0
        for k in range(d):
            acc += c[j, k] * c[j, k]
        radii[j] = np.sqrt(acc)
        for k in range(d):
            c_hat[j, k] = c[j, k] / radii[j]

    g_c = np.zeros((n, d))
    g_eta_acc = np.zeros(n)       # sum_i G_ij * A_ij, needed for prototype grads
    g_u = np.zeros((n, d))        # sum_i G_ij * u_i

    # support rows: cross-entropy
    ce = 0.0
    a_row = np.empty(n)
    l_row = np.empty(n)
    p_row = np.empty(n)
    for i in range(n_s):
        mx = -1e300
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += us[i, k] * c_hat[j, k]
            a_row[j] = acc
            l_row[j] = eta[j] * acc + delta[j]
            if l_row[j] > mx:
                mx = l_row[j]
        z = 0.0
        for j in range(n):
            p_row[j] = np.exp(l_row[j] - mx)
            z += p_row[j]
        for j in range(n):
            p_row[j] /= z
        picked = p_row[ys[i]]
        if picked < floor:
            clamps += 1
            picked = floor
        ce += np.log(picked)
        for j in range(n):
            g = p_row[j]
            if j == ys[i]:
                g -= 1.0
            g *= lam_ce / n_s
            g_eta_acc[j] += g * a_row[j]
            for k in range(d):
                g_u[j, k] += g * us[i, k]

    # query rows: head probabilities; two passes (need marginals first)
    p = np.empty((n_q, n + 1))
    a_q = np.empty((n_q, n))
    for i in range(n_q):
        mean_l = 0.0
        mx = -1e300
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += uq[i, k] * c_hat[j, k]
            a_q[i, j] = acc
            l_row[j] = eta[j] * acc + delta[j]
            mean_l += l_row[j]
            if l_row[j] > mx:
                mx = l_row[j]
        l_out = -mean_l / n
        if l_out > mx:
            mx = l_out
        z = np.exp(l_out - mx)
        for j in range(n):
            p[i, j] = np.exp(l_row[j] - mx)
            z += p[i, j]
        p[i, n] = np.exp(l_out - mx)
        for j in range(n + 1):
            p[i, j] /= z

    phat = np.zeros(n + 1)
    for i in range(n_q):
        for j in range(n + 1):
            phat[j] += p[i, j]
    log_phat = np.empty(n + 1)
    ma_in = 0.0
    ma_out = 0.0
    for j in range(n + 1):
        phat[j] /= n_q
        v = phat[j]
        if v < floor:
            clamps += 1
            v = floor
        log_phat[j] = np.log(v)
        term = phat[j] * log_phat[j]
        if j < n:
            ma_in += term
        else:
            ma_out = term
    ma = ma_in + ma_out

    co_in = 0.0
    co_out = 0.0
    log_p_row = np.empty(n + 1)
    for i in range(n_q):
        row_ma = 0.0
        row_co = 0.0
        for j in range(n + 1):
            v = p[i, j]
            if v < floor:
                clamps += 1
                v = floor
            log_p_row[j] = np.log(v)
            term = p[i, j] * log_p_row[j]
            if j < n:
                co_in += term
            else:
                co_out += term
            row_ma += p[i, j] * log_phat[j]
            row_co += p[i, j] * log_p_row[j]
        # fold gradient for this row immediately
        g_last = (lam_ma * (p[i, n] / n_q) * (log_phat[n] - row_ma)
                  - (lam_co / n_q) * p[i, n] * (log_p_row[n] - row_co))
        for j in range(n):
            g = (lam_ma * (p[i, j] / n_q) * (log_phat[j] - row_ma)
                 - (lam_co / n_q) * p[i, j] * (log_p_row[j] - row_co))
            g -= g_last / n
            g_eta_acc[j] += g * a_q[i, j]
            for k in range(d):
                g_u[j, k] += g * uq[i, k]
    co = co_in + co_out

    total = (lam_ce / n_s) * (-ce) + lam_ma * ma - (lam_co / n_q) * co

    for j in range(n):
        scale = eta[j] / radii[j]
        for k in range(d):
            g_c[j, k] = scale * (g_u[j, k] - g_eta_acc[j] * c_hat[j, k])

    return (ce, ma, ma_in, ma_out, co, co_in, co_out, total, clamps,
            g_c, np.zeros(n), np.zeros(n))


def _eol_loops(us, ys, uq, c, eta, delta, lam_ce, lam_ma, lam_co, b, orient_sign):
    n, d = c.shape
    n_s = us.shape[0]
    n_q = uq.shape[0]
    floor = PROB_FLOOR
    clamps = 0

    radii = np.empty(n)
    c_hat = np.empty((n, d))
    for j in range(n):
        acc = 0.0
        for k in range(d):
            acc += c[j, k] * c[j, k]
        radii[j] = np.sqrt(acc)
        for k in range(d):
            c_hat[j, k] = c[j, k] / radii[j]

    g_eta = np.zeros(n)   # sum_i G_ij * A_ij; doubles as the prototype-fold weight
    g_delta = np.zeros(n)
    g_u = np.zeros((n, d))

    ce = 0.0
    a_row = np.empty(n)
    l_row = np.empty(n)
    p_row = np.empty(n)
    for i in range(n_s):
        mx = -1e300
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += us[i, k] * c_hat[j, k]
            a_row[j] = acc
            l_row[j] = eta[j] * acc + delta[j]
            if l_row[j] > mx:
                mx = l_row[j]
        z = 0.0
        for j in range(n):
            p_row[j] = np.exp(l_row[j] - mx)
            z += p_row[j]
        for j in range(n):
            p_row[j] /= z
        picked = p_row[ys[i]]
        if picked < floor:
            clamps += 1
            picked = floor
        ce += np.log(picked)
        for j in range(n):
            g = p_row[j]
            if j == ys[i]:
                g -= 1.0
            g *= lam_ce / n_s
            g_delta[j] += g
            g_eta[j] += g * a_row[j]
            for k in range(d):
                g_u[j, k] += g * us[i, k]

    # query rows, pass 1: softmax, inlier probability, marginals
    s = np.empty((n_q, n))
    a_q = np.empty((n_q, n))
    p_in = np.empty(n_q)
    log_b = np.log(b)
    log_n = np.log(n)
    for i in range(n_q):
        mx = -1e300
        for j in range(n):
            acc = 0.0
            for k in range(d):
                acc += uq[i, k] * c_hat[j, k]
            a_q[i, j] = acc
            l_row[j] = eta[j] * acc + delta[j]
            if l_row[j] > mx:
                mx = l_row[j]
        z = 0.0
        for j in range(n):
            s[i, j] = np.exp(l_row[j] - mx)
            z += s[i, j]
        for j in range(n):
            s[i, j] /= z
        lse = mx + np.log(z)
        arg = orient_sign * (lse - log_n) - log_b
        if arg >= 0.0:
            p_in[i] = 1.0 / (1.0 + np.exp(-arg))
        else:
            e = np.exp(arg)
            p_in[i] = e / (1.0 + e)

    phat = np.zeros(n)
    phat_out = 0.0
    for i in range(n_q):
        for j in range(n):
            phat[j] += s[i, j] * p_in[i]
        phat_out += 1.0 - p_in[i]
    phat_out /= n_q

    w_in = n / (1.0 - b)
    w_out = 1.0 / b
    log_phat = np.empty(n)
    ma_in = 0.0
    for j in range(n):
        phat[j] /= n_q
        v = phat[j]
        if v < floor:
            clamps += 1
            v = floor
        log_phat[j] = np.log(v)
        ma_in += phat[j] * log_phat[j]
    ma_in *= w_in
    v = phat_out
    if v < floor:
        clamps += 1
        v = floor
    log_phat_out = np.log(v)
    ma_out = w_out * phat_out * log_phat_out
    ma = ma_in + ma_out

    beta = np.empty(n)
    for j in range(n):
        beta[j] = (w_in / n_q) * (log_phat[j] + 1.0)
    gamma = -(w_out / n_q) * (log_phat_out + 1.0)
    lam_ma_eff = lam_ma / (n + 1)

    # query rows, pass 2: conditional term and gradient fold
    co = 0.0
    d_row = np.empty(n)
    for i in range(n_q):
        beta_bar = 0.0
        d_bar = 0.0
        for j in range(n):
            v = s[i, j] * p_in[i]
            if v < floor:
                clamps += 1
                v = floor
            log_pij = np.log(v)
            co += s[i, j] * p_in[i] * log_pij
            d_row[j] = log_pij + 1.0
            beta_bar += beta[j] * s[i, j]
            d_bar += d_row[j] * s[i, j]
        slope = p_in[i] * (1.0 - p_in[i])
        for j in range(n):
            d_ma = (p_in[i] * s[i, j] * (beta[j] - beta_bar)
                    + orient_sign * slope * (beta_bar + gamma) * s[i, j])
            d_co = (p_in[i] * s[i, j] * (d_row[j] - d_bar)
                    + orient_sign * slope * d_bar * s[i, j])
            g = lam_ma_eff * d_ma - (lam_co / n_q) * d_co
            g_delta[j] += g
            g_eta[j] += g * a_q[i, j]
            for k in range(d):
                g_u[j, k] += g * uq[i, k]

    total = (lam_ce / n_s) * (-ce) + lam_ma_eff * ma - (lam_co / n_q) * co

    g_c = np.empty((n, d))
    for j in range(n):
        scale = eta[j] / radii[j]
        for k in range(d):
            g_c[j, k] = scale * (g_u[j, k] - g_eta[j] * c_hat[j, k])

    return (ce, ma, ma_in, ma_out, co, co, 0.0, total, clamps,
            g_c, g_eta, g_delta)


def _numba_enabled() -> bool:
    if os.environ.get("OSFSL_NO_NUMBA"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


if _numba_enabled():
    from numba import njit

    ostim_loss_grad = njit(cache=True)(_ostim_loops)
    eol_loss_grad = njit(cache=True)(_eol_loops)
    BACKEND = "numba"
else:
    ostim_loss_grad = ostim_loss_grad_numpy
    eol_loss_grad = eol_loss_grad_numpy
    BACKEND = "numpy"


def active_backend() -> str:
    return BACKEND
