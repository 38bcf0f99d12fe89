"""Pure-numpy kernels: vectorized over the batch, python loop over time.

Shared conventions (both backends):

- ``tokens`` is (B, T) int32, right-padded; padding indexes row 0 of the
  embedding table but is masked out of both loss and gradients.
- ``lengths`` is (B,) int64 counting real tokens (START ... STOP inclusive),
  so sequence b contributes ``lengths[b] - 1`` prediction steps.
- The recurrent pre-activation for row b at step t is
  ``xh @ W + (xh @ L[b]) @ R[b] + bias[b]`` with ``xh = [x_t, h_{t-1}]``.
  ``L`` (B, e+h, r) and ``R`` (B, r, 3h) hold the per-user low-rank weight
  adaptation; ``bias`` (B, 3h) holds the per-user effective bias. Passing
  r = 0 and a broadcast bias recovers the shared unadapted cell.
- Gate blocks are ordered (input, output, candidate); the forget gate is
  coupled as 1 - input. Each block is layer-normalized before its
  nonlinearity with per-block gain/bias rows from ``ln_gain``/``ln_bias``
  (both (3, h)).
"""

from __future__ import annotations

import numpy as np


def _ln_forward(a, gain, bias, eps):
    """Normalize rows of ``a`` (B, h); returns (out, xhat, inv_std)."""
    mu = a.mean(axis=1, keepdims=True)
    d = a - mu
    var = (d * d).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    return gain * xhat + bias, xhat, inv


def _ln_backward(dn, xhat, inv, gain):
    """Gradient through layer norm; returns (da, dgain, dbias)."""
    dgain = (dn * xhat).sum(axis=0)
    dbias = dn.sum(axis=0)
    dxhat = dn * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2), dgain, dbias


def cell_batch(xh, W_eff, b_eff, ln_gain, ln_bias, c_prev, eps):
    """One coupled-gate LN-LSTM step with a dense shared weight matrix.

    Used on decode paths where the adapted matrix is materialized once per
    query and reused for every hypothesis. Returns (h, c).
    """
    h = ln_gain.shape[1]
    raw = xh @ W_eff + b_eff
    n_i, _, _ = _ln_forward(raw[:, :h], ln_gain[0], ln_bias[0], eps)
    n_o, _, _ = _ln_forward(raw[:, h : 2 * h], ln_gain[1], ln_bias[1], eps)
    n_g, _, _ = _ln_forward(raw[:, 2 * h :], ln_gain[2], ln_bias[2], eps)
    i = _sigmoid(n_i)
    o = _sigmoid(n_o)
    g = np.tanh(n_g)
    c = (1.0 - i) * c_prev + i * g
    return o * np.tanh(c), c


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _log_softmax_nll(logits, targets):
    """Per-row NLL and softmax probabilities for ``logits`` (B, V)."""
    m = logits.max(axis=1, keepdims=True)
    z = np.exp(logits - m)
    s = z.sum(axis=1, keepdims=True)
    probs = z / s
    lse = (m + np.log(s))[:, 0]
    rows = np.arange(logits.shape[0])
    return lse - logits[rows, targets], probs


def seq_nll(tokens, lengths, E, W, L, R, bias, ln_gain, ln_bias, P, p_bias, eps):
    """Summed negative log-likelihood per sequence.

    Returns (nll (B,), steps (B,)) where steps[b] = lengths[b] - 1.
    """
    B, T = tokens.shape
    e = E.shape[1]
    h = ln_gain.shape[1]
    r = L.shape[2]
    dtype = E.dtype
    steps = lengths - 1
    hs = np.zeros((B, h), dtype=dtype)
    c = np.zeros((B, h), dtype=dtype)
    nll = np.zeros(B, dtype=np.float64)
    for t in range(T - 1):
        active = t < steps
        if not active.any():
            break
        xh = np.concatenate([E[tokens[:, t]], hs], axis=1)
        raw = xh @ W + bias
        if r > 0:
            p = np.einsum("bj,bjr->br", xh, L)
            raw = raw + np.einsum("br,brn->bn", p, R)
        hs, c = _raw_to_state(raw, ln_gain, ln_bias, c, eps)
        logits = hs @ P + p_bias
        step_nll, _ = _log_softmax_nll(logits, tokens[:, t + 1])
        nll += np.where(active, step_nll, 0.0)
    return nll, steps


def _raw_to_state(raw, ln_gain, ln_bias, c_prev, eps):
    h = ln_gain.shape[1]
    n_i, _, _ = _ln_forward(raw[:, :h], ln_gain[0], ln_bias[0], eps)
    n_o, _, _ = _ln_forward(raw[:, h : 2 * h], ln_gain[1], ln_bias[1], eps)
    n_g, _, _ = _ln_forward(raw[:, 2 * h :], ln_gain[2], ln_bias[2], eps)
    i = _sigmoid(n_i)
    o = _sigmoid(n_o)
    g = np.tanh(n_g)
    c = (1.0 - i) * c_prev + i * g
    return o * np.tanh(c), c


def seq_grads(tokens, lengths, E, W, L, R, bias, ln_gain, ln_bias, P, p_bias, eps):
    """Forward plus full backward pass; gradients of the summed NLL.

    Returns (nll (B,), dE, dW, dL, dR, dbias, dln_gain, dln_bias, dP,
    dp_bias). dL, dR, dbias are per-sequence (same leading B axis as their
    inputs); the caller contracts them against the adaptation tensors.
    """
    B, T = tokens.shape
    e = E.shape[1]
    h = ln_gain.shape[1]
    r = L.shape[2]
    dtype = E.dtype
    S = T - 1
    steps = lengths - 1

    XH = np.zeros((S, B, e + h), dtype=dtype)
    PF = np.zeros((S, B, r), dtype=dtype)
    XHAT = np.zeros((S, B, 3 * h), dtype=dtype)
    INV = np.zeros((S, B, 3), dtype=dtype)
    GI = np.zeros((S, B, h), dtype=dtype)
    GO = np.zeros((S, B, h), dtype=dtype)
    GG = np.zeros((S, B, h), dtype=dtype)
    CPREV = np.zeros((S, B, h), dtype=dtype)
    TH = np.zeros((S, B, h), dtype=dtype)
    HS = np.zeros((S + 1, B, h), dtype=dtype)
    PROBS = np.zeros((S, B, p_bias.shape[0]), dtype=dtype)

    c = np.zeros((B, h), dtype=dtype)
    nll = np.zeros(B, dtype=np.float64)
    n_steps = int(steps.max()) if B else 0
    for t in range(n_steps):
        active = t < steps
        xh = np.concatenate([E[tokens[:, t]], HS[t]], axis=1)
        XH[t] = xh
        raw = xh @ W + bias
        if r > 0:
            PF[t] = np.einsum("bj,bjr->br", xh, L)
            raw = raw + np.einsum("br,brn->bn", PF[t], R)
        for k in range(3):
            blk = raw[:, k * h : (k + 1) * h]
            n, xhat, inv = _ln_forward(blk, ln_gain[k], ln_bias[k], eps)
            XHAT[t][:, k * h : (k + 1) * h] = xhat
            INV[t][:, k] = inv[:, 0]
            if k == 0:
                GI[t] = _sigmoid(n)
            elif k == 1:
                GO[t] = _sigmoid(n)
            else:
                GG[t] = np.tanh(n)
        CPREV[t] = c
        c = (1.0 - GI[t]) * c + GI[t] * GG[t]
        TH[t] = np.tanh(c)
        HS[t + 1] = GO[t] * TH[t]
        logits = HS[t + 1] @ P + p_bias
        step_nll, probs = _log_softmax_nll(logits, tokens[:, t + 1])
        PROBS[t] = probs
        nll += np.where(active, step_nll, 0.0)

    dE = np.zeros_like(E)
    dW = np.zeros_like(W)
    dL = np.zeros_like(L)
    dR = np.zeros_like(R)
    dbias = np.zeros_like(bias)
    dln_gain = np.zeros_like(ln_gain)
    dln_bias = np.zeros_like(ln_bias)
    dP = np.zeros_like(P)
    dp_bias = np.zeros_like(p_bias)

    dh_next = np.zeros((B, h), dtype=dtype)
    dc_next = np.zeros((B, h), dtype=dtype)
    rows = np.arange(B)
    for t in range(n_steps - 1, -1, -1):
        act = (t < steps).astype(dtype)[:, None]
        dlogits = PROBS[t].copy()
        dlogits[rows, tokens[:, t + 1]] -= 1.0
        dlogits *= act
        dP += HS[t + 1].T @ dlogits
        dp_bias += dlogits.sum(axis=0)
        dh = dlogits @ P.T + dh_next

        do = dh * TH[t]
        dc = dc_next + dh * GO[t] * (1.0 - TH[t] * TH[t])
        di = dc * (GG[t] - CPREV[t])
        dg = dc * GI[t]
        dc_next = dc * (1.0 - GI[t])

        dn_i = di * GI[t] * (1.0 - GI[t])
        dn_o = do * GO[t] * (1.0 - GO[t])
        dn_g = dg * (1.0 - GG[t] * GG[t])

        draw = np.empty((B, 3 * h), dtype=dtype)
        for k, dn in enumerate((dn_i, dn_o, dn_g)):
            xhat = XHAT[t][:, k * h : (k + 1) * h]
            da, dgain_k, dbias_k = _ln_backward(dn, xhat, INV[t][:, k : k + 1], ln_gain[k])
            draw[:, k * h : (k + 1) * h] = da
            dln_gain[k] += dgain_k
            dln_bias[k] += dbias_k

        dW += XH[t].T @ draw
        dbias += draw
        dxh = draw @ W.T
        if r > 0:
            dR += np.einsum("br,bn->brn", PF[t], draw)
            dpf = np.einsum("bn,brn->br", draw, R)
            dL += np.einsum("bj,br->bjr", XH[t], dpf)
            dxh = dxh + np.einsum("br,bjr->bj", dpf, L)
        np.add.at(dE, tokens[:, t], dxh[:, :e])
        dh_next = dxh[:, e:]

    return nll, dE, dW, dL, dR, dbias, dln_gain, dln_bias, dP, dp_bias
