"""Numba-jitted kernels: per-sequence loops, shared math with numpy_backend.

See ``numpy_backend`` for the argument conventions. These kernels process one
sequence at a time, which removes per-step interpreter overhead and the
padding masks. Large contractions (recurrent matmul, output projection) go
through np.dot so BLAS still carries the heavy lifting; gate math, layer
norm, and the low-rank adaptation stay as explicit loops. Accumulation order
is fixed, so results are deterministic run to run. fastmath stays off to
keep IEEE evaluation order.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def cell_batch(xh, W_eff, b_eff, ln_gain, ln_bias, c_prev, eps):
    B = xh.shape[0]
    h = ln_gain.shape[1]
    dt = xh.dtype
    raw = np.dot(np.ascontiguousarray(xh), np.ascontiguousarray(W_eff))
    h_out = np.empty((B, h), dtype=dt)
    c_out = np.empty((B, h), dtype=dt)
    for b in range(B):
        for k in range(3):
            base = k * h
            mu = 0.0
            for j in range(h):
                raw[b, base + j] += b_eff[base + j]
                mu += raw[b, base + j]
            mu /= h
            var = 0.0
            for j in range(h):
                d = raw[b, base + j] - mu
                var += d * d
            var /= h
            inv = 1.0 / np.sqrt(var + eps)
            for j in range(h):
                xhat = (raw[b, base + j] - mu) * inv
                n_val = ln_gain[k, j] * xhat + ln_bias[k, j]
                if k == 0:
                    gi = 1.0 / (1.0 + np.exp(-n_val))
                    c_out[b, j] = (1.0 - gi) * c_prev[b, j]
                    h_out[b, j] = gi  # stash input gate until candidate block
                elif k == 1:
                    raw[b, base + j] = 1.0 / (1.0 + np.exp(-n_val))  # output gate
                else:
                    gg = np.tanh(n_val)
                    c_out[b, j] += h_out[b, j] * gg
        for j in range(h):
            h_out[b, j] = raw[b, h + j] * np.tanh(c_out[b, j])
    return h_out, c_out


@njit(cache=True)
def _gates_from_raw(raw, ln_gain, ln_bias, eps, gi, go, gg, xhat_out, invs_out):
    """Layer norm + nonlinearities for one step's pre-activation vector."""
    h = ln_gain.shape[1]
    for k in range(3):
        base = k * h
        mu = 0.0
        for j in range(h):
            mu += raw[base + j]
        mu /= h
        var = 0.0
        for j in range(h):
            d = raw[base + j] - mu
            var += d * d
        var /= h
        inv = 1.0 / np.sqrt(var + eps)
        invs_out[k] = inv
        for j in range(h):
            xhat = (raw[base + j] - mu) * inv
            xhat_out[base + j] = xhat
            n_val = ln_gain[k, j] * xhat + ln_bias[k, j]
            if k == 0:
                gi[j] = 1.0 / (1.0 + np.exp(-n_val))
            elif k == 1:
                go[j] = 1.0 / (1.0 + np.exp(-n_val))
            else:
                gg[j] = np.tanh(n_val)


@njit(cache=True)
def seq_nll(tokens, lengths, E, W, L, R, bias, ln_gain, ln_bias, P, p_bias, eps):
    B, T = tokens.shape
    e = E.shape[1]
    h = ln_gain.shape[1]
    V = p_bias.shape[0]
    r = L.shape[2]
    eh = e + h
    g3 = 3 * h
    dt = E.dtype

    nll = np.zeros(B, dtype=np.float64)
    steps = np.empty(B, dtype=np.int64)
    xh = np.empty(eh, dtype=dt)
    gi = np.empty(h, dtype=dt)
    go = np.empty(h, dtype=dt)
    gg = np.empty(h, dtype=dt)
    xhat = np.empty(g3, dtype=dt)
    invs = np.empty(3, dtype=dt)
    hstate = np.empty(h, dtype=dt)
    c = np.empty(h, dtype=dt)
    p = np.empty(r, dtype=dt)

    for b in range(B):
        n_steps = lengths[b] - 1
        steps[b] = n_steps
        for j in range(h):
            hstate[j] = 0.0
            c[j] = 0.0
        for t in range(n_steps):
            tok = tokens[b, t]
            for j in range(e):
                xh[j] = E[tok, j]
            for j in range(h):
                xh[e + j] = hstate[j]
            raw = np.dot(xh, W)
            for n in range(g3):
                raw[n] += bias[b, n]
            if r > 0:
                for q in range(r):
                    p[q] = 0.0
                for j in range(eh):
                    xj = xh[j]
                    for q in range(r):
                        p[q] += xj * L[b, j, q]
                for q in range(r):
                    pq = p[q]
                    for n in range(g3):
                        raw[n] += pq * R[b, q, n]
            _gates_from_raw(raw, ln_gain, ln_bias, eps, gi, go, gg, xhat, invs)
            for j in range(h):
                c[j] = (1.0 - gi[j]) * c[j] + gi[j] * gg[j]
                hstate[j] = go[j] * np.tanh(c[j])
            logits = np.dot(hstate, P)
            mx = logits[0] + p_bias[0]
            for v in range(V):
                logits[v] += p_bias[v]
                if logits[v] > mx:
                    mx = logits[v]
            s = 0.0
            for v in range(V):
                s += np.exp(logits[v] - mx)
            nll[b] += (mx + np.log(s)) - logits[tokens[b, t + 1]]
    return nll, steps


@njit(cache=True)
def seq_grads(tokens, lengths, E, W, L, R, bias, ln_gain, ln_bias, P, p_bias, eps):
    B, T = tokens.shape
    e = E.shape[1]
    h = ln_gain.shape[1]
    V = p_bias.shape[0]
    r = L.shape[2]
    eh = e + h
    g3 = 3 * h
    dt = E.dtype

    nll = np.zeros(B, dtype=np.float64)
    dE = np.zeros_like(E)
    dW = np.zeros_like(W)
    dL = np.zeros_like(L)
    dR = np.zeros_like(R)
    dbias = np.zeros_like(bias)
    dln_gain = np.zeros_like(ln_gain)
    dln_bias = np.zeros_like(ln_bias)
    dP = np.zeros_like(P)
    dp_bias = np.zeros_like(p_bias)

    for b in range(B):
        n_steps = lengths[b] - 1
        XH = np.empty((n_steps, eh), dtype=dt)
        PF = np.empty((n_steps, r), dtype=dt)
        XHAT = np.empty((n_steps, g3), dtype=dt)
        INVS = np.empty((n_steps, 3), dtype=dt)
        GI = np.empty((n_steps, h), dtype=dt)
        GO = np.empty((n_steps, h), dtype=dt)
        GG = np.empty((n_steps, h), dtype=dt)
        CPREV = np.empty((n_steps, h), dtype=dt)
        TH = np.empty((n_steps, h), dtype=dt)
        HS = np.zeros((n_steps + 1, h), dtype=dt)
        PROBS = np.empty((n_steps, V), dtype=dt)

        c = np.zeros(h, dtype=dt)
        for t in range(n_steps):
            tok = tokens[b, t]
            for j in range(e):
                XH[t, j] = E[tok, j]
            for j in range(h):
                XH[t, e + j] = HS[t, j]
            raw = np.dot(XH[t], W)
            for n in range(g3):
                raw[n] += bias[b, n]
            if r > 0:
                for q in range(r):
                    PF[t, q] = 0.0
                for j in range(eh):
                    xj = XH[t, j]
                    for q in range(r):
                        PF[t, q] += xj * L[b, j, q]
                for q in range(r):
                    pq = PF[t, q]
                    for n in range(g3):
                        raw[n] += pq * R[b, q, n]
            _gates_from_raw(
                raw, ln_gain, ln_bias, eps, GI[t], GO[t], GG[t], XHAT[t], INVS[t]
            )
            for j in range(h):
                CPREV[t, j] = c[j]
                c[j] = (1.0 - GI[t, j]) * c[j] + GI[t, j] * GG[t, j]
                TH[t, j] = np.tanh(c[j])
                HS[t + 1, j] = GO[t, j] * TH[t, j]
            logits = np.dot(HS[t + 1], P)
            mx = logits[0] + p_bias[0]
            for v in range(V):
                logits[v] += p_bias[v]
                if logits[v] > mx:
                    mx = logits[v]
            s = 0.0
            for v in range(V):
                s += np.exp(logits[v] - mx)
            lse = mx + np.log(s)
            nll[b] += lse - logits[tokens[b, t + 1]]
            for v in range(V):
                PROBS[t, v] = np.exp(logits[v] - lse)

        # backward
        dh = np.zeros(h, dtype=dt)
        dc = np.zeros(h, dtype=dt)
        dlogits = np.empty(V, dtype=dt)
        draw = np.empty(g3, dtype=dt)
        dn = np.empty(h, dtype=dt)
        dpf = np.empty(r, dtype=dt)
        for t in range(n_steps - 1, -1, -1):
            for v in range(V):
                dlogits[v] = PROBS[t, v]
            dlogits[tokens[b, t + 1]] -= 1.0
            for v in range(V):
                dp_bias[v] += dlogits[v]
            for j in range(h):
                hj = HS[t + 1, j]
                for v in range(V):
                    dP[j, v] += hj * dlogits[v]
            dh += np.dot(P, dlogits)
            for k in range(2, -1, -1):
                base = k * h
                if k == 0:
                    for j in range(h):
                        dcj = dc[j] + dh[j] * GO[t, j] * (1.0 - TH[t, j] * TH[t, j])
                        di = dcj * (GG[t, j] - CPREV[t, j])
                        dn[j] = di * GI[t, j] * (1.0 - GI[t, j])
                elif k == 1:
                    for j in range(h):
                        do = dh[j] * TH[t, j]
                        dn[j] = do * GO[t, j] * (1.0 - GO[t, j])
                else:
                    for j in range(h):
                        dcj = dc[j] + dh[j] * GO[t, j] * (1.0 - TH[t, j] * TH[t, j])
                        dg = dcj * GI[t, j]
                        dn[j] = dg * (1.0 - GG[t, j] * GG[t, j])
                m1 = 0.0
                m2 = 0.0
                for j in range(h):
                    dln_gain[k, j] += dn[j] * XHAT[t, base + j]
                    dln_bias[k, j] += dn[j]
                    dn[j] *= ln_gain[k, j]
                    m1 += dn[j]
                    m2 += dn[j] * XHAT[t, base + j]
                m1 /= h
                m2 /= h
                inv = INVS[t, k]
                for j in range(h):
                    draw[base + j] = inv * (dn[j] - m1 - XHAT[t, base + j] * m2)
            # cell-state gradient flowing to step t-1
            for j in range(h):
                dcj = dc[j] + dh[j] * GO[t, j] * (1.0 - TH[t, j] * TH[t, j])
                dc[j] = dcj * (1.0 - GI[t, j])
            for j in range(eh):
                xj = XH[t, j]
                for n in range(g3):
                    dW[j, n] += xj * draw[n]
            dxh = np.dot(W, draw)
            for n in range(g3):
                dbias[b, n] += draw[n]
            if r > 0:
                for q in range(r):
                    acc = 0.0
                    for n in range(g3):
                        dR[b, q, n] += PF[t, q] * draw[n]
                        acc += R[b, q, n] * draw[n]
                    dpf[q] = acc
                for j in range(eh):
                    xj = XH[t, j]
                    acc = 0.0
                    for q in range(r):
                        dL[b, j, q] += xj * dpf[q]
                        acc += L[b, j, q] * dpf[q]
                    dxh[j] += acc
            for j in range(e):
                dE[tokens[b, t], j] += dxh[j]
            for j in range(h):
                dh[j] = dxh[e + j]

    return nll, dE, dW, dL, dR, dbias, dln_gain, dln_bias, dP, dp_bias
