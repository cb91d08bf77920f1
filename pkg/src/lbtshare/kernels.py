"""Hot numeric kernels: the unrolled LSTM recurrence, forward and backward.

The time loop of the recurrent Q-networks dominates training and episode
generation, so both directions are compiled with numba. Set the environment
variable ``LBTSHARE_NUMBA=0`` to force the pure-numpy path (same source, no
JIT); ``benchmarks/bench_kernels.py`` compares the two.

Gate layout along the last axis is [input, forget, cell, output].
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("LBTSHARE_NUMBA", "1") not in ("0", "false", "no")


def _lstm_forward_impl(x, wx, wh, b, h0, c0):
    """Run the LSTM over a (T, B, I) sequence.

    Returns (h_seq, c_seq, gates) with shapes (T, B, H), (T, B, H) and
    (T, B, 4H); gates hold post-activation values for the backward pass.
    """
    T, B, _ = x.shape
    H = h0.shape[1]
    h_seq = np.empty((T, B, H))
    c_seq = np.empty((T, B, H))
    gates = np.empty((T, B, 4 * H))
    h = h0.copy()
    c = c0.copy()
    for t in range(T):
        z = np.dot(x[t], wx) + np.dot(h, wh) + b
        gi = 1.0 / (1.0 + np.exp(-z[:, 0 * H : 1 * H]))
        gf = 1.0 / (1.0 + np.exp(-z[:, 1 * H : 2 * H]))
        gg = np.tanh(z[:, 2 * H : 3 * H])
        go = 1.0 / (1.0 + np.exp(-z[:, 3 * H : 4 * H]))
        c = gf * c + gi * gg
        h = go * np.tanh(c)
        gates[t, :, 0 * H : 1 * H] = gi
        gates[t, :, 1 * H : 2 * H] = gf
        gates[t, :, 2 * H : 3 * H] = gg
        gates[t, :, 3 * H : 4 * H] = go
        h_seq[t] = h
        c_seq[t] = c
    return h_seq, c_seq, gates


def _lstm_backward_impl(x, wx, wh, h_seq, c_seq, gates, h0, c0, dh_last):
    """Backprop through the unrolled recurrence.

    ``dh_last`` is the gradient w.r.t. the final hidden state (only the last
    step feeds the network heads). Returns (dx, dwx, dwh, db).
    """
    T, B, I = x.shape
    H = h0.shape[1]
    dx = np.zeros((T, B, I))
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * H)
    dh = dh_last.copy()
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        gi = gates[t, :, 0 * H : 1 * H]
        gf = gates[t, :, 1 * H : 2 * H]
        gg = gates[t, :, 2 * H : 3 * H]
        go = gates[t, :, 3 * H : 4 * H]
        c_t = c_seq[t]
        c_prev = c_seq[t - 1] if t > 0 else c0
        h_prev = h_seq[t - 1] if t > 0 else h0
        tc = np.tanh(c_t)
        do = dh * tc
        dc = dc + dh * go * (1.0 - tc * tc)
        di = dc * gg
        df = dc * c_prev
        dg = dc * gi
        dz = np.empty((B, 4 * H))
        dz[:, 0 * H : 1 * H] = di * gi * (1.0 - gi)
        dz[:, 1 * H : 2 * H] = df * gf * (1.0 - gf)
        dz[:, 2 * H : 3 * H] = dg * (1.0 - gg * gg)
        dz[:, 3 * H : 4 * H] = do * go * (1.0 - go)
        dwx += np.dot(x[t].T, dz)
        dwh += np.dot(h_prev.T, dz)
        db += dz.sum(axis=0)
        dx[t] = np.dot(dz, wx.T)
        dh = np.dot(dz, wh.T)
        dc = dc * gf
    return dx, dwx, dwh, db


if USE_NUMBA:
    from numba import njit

    lstm_forward = njit(cache=True)(_lstm_forward_impl)
    lstm_backward = njit(cache=True)(_lstm_backward_impl)
else:
    lstm_forward = _lstm_forward_impl
    lstm_backward = _lstm_backward_impl


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
