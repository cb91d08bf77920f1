import numpy as np
import pytest

from lbtshare.kernels import (
    _lstm_backward_impl,
    _lstm_forward_impl,
    backend_name,
    lstm_forward,
)


def _random_lstm(rng, T=4, B=3, I=5, H=6):
    x = rng.standard_normal((T, B, I))
    wx = rng.standard_normal((I, 4 * H)) * 0.3
    wh = rng.standard_normal((H, 4 * H)) * 0.3
    b = rng.standard_normal(4 * H) * 0.1
    h0 = rng.standard_normal((B, H)) * 0.1
    c0 = rng.standard_normal((B, H)) * 0.1
    return x, wx, wh, b, h0, c0


def _reference_forward(x, wx, wh, b, h0, c0):
    """Independent step-by-step forward using scalar-friendly numpy ops."""

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    T, B, _ = x.shape
    H = h0.shape[1]
    h, c = h0.copy(), c0.copy()
    hs = []
    for t in range(T):
        z = x[t] @ wx + h @ wh + b
        i, f, g, o = z[:, :H], z[:, H : 2 * H], z[:, 2 * H : 3 * H], z[:, 3 * H :]
        c = sig(f) * c + sig(i) * np.tanh(g)
        h = sig(o) * np.tanh(c)
        hs.append(h)
    return np.stack(hs), c


def test_forward_matches_reference():
    rng = np.random.default_rng(0)
    x, wx, wh, b, h0, c0 = _random_lstm(rng)
    h_seq, c_seq, gates = lstm_forward(x, wx, wh, b, h0, c0)
    h_ref, c_ref = _reference_forward(x, wx, wh, b, h0, c0)
    assert np.allclose(h_seq, h_ref, atol=1e-12)
    assert np.allclose(c_seq[-1], c_ref, atol=1e-12)
    assert gates.shape == (x.shape[0], x.shape[1], 4 * h0.shape[1])


def test_jit_and_numpy_paths_agree():
    rng = np.random.default_rng(1)
    x, wx, wh, b, h0, c0 = _random_lstm(rng)
    ha, ca, ga = lstm_forward(x, wx, wh, b, h0, c0)
    hb, cb, gb = _lstm_forward_impl(x, wx, wh, b, h0, c0)
    assert np.allclose(ha, hb, atol=1e-14)
    assert np.allclose(ca, cb, atol=1e-14)
    assert np.allclose(ga, gb, atol=1e-14)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    x, wx, wh, b, h0, c0 = _random_lstm(rng, T=3, B=2, I=3, H=4)
    dh_last = rng.standard_normal((2, 4))

    def loss(xx, wxx, whh, bb):
        h_seq, _, _ = _lstm_forward_impl(xx, wxx, whh, bb, h0, c0)
        return float(np.sum(h_seq[-1] * dh_last))

    h_seq, c_seq, gates = _lstm_forward_impl(x, wx, wh, b, h0, c0)
    dx, dwx, dwh, db = _lstm_backward_impl(x, wx, wh, h_seq, c_seq, gates, h0, c0, dh_last)

    eps = 1e-6
    for arr, grad, name in ((x, dx, "x"), (wx, dwx, "wx"), (wh, dwh, "wh"), (b, db, "b")):
        flat = arr.ravel()
        gflat = grad.ravel()
        idx = rng.choice(flat.size, size=min(20, flat.size), replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            up = loss(x, wx, wh, b)
            flat[k] = orig - eps
            dn = loss(x, wx, wh, b)
            flat[k] = orig
            fd = (up - dn) / (2 * eps)
            assert gflat[k] == pytest.approx(fd, rel=1e-4, abs=1e-8), name


def test_zero_length_gradient_shapes():
    rng = np.random.default_rng(3)
    x, wx, wh, b, h0, c0 = _random_lstm(rng, T=1, B=1, I=2, H=3)
    h_seq, c_seq, gates = _lstm_forward_impl(x, wx, wh, b, h0, c0)
    dh = np.ones((1, 3))
    dx, dwx, dwh, db = _lstm_backward_impl(x, wx, wh, h_seq, c_seq, gates, h0, c0, dh)
    assert dx.shape == x.shape
    assert dwx.shape == wx.shape
    assert dwh.shape == wh.shape
    assert db.shape == b.shape


def test_backend_name_is_valid():
    assert backend_name() in ("numba", "numpy")
