"""Recurrent dueling Q-network with hand-rolled reverse-mode gradients.

Architecture: two tanh dense layers applied per time step, an LSTM across
steps, and dueling value/advantage heads fed by the final hidden state only.
EOS networks reuse the same two-action architecture; callers read the Q value
of action 0 (the EOS action is fixed).
"""

from dataclasses import dataclass

import numpy as np

from lbtshare import kernels

N_ACTIONS = 2

# How V and A combine into Q. "mean" is the identifiable aggregator
# Q = V + A - mean(A); "scaled" is Q = V - A/|A| (kept for fidelity).
AGGREGATORS = ("mean", "scaled")


def init_params(input_dim, dense_dim, hidden_dim, rng):
    """Uniform fan-in initialization of all parameter blocks."""

    def u(fan_in, shape):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    return {
        "w1": u(input_dim, (input_dim, dense_dim)),
        "b1": np.zeros(dense_dim),
        "w2": u(dense_dim, (dense_dim, dense_dim)),
        "b2": np.zeros(dense_dim),
        "wx": u(dense_dim, (dense_dim, 4 * hidden_dim)),
        "wh": u(hidden_dim, (hidden_dim, 4 * hidden_dim)),
        "bl": np.zeros(4 * hidden_dim),
        "wv": u(hidden_dim, (hidden_dim, 1)),
        "bv": np.zeros(1),
        "wa": u(hidden_dim, (hidden_dim, N_ACTIONS)),
        "ba": np.zeros(N_ACTIONS),
    }


def dueling_aggregate(v, adv, mode="mean"):
    """Combine a (B, 1) value and (B, |A|) advantages into per-action Q."""
    if mode == "mean":
        return v + adv - adv.mean(axis=1, keepdims=True)
    if mode == "scaled":
        return v - adv / adv.shape[1]
    raise ValueError(f"unknown aggregator {mode!r}")


@dataclass
class ForwardCache:
    obs_flat: np.ndarray
    x: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    h_seq: np.ndarray
    c_seq: np.ndarray
    gates: np.ndarray
    h0: np.ndarray
    c0: np.ndarray
    adv: np.ndarray


class QNet:
    """One EOS or CON network: parameters plus forward/backward passes."""

    def __init__(self, input_dim, dense_dim, hidden_dim, rng=None, aggregator="mean", params=None):
        if aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        self.input_dim = input_dim
        self.dense_dim = dense_dim
        self.hidden_dim = hidden_dim
        self.aggregator = aggregator
        if params is not None:
            self.params = params
        else:
            self.params = init_params(input_dim, dense_dim, hidden_dim, rng or np.random.default_rng())

    def zero_carry(self, batch):
        h = np.zeros((batch, self.hidden_dim))
        return h, h.copy()

    def forward(self, obs_seq, carry=None, want_cache=False):
        """Q values for a (B, T, input_dim) observation sequence.

        Returns (q, (h, c)) and optionally the cache needed by ``backward``.
        Heads are evaluated on the final step only.
        """
        obs_seq = np.ascontiguousarray(obs_seq, dtype=np.float64)
        if obs_seq.ndim != 3 or obs_seq.shape[2] != self.input_dim:
            raise ValueError(
                f"expected (B, T, {self.input_dim}) observations, got {obs_seq.shape}"
            )
        B, T, D = obs_seq.shape
        p = self.params
        flat = obs_seq.reshape(B * T, D)
        a1 = np.tanh(flat @ p["w1"] + p["b1"])
        a2 = np.tanh(a1 @ p["w2"] + p["b2"])
        x = np.ascontiguousarray(a2.reshape(B, T, self.dense_dim).transpose(1, 0, 2))
        if carry is None:
            h0, c0 = self.zero_carry(B)
        else:
            h0, c0 = carry
            h0 = np.ascontiguousarray(h0, dtype=np.float64)
            c0 = np.ascontiguousarray(c0, dtype=np.float64)
        h_seq, c_seq, gates = kernels.lstm_forward(x, p["wx"], p["wh"], p["bl"], h0, c0)
        h_last = h_seq[-1]
        v = h_last @ p["wv"] + p["bv"]
        adv = h_last @ p["wa"] + p["ba"]
        q = dueling_aggregate(v, adv, self.aggregator)
        new_carry = (h_seq[-1].copy(), c_seq[-1].copy())
        if not want_cache:
            return q, new_carry
        cache = ForwardCache(flat, x, a1, a2, h_seq, c_seq, gates, h0, c0, adv)
        return q, new_carry, cache

    def backward(self, cache, dq):
        """Gradients of all parameter blocks given dLoss/dQ of shape (B, |A|)."""
        p = self.params
        T, B, _ = cache.x.shape
        dq = np.asarray(dq, dtype=np.float64)
        dv = dq.sum(axis=1, keepdims=True)
        if self.aggregator == "mean":
            dadv = dq - dq.mean(axis=1, keepdims=True)
        else:
            dadv = -dq / N_ACTIONS
        h_last = cache.h_seq[-1]
        grads = {
            "wv": h_last.T @ dv,
            "bv": dv.sum(axis=0),
            "wa": h_last.T @ dadv,
            "ba": dadv.sum(axis=0),
        }
        dh_last = dv @ p["wv"].T + dadv @ p["wa"].T
        dx, dwx, dwh, dbl = kernels.lstm_backward(
            cache.x, p["wx"], p["wh"], cache.h_seq, cache.c_seq, cache.gates,
            cache.h0, cache.c0, np.ascontiguousarray(dh_last),
        )
        grads.update({"wx": dwx, "wh": dwh, "bl": dbl})
        da2 = dx.transpose(1, 0, 2).reshape(B * T, self.dense_dim)
        dz2 = da2 * (1.0 - cache.a2**2)
        grads["w2"] = cache.a1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        da1 = dz2 @ p["w2"].T
        dz1 = da1 * (1.0 - cache.a1**2)
        grads["w1"] = cache.obs_flat.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return grads

    def clone(self):
        net = QNet(
            self.input_dim, self.dense_dim, self.hidden_dim,
            aggregator=self.aggregator,
            params={k: v.copy() for k, v in self.params.items()},
        )
        return net
