"""Slot-level contention environment.

Each slot: back-off counters are drawn, BSs sense preamble energy in counter
order, decide whether to transmit, UEs see SINR/rates, smoothed average rates
are updated and all BSs receive one common proportional-fairness reward.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from lbtshare.channel import FadingState, effective_gain, step_fading
from lbtshare.units import dbm_to_mw

EOS_DIM = 3  # <xbar, signal, interference>


@dataclass
class EnvParams:
    """Static environment parameters plus derived noise powers."""

    n_bs: int = 4
    tx_power_dbm: float = 23.0
    noise_psd_dbm_hz: float = -174.0
    bandwidth_hz: float = 2e7
    ue_noise_figure_db: float = 9.0
    bs_noise_figure_db: float = 5.0
    smoothing_b: float = 10.0
    gamma: float = 1.0 - 1e-6
    episode_len: int = 2000
    cws: int = 4
    counter_mode: str = "unique"  # "unique" | "iid"
    all_off_kappa: float = 10.0
    apply_all_off_penalty: bool = True  # applied in both reward trace and labels
    xbar_init: float = 1e-2
    drop_self_energy: bool = False  # energy vector of length N-1 instead of N
    alpha: float = 0.01
    no_fading: bool = False
    # Feed sensed energies to the networks in units of transmit power, i.e.
    # E / (P_t * sigma_gg), so observation entries stay O(1).
    energy_obs_tx_units: bool = True

    def __post_init__(self):
        if not self.smoothing_b > 1:
            raise ValueError("smoothing_b must exceed 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.cws < 1:
            raise ValueError("cws must be >= 1")
        if self.counter_mode == "unique" and self.cws < self.n_bs:
            raise ValueError("unique counters require cws >= n_bs")
        if self.counter_mode not in ("unique", "iid"):
            raise ValueError("counter_mode must be 'unique' or 'iid'")

    @property
    def sigma2_ue_dbm(self):
        return self.noise_psd_dbm_hz + 10.0 * np.log10(self.bandwidth_hz) + self.ue_noise_figure_db

    @property
    def sigma2_bs_dbm(self):
        return self.noise_psd_dbm_hz + 10.0 * np.log10(self.bandwidth_hz) + self.bs_noise_figure_db

    @property
    def tx_power_mw(self):
        return float(dbm_to_mw(self.tx_power_dbm))

    @property
    def sigma2_ue_mw(self):
        return float(dbm_to_mw(self.sigma2_ue_dbm))

    @property
    def sigma2_bs_mw(self):
        return float(dbm_to_mw(self.sigma2_bs_dbm))

    @property
    def sigma2_norm(self):
        """UE noise in transmit-power units: sigma^2 = sigma^2_UE / P_t."""
        return self.sigma2_ue_mw / self.tx_power_mw

    @property
    def energy_vec_len(self):
        return self.n_bs - 1 if self.drop_self_energy else self.n_bs

    @property
    def con_dim(self):
        return EOS_DIM + self.energy_vec_len + 1


@dataclass
class NetworkState:
    """Per-slot system state: smoothed rates and instantaneous gain matrices."""

    xbar: np.ndarray  # (N,)
    gains_ue: np.ndarray  # (N, N) effective linear, BS i -> UE j
    gains_bs: np.ndarray  # (N, N) effective linear, BS i -> BS j
    slot: int = 0
    prev_gains_ue: np.ndarray = None  # gains of the previous slot (PF input)
    norm_ue: float = 1.0  # sigma_gU
    norm_bs: float = 1.0  # sigma_gg


@dataclass
class EosObservation:
    xbar_i: float
    sig_i: float  # S_i / sigma_gU
    intf_i: float  # I_i / sigma_gU

    def to_vector(self):
        return np.array([self.xbar_i, self.sig_i, self.intf_i])


@dataclass
class ConObservation:
    eos: EosObservation
    energy: np.ndarray  # normalized, length energy_vec_len
    counter: float  # theta / (cws - 1), in [0, 1]

    def to_vector(self):
        return np.concatenate([self.eos.to_vector(), self.energy, [self.counter]])


def sinr_all(gains_ue, actions, sigma2):
    """SINR, signal and interference of every UE for one action vector.

    ``gains_ue[i, j]`` is the linear gain BS i -> UE j; sigma2 is the UE noise
    in the same (transmit-power) units as the gains.
    """
    a = np.asarray(actions, dtype=np.float64)
    g = np.asarray(gains_ue, dtype=np.float64)
    sig = np.diag(g) * a
    intf = a @ g - sig
    return sig / (sigma2 + intf), sig, intf


def sinr(j, gains_ue, actions, sigma2):
    """SINR at UE j, plus its signal and interference powers."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    s, sig, intf = sinr_all(gains_ue, actions, sigma2)
    return float(s[j]), float(sig[j]), float(intf[j])


def rate(sinr_value):
    """Shannon spectral efficiency in bits/s/Hz (bandwidth factor dropped)."""
    return np.log2(1.0 + np.asarray(sinr_value, dtype=np.float64))


def update_avg_rate(xbar_prev, r_inst, b):
    """Exponential smoothing: (1 - 1/B) xbar + (1/B) R."""
    return (1.0 - 1.0 / b) * np.asarray(xbar_prev) + (1.0 / b) * np.asarray(r_inst)


def per_ue_reward(r_inst, xbar_prev, b):
    """Per-UE telescoping reward: log((1-1/B)(1 + R / ((B-1) xbar)))."""
    xbar_prev = np.asarray(xbar_prev, dtype=np.float64)
    if np.any(xbar_prev <= 0):
        raise ValueError("xbar must be positive")
    return np.log((1.0 - 1.0 / b) * (1.0 + np.asarray(r_inst) / ((b - 1.0) * xbar_prev)))


def slot_reward(actions, rates, xbar_prev, params):
    """Common slot reward: sum of per-UE rewards, or -kappa*N if all BSs idle."""
    a = np.asarray(actions)
    if params.apply_all_off_penalty and not np.any(a):
        return -params.all_off_kappa * params.n_bs
    return float(np.sum(per_ue_reward(np.asarray(rates), xbar_prev, params.smoothing_b)))


def utility(xbar):
    """Proportional-fairness utility: sum of log average rates."""
    xbar = np.asarray(xbar, dtype=np.float64)
    if np.any(xbar <= 0):
        raise ValueError("utility requires positive average rates")
    return float(np.sum(np.log(xbar)))


def draw_counters(n, cws, mode, rng):
    """Back-off counters for all BSs: a random injection (unique) or iid."""
    if mode == "unique":
        if cws < n:
            raise ValueError("unique counters require cws >= n")
        return rng.permutation(cws)[:n]
    if mode == "iid":
        return rng.integers(0, cws, size=n)
    raise ValueError(f"unknown counter mode {mode!r}")


def sense_energy(i, counters, actions, g0_bs, h_ss_bs, params, rng=None, noise=None):
    """Raw sensed energies (mW) at BS i when its counter expires.

    Entry j is |sqrt(P_t) h'_ji a_j 1{theta_j < theta_i} + z_j|^2; only BSs
    strictly earlier in the contention queue contribute signal (counter ties
    see each other as noise), and entry i is always noise-only (h'_ii = 0).
    """
    n = params.n_bs
    if noise is None:
        s = np.sqrt(params.sigma2_bs_mw / 2.0)
        noise = rng.normal(0.0, s, size=n) + 1j * rng.normal(0.0, s, size=n)
    earlier = (np.asarray(counters) < counters[i]) & (np.asarray(actions) == 1)
    amp = np.sqrt(params.tx_power_mw * np.asarray(g0_bs)[:, i]) * np.asarray(h_ss_bs)[:, i]
    y = np.where(earlier, amp, 0.0 + 0.0j) + noise
    return np.abs(y) ** 2


def _energy_observation(i, raw_mw, norm_bs, params):
    scale = norm_bs * (params.tx_power_mw if params.energy_obs_tx_units else 1.0)
    e = raw_mw / scale
    if params.drop_self_energy:
        e = np.delete(e, i)
    return e


class Policy:
    """Decision-maker interface consumed by the episode engine.

    Decentralized policies implement ``act``; centralized ones (the PF
    scheduler) set ``is_joint`` and implement ``act_joint``, fixing all
    actions at the start of the slot from previous-slot gains.
    """

    is_joint = False

    def reset(self, n_bs, params):
        pass

    def act(self, i, con_obs, raw_energy_mw, rng):
        raise NotImplementedError

    def act_joint(self, xbar, prev_gains_ue, sigma2):
        raise NotImplementedError


class AlwaysTransmit(Policy):
    def act(self, i, con_obs, raw_energy_mw, rng):
        return 1


class NeverTransmit(Policy):
    def act(self, i, con_obs, raw_energy_mw, rng):
        return 0


class RandomPolicy(Policy):
    """Transmit with fixed probability; the epsilon=1 exploration policy."""

    def __init__(self, p_transmit=0.5):
        self.p_transmit = p_transmit

    def act(self, i, con_obs, raw_energy_mw, rng):
        return int(rng.random() < self.p_transmit)


@dataclass
class SlotResult:
    counters: np.ndarray
    con_obs: list  # per-BS ConObservation
    actions: np.ndarray
    rates: np.ndarray
    reward: float
    next_eos_obs: list  # per-BS EosObservation
    raw_energies: np.ndarray  # (N, N) mW


def run_slot(state, fading, g0_ue, g0_bs, eos_obs, policy, env_rng, policy_rng, params):
    """Advance the environment one slot.

    Returns (SlotResult, next NetworkState, next FadingState). All environment
    randomness (counters, sensing noise, fading innovations) is drawn from
    ``env_rng`` in a fixed order and quantity regardless of the policy, so two
    policies evaluated with the same seed see identical realizations.
    """
    n = params.n_bs
    counters = draw_counters(n, params.cws, params.counter_mode, env_rng)
    s = np.sqrt(params.sigma2_bs_mw / 2.0)
    z = env_rng.normal(0.0, s, size=(n, n)) + 1j * env_rng.normal(0.0, s, size=(n, n))

    actions = np.zeros(n, dtype=np.int64)
    if policy.is_joint:
        actions[:] = policy.act_joint(state.xbar, state.prev_gains_ue, params.sigma2_norm)

    con_obs = [None] * n
    raw_energies = np.zeros((n, n))
    for i in np.argsort(counters, kind="stable"):
        raw = sense_energy(i, counters, actions, g0_bs, fading.h_ss_bs, params, noise=z[i])
        raw_energies[i] = raw
        theta_norm = counters[i] / (params.cws - 1) if params.cws > 1 else 0.0
        con_obs[i] = ConObservation(
            eos=eos_obs[i],
            energy=_energy_observation(i, raw, state.norm_bs, params),
            counter=float(theta_norm),
        )
        if not policy.is_joint:
            actions[i] = policy.act(i, con_obs[i], raw, policy_rng)

    snr, sig, intf = sinr_all(state.gains_ue, actions, params.sigma2_norm)
    rates = rate(snr)
    reward = slot_reward(actions, rates, state.xbar, params)
    new_xbar = update_avg_rate(state.xbar, rates, params.smoothing_b)
    next_eos_obs = [
        EosObservation(float(new_xbar[i]), float(sig[i] / state.norm_ue), float(intf[i] / state.norm_ue))
        for i in range(n)
    ]

    new_fading = fading if params.no_fading else step_fading(fading, env_rng)
    new_state = NetworkState(
        xbar=new_xbar,
        gains_ue=effective_gain(g0_ue, new_fading.h_ss_ue),
        gains_bs=effective_gain(g0_bs, new_fading.h_ss_bs),
        slot=state.slot + 1,
    )
    new_state.prev_gains_ue = state.gains_ue
    new_state.norm_ue = state.norm_ue
    new_state.norm_bs = state.norm_bs
    result = SlotResult(counters, con_obs, actions, rates, reward, next_eos_obs, raw_energies)
    return result, new_state, new_fading


@dataclass
class EpisodeRecord:
    """Everything one episode produced, in replay-memory layout.

    ``eos_obs[i, t]`` is the EOS observation BS i holds at the start of slot
    t+1 (t = 0..L); ``con_obs[i, t]``, ``actions[t, i]`` and ``rewards[t+1]``
    belong to slot t+1. The EOS tuple of slot t+1 is (eos_obs[:, t],
    con_obs[:, t]); the CON quadruple is (con_obs[:, t], actions[t],
    rewards[t+1], eos_obs[:, t+1]).
    """

    eos_obs: np.ndarray  # (N, L+1, 3)
    con_obs: np.ndarray  # (N, L, con_dim)
    actions: np.ndarray  # (L, N)
    rewards: np.ndarray  # (L+1,), rewards[0] = U(xbar_init)
    rates: np.ndarray  # (L, N)
    counters: np.ndarray  # (L, N)
    xbar: np.ndarray  # (L+1, N)
    metadata: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    @property
    def n_bs(self):
        return self.eos_obs.shape[0]

    @property
    def episode_len(self):
        return self.actions.shape[0]

    def cumulative_reward(self, gamma):
        disc = gamma ** np.arange(self.rewards.shape[0])
        return float(np.dot(disc, self.rewards))


def run_episode(gains, active_ues, policy, params, seed, record_traces=False, metadata=None):
    """Run L slots under one policy and return the full EpisodeRecord.

    ``gains`` is a LargeScaleGains (or any object with ``active_ue_matrix``,
    ``g0_bs``, ``norm_ue`` and ``norm_bs``); ``seed`` drives two independent
    streams, one for the environment and one for policy exploration.
    """
    n = params.n_bs
    ss = np.random.SeedSequence(seed)
    env_rng, policy_rng = [np.random.default_rng(s) for s in ss.spawn(2)]

    g0_ue = gains.active_ue_matrix(active_ues)
    g0_bs = np.asarray(gains.g0_bs, dtype=np.float64)
    if g0_ue.shape != (n, n) or g0_bs.shape != (n, n):
        raise ValueError("gain matrices must be N x N for the active UE set")

    fading = FadingState.initial(n, params.alpha)
    xbar = np.full(n, params.xbar_init)
    state = NetworkState(
        xbar=xbar,
        gains_ue=effective_gain(g0_ue, fading.h_ss_ue),
        gains_bs=effective_gain(g0_bs, fading.h_ss_bs),
        slot=0,
    )
    state.prev_gains_ue = state.gains_ue
    state.norm_ue = gains.norm_ue
    state.norm_bs = gains.norm_bs

    eos_obs = [EosObservation(params.xbar_init, 0.0, 0.0) for _ in range(n)]
    policy.reset(n, params)

    L = params.episode_len
    rec = EpisodeRecord(
        eos_obs=np.zeros((n, L + 1, EOS_DIM)),
        con_obs=np.zeros((n, L, params.con_dim)),
        actions=np.zeros((L, n), dtype=np.int64),
        rewards=np.zeros(L + 1),
        rates=np.zeros((L, n)),
        counters=np.zeros((L, n), dtype=np.int64),
        xbar=np.zeros((L + 1, n)),
        metadata=dict(metadata or {}, seed=seed, active_ues=list(map(int, active_ues))),
    )
    rec.rewards[0] = utility(xbar)
    rec.xbar[0] = xbar
    for i in range(n):
        rec.eos_obs[i, 0] = eos_obs[i].to_vector()
    if record_traces:
        rec.traces = {"gains_ue": np.zeros((L, n, n)), "counters": rec.counters}

    for t in range(L):
        if record_traces:
            rec.traces["gains_ue"][t] = state.gains_ue
        result, state, fading = run_slot(
            state, fading, g0_ue, g0_bs, eos_obs, policy, env_rng, policy_rng, params
        )
        eos_obs = result.next_eos_obs
        rec.counters[t] = result.counters
        rec.actions[t] = result.actions
        rec.rates[t] = result.rates
        rec.rewards[t + 1] = result.reward
        rec.xbar[t + 1] = state.xbar
        for i in range(n):
            rec.con_obs[i, t] = result.con_obs[i].to_vector()
            rec.eos_obs[i, t + 1] = eos_obs[i].to_vector()
    return rec


def save_episode(record, path):
    """Serialize an EpisodeRecord to .npz (metadata as a JSON string)."""
    import json

    np.savez_compressed(
        path,
        eos_obs=record.eos_obs,
        con_obs=record.con_obs,
        actions=record.actions,
        rewards=record.rewards,
        rates=record.rates,
        counters=record.counters,
        xbar=record.xbar,
        metadata=json.dumps(record.metadata),
    )


def load_episode(path):
    import json

    with np.load(path, allow_pickle=False) as d:
        return EpisodeRecord(
            eos_obs=d["eos_obs"],
            con_obs=d["con_obs"],
            actions=d["actions"],
            rewards=d["rewards"],
            rates=d["rates"],
            counters=d["counters"],
            xbar=d["xbar"],
            metadata=json.loads(str(d["metadata"])),
        )


METRICS_HEADER = ["slot", "reward"]


def export_metrics_csv(record, path):
    """Per-slot metrics: slot, reward, then per-UE rate and action columns."""
    n = record.n_bs
    header = METRICS_HEADER + [f"rate_{i}" for i in range(n)] + [f"action_{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow([0, repr(float(record.rewards[0]))] + [""] * (2 * n))
        for t in range(record.episode_len):
            w.writerow(
                [t + 1, repr(float(record.rewards[t + 1]))]
                + [repr(float(r)) for r in record.rates[t]]
                + [int(a) for a in record.actions[t]]
            )
