"""Comparison policies: centralized PF scheduling and energy-detect variants."""

from dataclasses import dataclass, field

import numpy as np

from lbtshare.env import Policy, rate, run_episode, sinr_all
from lbtshare.units import dbm_to_mw

PF_ENUMERATION_CAP = 16


def default_ed_sweep():
    """-32 dBm down to -92 dBm in 4 dB steps (the paper states the range only)."""
    return [float(x) for x in np.arange(-32.0, -93.0, -4.0)]


@dataclass
class EdConfig:
    threshold_dbm: float = -72.0
    sweep_set: list = field(default_factory=default_ed_sweep)

    def __post_init__(self):
        if not self.sweep_set:
            raise ValueError("sweep_set must be non-empty")
        diffs = np.diff(self.sweep_set)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("sweep_set must be strictly ordered")


def pf_schedule(gains_prev, xbar, sigma2, cap=PF_ENUMERATION_CAP):
    """Exhaustive proportional-fair action vector.

    Maximizes sum_j R_j(a) / xbar_j over all 2^N binary vectors on the
    previous-slot gains; ties go to the lexicographically smallest vector.
    """
    xbar = np.asarray(xbar, dtype=np.float64)
    if np.any(xbar <= 0):
        raise ValueError("xbar must be positive")
    n = xbar.shape[0]
    if n > cap:
        raise ValueError(f"refusing exhaustive PF search for N={n} > {cap}")
    best_a, best_metric = None, -np.inf
    for bits in range(2**n):
        a = np.array([(bits >> (n - 1 - j)) & 1 for j in range(n)], dtype=np.int64)
        snr, _, _ = sinr_all(gains_prev, a, sigma2)
        metric = float(np.sum(rate(snr) / xbar))
        if metric > best_metric:
            best_metric, best_a = metric, a
    return best_a, best_metric


def ed_decide(energy_vec_mw, e0_dbm):
    """Energy-detect rule: transmit iff the summed raw energy is below E0."""
    total = float(np.sum(energy_vec_mw))
    return int(total < float(dbm_to_mw(e0_dbm)))


class PfPolicy(Policy):
    """Centralized PF scheduler; fixes all actions from previous-slot gains."""

    is_joint = True

    def act_joint(self, xbar, prev_gains_ue, sigma2):
        a, _ = pf_schedule(prev_gains_ue, xbar, sigma2)
        return a


class EdPolicy(Policy):
    """Fixed energy-detect threshold on raw (un-normalized) sensed energies."""

    def __init__(self, threshold_dbm=-72.0):
        self.threshold_dbm = threshold_dbm

    def act(self, i, con_obs, raw_energy_mw, rng):
        return ed_decide(raw_energy_mw, self.threshold_dbm)


@dataclass
class EdSweepResult:
    best_threshold_dbm: float
    best_mean_reward: float
    thresholds: list
    mean_rewards: list
    rewards: np.ndarray  # (n_thresholds, n_realizations)


def adaptive_ed(gains, active_ues, sweep_set, seeds, params):
    """Genie-aided adaptive ED: best threshold for this UE configuration.

    Every threshold is evaluated on the same seeds (common random numbers);
    returns the maximizing threshold and its mean cumulative reward.
    """
    rewards = np.zeros((len(sweep_set), len(seeds)))
    for k, e0 in enumerate(sweep_set):
        pol = EdPolicy(e0)
        for s, seed in enumerate(seeds):
            rec = run_episode(gains, active_ues, pol, params, seed=seed)
            rewards[k, s] = rec.cumulative_reward(params.gamma)
    means = rewards.mean(axis=1)
    best = int(np.argmax(means))
    return EdSweepResult(
        best_threshold_dbm=float(sweep_set[best]),
        best_mean_reward=float(means[best]),
        thresholds=list(sweep_set),
        mean_rewards=[float(m) for m in means],
        rewards=rewards,
    )
