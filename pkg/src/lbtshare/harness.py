"""Scenario construction, train/test splits and experiment orchestration."""

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from itertools import product

import numpy as np

from lbtshare.baselines import EdConfig, EdPolicy, PfPolicy, adaptive_ed
from lbtshare.channel import (
    BS_HEIGHT_M,
    UE_HEIGHT_M,
    LargeScaleGains,
    Scenario,
    ScenarioGeometry,
    draw_large_scale_gains,
)
from lbtshare.env import EnvParams, run_episode
from lbtshare.rl import QPolicy, TrainHyper, desk_hyper, evaluate, summarize

UES_PER_BS = 10


def _layout_bs_positions(preset):
    if preset == "full":
        xs = np.arange(10.0, 111.0, 20.0)
        pos = [(x, y, BS_HEIGHT_M) for y in (15.0, 35.0) for x in xs]
    elif preset in ("L1", "L2"):
        length = 100.0 if preset == "L1" else 40.0
        pos = [(x, y, BS_HEIGHT_M) for y in (15.0, 35.0) for x in (10.0, 10.0 + length)]
    else:
        raise ValueError(f"unknown layout preset {preset!r}")
    return np.array(pos)


def _layout_ue_region(preset, bs_pos):
    if preset == "full":
        return (0.0, 120.0), (0.0, 50.0)
    x0, x1 = bs_pos[:, 0].min() - 10.0, bs_pos[:, 0].max() + 10.0
    return (x0, x1), (0.0, 50.0)


def build_layout(preset, master_seed, ues_per_bs=UES_PER_BS, carrier_freq_ghz=6.0):
    """Build a scenario: place BSs, sample UEs, draw and freeze gains.

    UEs are sampled uniformly over the layout rectangle and kept for their
    nearest BS while that BS still needs candidates, which makes each BS's
    candidates uniform over its Voronoi cell restricted to the rectangle.
    """
    rng = np.random.default_rng(np.random.SeedSequence(master_seed))
    bs_pos = _layout_bs_positions(preset)
    n = bs_pos.shape[0]
    (x0, x1), (y0, y1) = _layout_ue_region(preset, bs_pos)

    counts = np.zeros(n, dtype=int)
    ue_pos = []
    owners = []
    while int(counts.sum()) < n * ues_per_bs:
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), UE_HEIGHT_M])
        d = np.linalg.norm(bs_pos[:, :2] - p[:2], axis=1)
        b = int(np.argmin(d))
        if counts[b] < ues_per_bs:
            counts[b] += 1
            owners.append(b)
            ue_pos.append(p)
    association = {i: [j for j, o in enumerate(owners) if o == i] for i in range(n)}
    geom = ScenarioGeometry(
        bs_pos, np.array(ue_pos), association, carrier_freq_ghz=carrier_freq_ghz, layout_id=preset
    )
    gains = draw_large_scale_gains(geom, rng, seed=master_seed)
    return Scenario(geom, gains)


def make_symmetric_toy(g_direct=1e-9, g_cross=None, g_bs=1.585e-9):
    """Synthetic 2-BS scenario with hand-set gains (no geometry sampling).

    Defaults give a high-interference layout: every BS->UE gain equal, and a
    BS->BS link whose mean sensed energy (~-65 dBm) sits 7 dB above the -72
    dBm detection threshold, so energy detection is usually reliable when
    counters differ but occasionally misfires under fading; counter ties
    (non-unique counters) still collide regardless of the threshold.
    """
    g_cross = g_direct if g_cross is None else g_cross
    g0_ue = np.array([[g_direct, g_cross], [g_cross, g_direct]])
    g0_bs = np.array([[0.0, g_bs], [g_bs, 0.0]])
    gains = LargeScaleGains(
        g0_ue,
        g0_bs,
        los_ue=np.ones((2, 2), dtype=bool),
        los_bs=np.ones((2, 2), dtype=bool),
        norm_ue=float(g_direct),
        norm_bs=float(g_bs),
    )
    bs_pos = np.array([[0.0, 0.0, BS_HEIGHT_M], [10.0, 0.0, BS_HEIGHT_M]])
    ue_pos = np.array([[0.0, 5.0, UE_HEIGHT_M], [10.0, 5.0, UE_HEIGHT_M]])
    geom = ScenarioGeometry(bs_pos, ue_pos, {0: [0], 1: [1]}, layout_id="toy2")
    return Scenario(geom, gains)


def enumerate_splits(scenario, rng, train_per_bs=9, n_validation=10, n_test=15):
    """Designate training UEs per BS and sample held-out configurations.

    The training set is the Cartesian product of each BS's training UEs;
    validation and test configurations are disjoint samples from the
    complement (every such configuration contains a held-out UE).
    """
    assoc = scenario.geometry.association
    n = scenario.n_bs
    train_ues = {}
    for i in range(n):
        cands = list(assoc[i])
        if train_per_bs > len(cands):
            raise ValueError("train_per_bs exceeds candidates per BS")
        picks = rng.choice(len(cands), size=train_per_bs, replace=False)
        train_ues[i] = [cands[k] for k in sorted(picks)]
    train_configs = [tuple(c) for c in product(*(train_ues[i] for i in range(n)))]
    train_set = set(train_configs)

    held = {i: [u for u in assoc[i] if u not in train_ues[i]] for i in range(n)}
    want = n_validation + n_test
    seen = set()
    complement = []
    guard = 0
    while len(complement) < want:
        guard += 1
        if guard > 100000:
            raise RuntimeError("unable to sample enough held-out configurations")
        cfg = []
        # force at least one held-out UE so the config cannot be a training one
        forced = int(rng.integers(0, n))
        for i in range(n):
            pool = held[i] if (i == forced and held[i]) else list(assoc[i])
            cfg.append(int(pool[rng.integers(0, len(pool))]))
        cfg = tuple(cfg)
        if cfg in train_set or cfg in seen:
            continue
        seen.add(cfg)
        complement.append(cfg)
    return train_configs, complement[:n_validation], complement[n_validation:]


@dataclass
class ExperimentConfig:
    """Merged configuration of one experiment (defaults < flags < file)."""

    layout: str = "L1"
    scenario_path: str = ""
    output_dir: str = "out"
    master_seed: int = 0
    desk: bool = True
    train_per_bs: int = 9
    n_validation_configs: int = 10
    n_test_configs: int = 15
    eval_realizations: int = 120
    env: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)
    ed_threshold_dbm: float = -72.0
    ed_sweep: list = field(default_factory=list)

    def env_params(self, n_bs):
        kw = dict(self.env)
        kw.setdefault("n_bs", n_bs)
        if self.desk:
            kw.setdefault("episode_len", 200)
        return EnvParams(**kw)

    def train_hyper(self):
        if self.desk:
            return desk_hyper(**self.hyper)
        return TrainHyper(**self.hyper)

    def ed_config(self):
        kw = {"threshold_dbm": self.ed_threshold_dbm}
        if self.ed_sweep:
            kw["sweep_set"] = list(self.ed_sweep)
        return EdConfig(**kw)


def merge_config(defaults, flags, file_doc):
    """Layer configuration sources; the file wins over flags over defaults."""
    merged = dict(asdict(defaults))
    for src in (flags, file_doc):
        for k, v in (src or {}).items():
            if v is None:
                continue
            if k in ("env", "hyper") and isinstance(v, dict):
                merged[k] = {**merged.get(k, {}), **v}
            else:
                merged[k] = v
    unknown = set(merged) - set(asdict(defaults))
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**merged)


def derived_seeds(master_seed, label, count):
    """Deterministic per-purpose seed streams from the master seed."""
    ss = np.random.SeedSequence([master_seed, int.from_bytes(label.encode(), "big")])
    return [int(s) for s in np.random.default_rng(ss).integers(0, 2**31 - 1, size=count)]


def trace_hash(record):
    """SHA-256 over the gain and counter traces of one episode."""
    if "gains_ue" not in record.traces:
        raise ValueError("episode was not run with record_traces=True")
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(record.traces["gains_ue"]).tobytes())
    h.update(np.ascontiguousarray(record.counters).tobytes())
    return h.hexdigest()


EVAL_HEADER = ["experiment", "policy", "config", "seed", "cumulative_reward", "mean_rate", "final_xbar"]


def write_eval_csv(path, rows, experiment_id):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_HEADER)
        for r in rows:
            w.writerow(
                [
                    experiment_id,
                    r["policy"],
                    r["config"],
                    r["seed"],
                    repr(r["cumulative_reward"]),
                    repr(r["mean_rate"]),
                    json.dumps(r["final_xbar"]),
                ]
            )


def run_table3(agents, gains, test_configs, params, seeds, ed_config=None):
    """UC/NUC mean-reward table for RL, PF, fixed ED and adaptive ED."""
    from dataclasses import replace

    ed_config = ed_config or EdConfig()
    table = {}
    for mode in ("unique", "iid"):
        p = replace(params, counter_mode=mode)
        policies = {
            "rl": lambda: QPolicy([a.con for a in agents], eps=0.0),
            "pf": PfPolicy,
            "ed_fixed": lambda: EdPolicy(ed_config.threshold_dbm),
        }
        rows = evaluate(policies, gains, test_configs, seeds, p)
        means = summarize(rows)
        per_policy = {}
        for name in policies:
            vals = [means[(name, c)] for c in range(len(test_configs))]
            per_policy[name] = float(np.mean(vals))
        ad = [
            adaptive_ed(gains, cfg, ed_config.sweep_set, seeds, p).best_mean_reward
            for cfg in test_configs
        ]
        per_policy["ed_adaptive"] = float(np.mean(ad))
        table[mode] = per_policy
    return table


def write_table3_csv(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["counter_mode", "policy", "mean_cumulative_reward"])
        for mode, per_policy in table.items():
            for name, val in per_policy.items():
                w.writerow([mode, name, repr(val)])


# --- plot data emission -----------------------------------------------------

SERIES_HEADER = ["x", "y", "series"]


def moving_average(y, window):
    """Trailing moving average with a growing head window."""
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    for i in range(len(y)):
        out[i] = y[max(0, i - window + 1) : i + 1].mean()
    return out


def emit_series(series, path, smooth_window=1):
    """Write plot-ready (x, y, series) rows; ``series`` maps label -> (x, y)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_HEADER)
        for label, (xs, ys) in series.items():
            ys = moving_average(ys, smooth_window) if smooth_window > 1 else np.asarray(ys, dtype=np.float64)
            for x, y in zip(xs, ys):
                w.writerow([x, repr(float(y)), label])


def emit_validation_plot(log_csv_path, out_path, smooth_window=1):
    """Extract the validation curve from a training log into a series file."""
    xs, ys = [], []
    with open(log_csv_path) as fh:
        rows = list(csv.reader(fh))
    in_val = False
    for row in rows:
        if not row:
            continue
        if row[0] == "validation_iteration":
            in_val = True
            continue
        if in_val:
            xs.append(int(row[0]))
            ys.append(float(row[1]))
    emit_series({"validation_reward": (xs, ys)}, out_path, smooth_window=smooth_window)


def emit_metrics_plot(eval_csv_path, out_path):
    """Per-configuration mean reward series per policy from an evaluation CSV."""
    acc = {}
    with open(eval_csv_path) as fh:
        r = csv.DictReader(fh)
        missing = set(EVAL_HEADER) - set(r.fieldnames or [])
        if missing:
            raise ValueError(f"evaluation CSV is missing columns: {sorted(missing)}")
        for row in r:
            key = (row["policy"], int(row["config"]))
            acc.setdefault(key, []).append(float(row["cumulative_reward"]))
    series = {}
    for (policy, config), vals in sorted(acc.items()):
        xs, ys = series.setdefault(policy, ([], []))
        xs.append(config)
        ys.append(float(np.mean(vals)))
    emit_series(series, out_path)
