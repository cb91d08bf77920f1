"""Distributed recurrent Q-learning: replay, two-stage labels, training loop.

Each BS owns two recurrent dueling networks (EOS and CON). Labels alternate
between them (EOS regresses onto the discounted CON maximum, CON onto reward
plus the discounted next EOS value), which removes the need for separate
target networks. Training samples fixed-length windows from episode replay
with zero-initialized recurrent state; generation and evaluation carry the
recurrent state across slots instead.
"""

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass, field, asdict

import numpy as np

from lbtshare.env import EOS_DIM, Policy, run_episode
from lbtshare.optim import AdamW, scheduled_lr
from lbtshare.qnet import QNet


@dataclass
class TrainHyper:
    """Training hyper-parameters (paper-scale defaults)."""

    lr_init: float = 1e-4
    lr_decay: float = 0.85
    lr_decay_every: int = 500
    weight_decay: float = 0.001
    batch_episodes: int = 5000
    seq_len: int = 50
    iterations: int = 15000
    eps_start: float = 1.0
    eps_end: float = 0.25
    gamma: float = 1.0 - 1e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    validation_every: int = 600
    validation_configs: int = 10
    validation_realizations: int = 10
    dense_dim: int = 512
    hidden_dim: int = 256
    replay_capacity: int = 9**4
    replay_prefill: int = 9**4
    aggregator: str = "mean"

    def __post_init__(self):
        if self.eps_start < self.eps_end:
            raise ValueError("eps_start must be >= eps_end")

    def epsilon(self, iteration):
        """Linear decay from eps_start to eps_end across all iterations."""
        if self.iterations <= 0:
            return self.eps_start
        frac = min(max(iteration / self.iterations, 0.0), 1.0)
        return self.eps_start - (self.eps_start - self.eps_end) * frac


def desk_hyper(**overrides):
    """Desk-scale preset: small widths and batches so end-to-end runs finish
    in minutes; the paper-scale values stay in the TrainHyper defaults."""
    base = dict(
        lr_init=3e-3,
        batch_episodes=64,
        iterations=1500,
        dense_dim=64,
        hidden_dim=32,
        replay_capacity=256,
        replay_prefill=32,
        validation_every=250,
        validation_configs=1,
        validation_realizations=5,
        lr_decay_every=500,
    )
    base.update(overrides)
    return TrainHyper(**base)


class ReplayMemory:
    """Bounded double-ended queue of episode rows; append evicts the oldest."""

    def __init__(self, capacity):
        self.rows = deque(maxlen=capacity)

    def append(self, row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def sample(self, batch, rng):
        idx = rng.integers(0, len(self.rows), size=batch)
        return [self.rows[i] for i in idx]


def act_epsilon_greedy(q_con, eps, rng):
    """Greedy w.p. 1-eps (Q ties resolved to transmit), uniform otherwise."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(0, 2))
    return int(q_con[1] >= q_con[0])


class QPolicy(Policy):
    """Per-BS CON networks acting epsilon-greedily with carried LSTM state."""

    def __init__(self, con_nets, eps=0.0):
        self.con_nets = con_nets
        self.eps = eps
        self.carries = None

    def reset(self, n_bs, params):
        if len(self.con_nets) != n_bs:
            raise ValueError("one CON network per BS is required")
        self.carries = [net.zero_carry(1) for net in self.con_nets]

    def act(self, i, con_obs, raw_energy_mw, rng):
        x = con_obs.to_vector().reshape(1, 1, -1)
        q, carry = self.con_nets[i].forward(x, carry=self.carries[i])
        self.carries[i] = carry
        return act_epsilon_greedy(q[0], self.eps, rng)


@dataclass
class BsAgent:
    """The two networks and optimizer states of one BS."""

    eos: QNet
    con: QNet
    opt_eos: AdamW
    opt_con: AdamW
    updates: int = 0


def make_agents(n_bs, con_dim, hyper, rng):
    agents = []
    for _ in range(n_bs):
        eos = QNet(EOS_DIM, hyper.dense_dim, hyper.hidden_dim, rng=rng, aggregator=hyper.aggregator)
        con = QNet(con_dim, hyper.dense_dim, hyper.hidden_dim, rng=rng, aggregator=hyper.aggregator)
        agents.append(
            BsAgent(
                eos=eos,
                con=con,
                opt_eos=AdamW(eos.params, hyper.adam_beta1, hyper.adam_beta2,
                              hyper.adam_eps, hyper.weight_decay),
                opt_con=AdamW(con.params, hyper.adam_beta1, hyper.adam_beta2,
                              hyper.adam_eps, hyper.weight_decay),
            )
        )
    return agents


def sample_windows(memory, bs_index, batch, seq_len, rng):
    """Aligned EOS/CON training windows of one BS.

    Returns dict with eos (B,T,3), con (B,T,D), next_eos (B,T,3), actions (B,)
    and rewards (B,), where actions/rewards belong to the final transition of
    each window.
    """
    rows = memory.sample(batch, rng)
    eos = np.empty((batch, seq_len, EOS_DIM))
    nxt = np.empty((batch, seq_len, EOS_DIM))
    con = np.empty((batch, seq_len, rows[0].con_obs.shape[2]))
    acts = np.empty(batch, dtype=np.int64)
    rews = np.empty(batch)
    for k, rec in enumerate(rows):
        L = rec.episode_len
        if seq_len > L:
            raise ValueError("seq_len exceeds episode length")
        t0 = int(rng.integers(0, L - seq_len + 1))
        eos[k] = rec.eos_obs[bs_index, t0 : t0 + seq_len]
        nxt[k] = rec.eos_obs[bs_index, t0 + 1 : t0 + seq_len + 1]
        con[k] = rec.con_obs[bs_index, t0 : t0 + seq_len]
        acts[k] = rec.actions[t0 + seq_len - 1, bs_index]
        rews[k] = rec.rewards[t0 + seq_len]
    return {"eos": eos, "con": con, "next_eos": nxt, "actions": acts, "rewards": rews}


def compute_labels(agent, windows, gamma):
    """Two-stage Bellman labels; constants, no gradient flows through them."""
    q_con, _ = agent.con.forward(windows["con"])
    eos_labels = gamma * q_con.max(axis=1)
    q_eos, _ = agent.eos.forward(windows["next_eos"])
    con_labels = windows["rewards"] + gamma * q_eos[:, 0]
    return eos_labels, con_labels


def train_step(agent, windows, gamma, lr):
    """One MSE regression step for both networks of one BS."""
    eos_labels, con_labels = compute_labels(agent, windows, gamma)
    batch = eos_labels.shape[0]

    q, _, cache = agent.eos.forward(windows["eos"], want_cache=True)
    pred = q[:, 0]
    err = pred - eos_labels
    loss_eos = float(np.mean(err**2))
    dq = np.zeros_like(q)
    dq[:, 0] = 2.0 * err / batch
    grads = agent.eos.backward(cache, dq)
    agent.opt_eos.step(agent.eos.params, grads, lr)

    q, _, cache = agent.con.forward(windows["con"], want_cache=True)
    taken = windows["actions"]
    pred = q[np.arange(batch), taken]
    err = pred - con_labels
    loss_con = float(np.mean(err**2))
    dq = np.zeros_like(q)
    dq[np.arange(batch), taken] = 2.0 * err / batch
    grads = agent.con.backward(cache, dq)
    agent.opt_con.step(agent.con.params, grads, lr)

    agent.updates += 1
    if not (np.isfinite(loss_eos) and np.isfinite(loss_con)):
        raise FloatingPointError(
            f"non-finite loss (eos={loss_eos}, con={loss_con}) after {agent.updates} updates"
        )
    return loss_eos, loss_con


def validate(agents, gains, configs, seeds, params):
    """Mean cumulative discounted reward of the greedy policy."""
    rewards = []
    for cfg in configs:
        for seed in seeds:
            pol = QPolicy([a.con for a in agents], eps=0.0)
            rec = run_episode(gains, cfg, pol, params, seed=seed)
            rewards.append(rec.cumulative_reward(params.gamma))
    return float(np.mean(rewards))


@dataclass
class TrainResult:
    agents: list
    validation_curve: list  # (iteration, mean reward) pairs
    losses: list  # (iteration, mean eos loss, mean con loss)
    hyper: TrainHyper = None


def train(gains, train_configs, params, hyper, seed, validation_configs=None,
          log_path=None, progress=None):
    """Full training loop: generate -> append -> sample -> label -> update.

    ``train_configs`` is a sequence of active-UE tuples; validation runs every
    ``hyper.validation_every`` iterations on configurations fixed at start.
    """
    ss = np.random.SeedSequence(seed)
    s_init, s_cfg, s_episode, s_sample, s_val = ss.spawn(5)
    init_rng = np.random.default_rng(s_init)
    cfg_rng = np.random.default_rng(s_cfg)
    sample_rng = np.random.default_rng(s_sample)
    episode_seeds = np.random.default_rng(s_episode)
    val_seed_rng = np.random.default_rng(s_val)

    n = params.n_bs
    agents = make_agents(n, params.con_dim, hyper, init_rng)
    mem_eos = ReplayMemory(hyper.replay_capacity)
    mem_con = ReplayMemory(hyper.replay_capacity)

    if validation_configs is None:
        pool = list(train_configs)
        picks = cfg_rng.choice(len(pool), size=min(hyper.validation_configs, len(pool)), replace=False)
        validation_configs = [pool[i] for i in picks]
    val_seeds = [int(s) for s in val_seed_rng.integers(0, 2**31 - 1, size=hyper.validation_realizations)]

    # Initial replay fill with the eps = 1 (uniform random) policy.
    prefill = min(hyper.replay_prefill, hyper.replay_capacity)
    for k in range(prefill):
        cfg = train_configs[k % len(train_configs)]
        pol = QPolicy([a.con for a in agents], eps=1.0)
        rec = run_episode(gains, cfg, pol, params, seed=int(episode_seeds.integers(0, 2**31 - 1)))
        mem_eos.append(rec)
        mem_con.append(rec)

    curve = [(0, validate(agents, gains, validation_configs, val_seeds, params))]
    losses = []
    log_rows = []
    for it in range(hyper.iterations):
        eps = hyper.epsilon(it)
        cfg = train_configs[int(cfg_rng.integers(0, len(train_configs)))]
        pol = QPolicy([a.con for a in agents], eps=eps)
        rec = run_episode(gains, cfg, pol, params, seed=int(episode_seeds.integers(0, 2**31 - 1)))
        mem_eos.append(rec)
        mem_con.append(rec)

        it_losses = np.zeros((n, 2))
        for i, agent in enumerate(agents):
            win = sample_windows(mem_con, i, hyper.batch_episodes, hyper.seq_len, sample_rng)
            lr = scheduled_lr(hyper.lr_init, agent.updates, hyper.lr_decay, hyper.lr_decay_every)
            it_losses[i] = train_step(agent, win, hyper.gamma, lr)
        losses.append((it + 1, float(it_losses[:, 0].mean()), float(it_losses[:, 1].mean())))

        if (it + 1) % hyper.validation_every == 0 or it + 1 == hyper.iterations:
            vr = validate(agents, gains, validation_configs, val_seeds, params)
            curve.append((it + 1, vr))
            if progress is not None:
                progress(it + 1, eps, vr)
        log_rows.append((it + 1, eps,
                         scheduled_lr(hyper.lr_init, agents[0].updates, hyper.lr_decay, hyper.lr_decay_every),
                         float(it_losses[:, 0].mean()), float(it_losses[:, 1].mean())))

    if log_path:
        import csv

        with open(log_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "epsilon", "lr", "loss_eos", "loss_con"])
            w.writerows(log_rows)
            w.writerow([])
            w.writerow(["validation_iteration", "mean_reward"])
            w.writerows(curve)
    return TrainResult(agents=agents, validation_curve=curve, losses=losses, hyper=hyper)


def evaluate(policies, gains, configs, seeds, params):
    """Rollout every policy on identical realizations (common random numbers).

    ``policies`` maps name -> zero-argument policy factory. Returns a list of
    metric rows: (policy, config index, seed, cumulative reward, mean rate,
    final per-UE xbar).
    """
    rows = []
    for c_idx, cfg in enumerate(configs):
        for seed in seeds:
            for name, factory in policies.items():
                rec = run_episode(gains, cfg, factory(), params, seed=seed)
                rows.append(
                    {
                        "policy": name,
                        "config": c_idx,
                        "seed": seed,
                        "cumulative_reward": rec.cumulative_reward(params.gamma),
                        "mean_rate": float(rec.rates.mean()),
                        "final_xbar": rec.xbar[-1].tolist(),
                    }
                )
    return rows


def summarize(rows):
    """Mean cumulative reward per (policy, config)."""
    acc = {}
    for r in rows:
        acc.setdefault((r["policy"], r["config"]), []).append(r["cumulative_reward"])
    return {k: float(np.mean(v)) for k, v in acc.items()}


# --- checkpointing --------------------------------------------------------

CHECKPOINT_VERSION = 1


def _config_hash(params, hyper):
    blob = json.dumps([asdict(params), asdict(hyper)], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(path, agents, params, hyper, iteration, rng_state=None):
    """Write a checkpoint directory: manifest.json plus one .npy per array.

    The layout is deterministic, so save -> load -> save is byte-identical.
    """
    os.makedirs(path, exist_ok=True)
    arrays = {}
    for i, agent in enumerate(agents):
        for role, net, opt in (("eos", agent.eos, agent.opt_eos), ("con", agent.con, agent.opt_con)):
            for k, v in net.params.items():
                arrays[f"bs{i}_{role}_param_{k}"] = v
            st = opt.state_dict()
            for k, v in st["m"].items():
                arrays[f"bs{i}_{role}_adam_m_{k}"] = v
            for k, v in st["v"].items():
                arrays[f"bs{i}_{role}_adam_v_{k}"] = v
    for name in sorted(arrays):
        np.save(os.path.join(path, name + ".npy"), np.ascontiguousarray(arrays[name]))
    manifest = {
        "version": CHECKPOINT_VERSION,
        "iteration": int(iteration),
        "n_bs": len(agents),
        "updates": [a.updates for a in agents],
        "adam_t": [[a.opt_eos.t, a.opt_con.t] for a in agents],
        "net_dims": {
            "eos_input": agents[0].eos.input_dim,
            "con_input": agents[0].con.input_dim,
            "dense": agents[0].eos.dense_dim,
            "hidden": agents[0].eos.hidden_dim,
            "aggregator": agents[0].eos.aggregator,
        },
        "config_hash": _config_hash(params, hyper),
        "rng_state": rng_state,
        "arrays": sorted(arrays),
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(path, hyper):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['version']}")
    dims = manifest["net_dims"]
    agents = []
    for i in range(manifest["n_bs"]):
        nets = {}
        opts = {}
        for role, inp in (("eos", dims["eos_input"]), ("con", dims["con_input"])):
            params = {}
            m, v = {}, {}
            for name in manifest["arrays"]:
                prefix = f"bs{i}_{role}_"
                if not name.startswith(prefix):
                    continue
                arr = np.load(os.path.join(path, name + ".npy"))
                rest = name[len(prefix):]
                if rest.startswith("param_"):
                    params[rest[len("param_"):]] = arr
                elif rest.startswith("adam_m_"):
                    m[rest[len("adam_m_"):]] = arr
                elif rest.startswith("adam_v_"):
                    v[rest[len("adam_v_"):]] = arr
            net = QNet(inp, dims["dense"], dims["hidden"], aggregator=dims["aggregator"], params=params)
            opt = AdamW(net.params, hyper.adam_beta1, hyper.adam_beta2, hyper.adam_eps, hyper.weight_decay)
            opt.load_state_dict({"t": manifest["adam_t"][i][0 if role == "eos" else 1], "m": m, "v": v})
            nets[role] = net
            opts[role] = opt
        agent = BsAgent(eos=nets["eos"], con=nets["con"], opt_eos=opts["eos"], opt_con=opts["con"],
                        updates=manifest["updates"][i])
        agents.append(agent)
    return agents, manifest
