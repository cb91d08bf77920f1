import numpy as np
import pytest

from lbtshare.env import EnvParams, run_episode
from lbtshare.harness import make_symmetric_toy
from lbtshare.rl import (
    QPolicy,
    ReplayMemory,
    TrainHyper,
    act_epsilon_greedy,
    compute_labels,
    desk_hyper,
    evaluate,
    load_checkpoint,
    make_agents,
    sample_windows,
    save_checkpoint,
    summarize,
    train,
    train_step,
    validate,
)


def tiny_hyper(**kw):
    base = dict(dense_dim=12, hidden_dim=8, batch_episodes=6, seq_len=5,
                iterations=3, replay_capacity=8, replay_prefill=2,
                validation_every=2, validation_configs=1, validation_realizations=2)
    base.update(kw)
    return desk_hyper(**base)


def tiny_setup(seed=0):
    gains = make_symmetric_toy().gains
    params = EnvParams(n_bs=2, cws=2, episode_len=20)
    hyper = tiny_hyper()
    agents = make_agents(2, params.con_dim, hyper, np.random.default_rng(seed))
    return gains, params, hyper, agents


class TestHyper:
    def test_epsilon_schedule_linear(self):
        h = TrainHyper(iterations=15000)
        assert h.epsilon(0) == 1.0
        assert h.epsilon(7500) == pytest.approx(0.625)
        assert h.epsilon(15000) == pytest.approx(0.25)
        assert h.epsilon(10**9) == pytest.approx(0.25)

    def test_eps_ordering_enforced(self):
        with pytest.raises(ValueError):
            TrainHyper(eps_start=0.1, eps_end=0.5)

    def test_paper_scale_defaults(self):
        h = TrainHyper()
        assert (h.dense_dim, h.hidden_dim) == (512, 256)
        assert h.batch_episodes == 5000 and h.seq_len == 50
        assert h.replay_capacity == 9**4

    def test_desk_preset_overridable(self):
        h = desk_hyper(iterations=7)
        assert h.iterations == 7
        assert h.dense_dim == 64 and h.hidden_dim == 32


class TestReplay:
    def test_eviction(self):
        m = ReplayMemory(3)
        for i in range(5):
            m.append(i)
        assert len(m) == 3
        assert list(m.rows) == [2, 3, 4]

    def test_sample_with_replacement(self):
        m = ReplayMemory(4)
        m.append("only")
        rows = m.sample(10, np.random.default_rng(0))
        assert rows == ["only"] * 10


class TestActEpsilonGreedy:
    def test_greedy_cases(self):
        rng = np.random.default_rng(0)
        assert act_epsilon_greedy(np.array([0.2, 0.7]), 0.0, rng) == 1
        assert act_epsilon_greedy(np.array([0.7, 0.2]), 0.0, rng) == 0
        assert act_epsilon_greedy(np.array([0.5, 0.5]), 0.0, rng) == 1  # tie -> transmit

    def test_uniform_at_eps_one(self):
        rng = np.random.default_rng(1)
        acts = [act_epsilon_greedy(np.array([9.0, 0.0]), 1.0, rng) for _ in range(100_000)]
        assert np.mean(acts) == pytest.approx(0.5, abs=0.01)

    def test_eps_domain(self):
        with pytest.raises(ValueError):
            act_epsilon_greedy(np.zeros(2), 1.5, np.random.default_rng(0))


class TestWindowsAndLabels:
    def test_window_alignment(self):
        gains, params, hyper, agents = tiny_setup()
        pol = QPolicy([a.con for a in agents], eps=1.0)
        rec = run_episode(gains, (0, 1), pol, params, seed=0)
        mem = ReplayMemory(4)
        mem.append(rec)
        rng = np.random.default_rng(0)
        w = sample_windows(mem, 0, 4, 5, rng)
        assert w["eos"].shape == (4, 5, 3)
        assert w["con"].shape == (4, 5, params.con_dim)
        assert w["next_eos"].shape == (4, 5, 3)
        # each window's last transition is internally consistent with the
        # stored episode: find its offset and check action/reward alignment
        for k in range(4):
            matches = [
                t0 for t0 in range(params.episode_len - 4)
                if np.array_equal(rec.con_obs[0, t0 : t0 + 5], w["con"][k])
            ]
            assert matches
            t0 = matches[0]
            assert w["actions"][k] == rec.actions[t0 + 4, 0]
            assert w["rewards"][k] == rec.rewards[t0 + 5]
            assert np.array_equal(w["next_eos"][k], rec.eos_obs[0, t0 + 1 : t0 + 6])

    def test_seq_len_cannot_exceed_episode(self):
        gains, params, hyper, agents = tiny_setup()
        rec = run_episode(gains, (0, 1), QPolicy([a.con for a in agents], eps=1.0),
                          params, seed=0)
        mem = ReplayMemory(2)
        mem.append(rec)
        with pytest.raises(ValueError):
            sample_windows(mem, 0, 2, params.episode_len + 1, np.random.default_rng(0))

    def test_label_formulas(self):
        gains, params, hyper, agents = tiny_setup()
        rec = run_episode(gains, (0, 1), QPolicy([a.con for a in agents], eps=1.0),
                          params, seed=1)
        mem = ReplayMemory(2)
        mem.append(rec)
        w = sample_windows(mem, 0, 3, 4, np.random.default_rng(2))
        gamma = 0.5
        eos_l, con_l = compute_labels(agents[0], w, gamma)
        q_con, _ = agents[0].con.forward(w["con"])
        q_eos, _ = agents[0].eos.forward(w["next_eos"])
        assert np.allclose(eos_l, gamma * q_con.max(axis=1))
        assert np.allclose(con_l, w["rewards"] + gamma * q_eos[:, 0])

    def test_gamma_squared_composition(self):
        # substituting the EOS label into the CON label gives a one-state
        # backup with discount gamma^2: L_CON(next window) = r + gamma *
        # (gamma * max Q_CON) when Q_EOS has been regressed onto its label
        gamma = 0.9
        r = 1.3
        q_con_next = np.array([2.0, 3.0])
        eos_label = gamma * q_con_next.max()
        con_label = r + gamma * eos_label
        assert con_label == pytest.approx(r + gamma**2 * q_con_next.max(), rel=1e-15)

    def test_labels_are_stop_gradient(self):
        # train_step regresses onto labels computed forward-only: the EOS
        # update must not change when the CON net used for labels is
        # perturbed *after* labels were computed; equivalently, the gradient
        # applied to the EOS net depends on labels only through their values
        gains, params, hyper, agents = tiny_setup()
        rec = run_episode(gains, (0, 1), QPolicy([a.con for a in agents], eps=1.0),
                          params, seed=3)
        mem = ReplayMemory(2)
        mem.append(rec)
        w = sample_windows(mem, 0, 3, 4, np.random.default_rng(4))
        eos_l, _ = compute_labels(agents[0], w, 0.9)
        q, _, cache = agents[0].eos.forward(w["eos"], want_cache=True)
        dq = np.zeros_like(q)
        dq[:, 0] = 2.0 * (q[:, 0] - eos_l) / len(eos_l)
        grads_a = agents[0].eos.backward(cache, dq)
        # perturb the label-producing (CON) network: grads must be unchanged
        agents[0].con.params["w1"] += 10.0
        q2, _, cache2 = agents[0].eos.forward(w["eos"], want_cache=True)
        dq2 = np.zeros_like(q2)
        dq2[:, 0] = 2.0 * (q2[:, 0] - eos_l) / len(eos_l)
        grads_b = agents[0].eos.backward(cache2, dq2)
        for k in grads_a:
            assert np.array_equal(grads_a[k], grads_b[k])


class TestTrainStep:
    def test_loss_decreases_on_fixed_batch(self):
        gains, params, hyper, agents = tiny_setup(seed=5)
        rec = run_episode(gains, (0, 1), QPolicy([a.con for a in agents], eps=1.0),
                          params, seed=5)
        mem = ReplayMemory(2)
        mem.append(rec)
        w = sample_windows(mem, 0, 6, 5, np.random.default_rng(6))
        l1 = train_step(agents[0], w, hyper.gamma, lr=1e-3)
        # labels move between steps (no target nets); freeze them by using
        # the same windows and checking the prediction error against the
        # *initial* labels shrinks after several small steps
        for _ in range(20):
            train_step(agents[0], w, hyper.gamma, lr=1e-3)
        l2 = train_step(agents[0], w, hyper.gamma, lr=1e-3)
        assert l2[0] < l1[0] and l2[1] < l1[1]

    def test_nonfinite_loss_raises(self):
        gains, params, hyper, agents = tiny_setup(seed=6)
        rec = run_episode(gains, (0, 1), QPolicy([a.con for a in agents], eps=1.0),
                          params, seed=6)
        mem = ReplayMemory(2)
        mem.append(rec)
        w = sample_windows(mem, 0, 2, 5, np.random.default_rng(7))
        agents[0].eos.params["wv"][:] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
            train_step(agents[0], w, hyper.gamma, lr=1e-3)


class TestTrainLoop:
    def test_zero_iterations_only_initial_point(self):
        gains = make_symmetric_toy().gains
        params = EnvParams(n_bs=2, cws=2, episode_len=20)
        hyper = tiny_hyper(iterations=0)
        res = train(gains, [(0, 1)], params, hyper, seed=0)
        assert len(res.validation_curve) == 1
        assert res.validation_curve[0][0] == 0
        assert res.losses == []

    def test_deterministic_validation_curve(self):
        gains = make_symmetric_toy().gains
        params = EnvParams(n_bs=2, cws=2, episode_len=20)
        a = train(gains, [(0, 1)], params, tiny_hyper(), seed=42)
        b = train(gains, [(0, 1)], params, tiny_hyper(), seed=42)
        assert a.validation_curve == b.validation_curve
        assert a.losses == b.losses

    def test_training_log_schema(self, tmp_path):
        gains = make_symmetric_toy().gains
        params = EnvParams(n_bs=2, cws=2, episode_len=20)
        log = tmp_path / "log.csv"
        train(gains, [(0, 1)], params, tiny_hyper(), seed=0, log_path=str(log))
        lines = log.read_text().strip().splitlines()
        assert lines[0] == "iteration,epsilon,lr,loss_eos,loss_con"
        assert "validation_iteration,mean_reward" in lines


class TestEvaluate:
    def test_common_random_numbers_and_summary(self):
        gains = make_symmetric_toy().gains
        params = EnvParams(n_bs=2, cws=2, episode_len=30)
        from lbtshare.baselines import EdPolicy, PfPolicy

        policies = {"pf": PfPolicy, "ed": lambda: EdPolicy(-72.0)}
        rows = evaluate(policies, gains, [(0, 1)], [1, 2], params)
        assert len(rows) == 4
        again = evaluate(policies, gains, [(0, 1)], [1, 2], params)
        assert [r["cumulative_reward"] for r in rows] == [
            r["cumulative_reward"] for r in again
        ]
        means = summarize(rows)
        assert set(means) == {("pf", 0), ("ed", 0)}


class TestCheckpoints:
    def test_save_load_save_byte_identical(self, tmp_path):
        gains, params, hyper, agents = tiny_setup(seed=7)
        # take one real step so optimizer state is non-trivial
        rec = run_episode(gains, (0, 1), QPolicy([a.con for a in agents], eps=1.0),
                          params, seed=7)
        mem = ReplayMemory(2)
        mem.append(rec)
        for i, a in enumerate(agents):
            w = sample_windows(mem, i, 2, 5, np.random.default_rng(8))
            train_step(a, w, hyper.gamma, lr=1e-3)

        p1 = tmp_path / "ck1"
        save_checkpoint(str(p1), agents, params, hyper, iteration=1)
        loaded, manifest = load_checkpoint(str(p1), hyper)
        p2 = tmp_path / "ck2"
        save_checkpoint(str(p2), loaded, params, hyper, iteration=1)

        import os

        files1 = sorted(os.listdir(p1))
        files2 = sorted(os.listdir(p2))
        assert files1 == files2
        for f in files1:
            assert (p1 / f).read_bytes() == (p2 / f).read_bytes(), f

    def test_loaded_policy_is_equivalent(self, tmp_path):
        gains, params, hyper, agents = tiny_setup(seed=8)
        p = tmp_path / "ck"
        save_checkpoint(str(p), agents, params, hyper, iteration=0)
        loaded, _ = load_checkpoint(str(p), hyper)
        a = run_episode(gains, (0, 1), QPolicy([x.con for x in agents], eps=0.0),
                        params, seed=9)
        b = run_episode(gains, (0, 1), QPolicy([x.con for x in loaded], eps=0.0),
                        params, seed=9)
        assert np.array_equal(a.actions, b.actions)

    def test_version_check(self, tmp_path):
        import json

        gains, params, hyper, agents = tiny_setup(seed=9)
        p = tmp_path / "ck"
        save_checkpoint(str(p), agents, params, hyper, iteration=0)
        man = json.loads((p / "manifest.json").read_text())
        man["version"] = 999
        (p / "manifest.json").write_text(json.dumps(man))
        with pytest.raises(ValueError):
            load_checkpoint(str(p), hyper)


class TestQPolicy:
    def test_reset_requires_matching_width(self):
        gains, params, hyper, agents = tiny_setup()
        pol = QPolicy([agents[0].con])
        with pytest.raises(ValueError):
            run_episode(gains, (0, 1), pol, params, seed=0)
