import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from aircombat.agent import (DuelingDQNAgent, RandomPolicy, ReplayBuffer,
                             TrainConfig, TrainingLog, epsilon_greedy, train)
from aircombat.checkpoint import load_network, save_network
from aircombat.env import EnvConfig
from aircombat.exceptions import ContractError, ShapeError
from aircombat.qnet import QNetwork
from aircombat.sim import Arena

TINY = TrainConfig(total_timesteps=600, batch_size=8, replay_capacity=200,
                   hidden_sizes=(8, 8), eps_anneal_steps=300, target_update_every=50,
                   learning_rate=1e-3, seed=3)
SHORT_ENV = EnvConfig(episode_length=50, rng_seed=1)


class TestReplay:
    def test_fifo_after_wrap(self):
        buf = ReplayBuffer(5, 1)
        for k in range(8):
            buf.add([k], k % 9, float(k), [k + 1], False)
        s, a, r, s2, d = buf.ordered()
        assert len(buf) == 5
        np.testing.assert_array_equal(r, [3, 4, 5, 6, 7])
        np.testing.assert_array_equal(s[:, 0], [3, 4, 5, 6, 7])

    def test_partial_fill_order(self):
        buf = ReplayBuffer(5, 1)
        for k in range(3):
            buf.add([k], 0, float(k), [k], k == 2)
        _, _, r, _, d = buf.ordered()
        np.testing.assert_array_equal(r, [0, 1, 2])
        np.testing.assert_array_equal(d, [0, 0, 1])

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(50, 1)
        for k in range(50):
            buf.add([k], 0, float(k), [k], False)
        idx = buf.sample_indices(50, np.random.default_rng(0))
        assert sorted(idx) == list(range(50))

    def test_sample_too_large(self):
        buf = ReplayBuffer(10, 1)
        buf.add([0], 0, 0.0, [0], False)
        with pytest.raises(ContractError):
            buf.sample(2, np.random.default_rng(0))

    def test_sampling_is_roughly_uniform(self):
        buf = ReplayBuffer(10, 1)
        for k in range(10):
            buf.add([k], 0, float(k), [k], False)
        rng = np.random.default_rng(1)
        counts = np.bincount(np.concatenate(
            [buf.sample_indices(3, rng) for _ in range(20_000)]), minlength=10)
        np.testing.assert_allclose(counts / counts.sum(), 0.1, atol=0.01)


class TestEpsilonGreedy:
    def test_greedy_when_zero(self):
        net = QNetwork(7, (4,), rng=np.random.default_rng(0))
        obs = np.full(7, 0.3)
        best = int(np.argmax(net.forward(obs)))
        rng = np.random.default_rng(1)
        assert all(epsilon_greedy(net, obs, 0.0, rng) == best for _ in range(100))

    def test_uniform_when_one(self):
        net = QNetwork(7, (4,))
        rng = np.random.default_rng(2)
        acts = [epsilon_greedy(net, np.zeros(7), 1.0, rng) for _ in range(9000)]
        counts = np.bincount(acts, minlength=9)
        assert counts.min() > 850 and counts.max() < 1150


class TestTraining:
    def test_warmup_no_updates(self):
        cfg = TrainConfig(total_timesteps=31, batch_size=32, hidden_sizes=(4,), seed=0)
        net0 = QNetwork(7, (4,), rng=np.random.default_rng(
            np.random.SeedSequence([0, 0x5EED]).spawn(4)[0]))
        net, log = train(SHORT_ENV, cfg)
        np.testing.assert_array_equal(net.flat, net0.flat)
        assert net.optimizer_.t == 0

    def test_first_update_at_batch_size(self):
        cfg = TrainConfig(total_timesteps=32, batch_size=32, hidden_sizes=(4,), seed=0)
        net, _ = train(SHORT_ENV, cfg)
        assert net.optimizer_.t == 1

    def test_deterministic_log(self):
        _, a = train(SHORT_ENV, TINY)
        _, b = train(SHORT_ENV, TINY)
        assert a.episodes == b.episodes
        assert len(a.episodes) == 12

    def test_seed_changes_run(self):
        _, a = train(SHORT_ENV, TINY)
        _, b = train(SHORT_ENV, TrainConfig(**{**TINY.__dict__, "seed": 4}))
        assert [e["score"] for e in a.episodes] != [e["score"] for e in b.episodes]

    def test_target_network_staleness(self):
        cfg = TrainConfig(**{**TINY.__dict__, "total_timesteps": 100,
                             "target_update_every": 1000})
        net, log = train(SHORT_ENV, cfg)
        assert not np.array_equal(net.flat, net.target_.flat)
        fresh = QNetwork(7, (8, 8), rng=np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 0x5EED]).spawn(4)[0]))
        np.testing.assert_array_equal(net.target_.flat, fresh.flat)
        assert not log.events

    def test_target_sync_events(self):
        cfg = TrainConfig(**{**TINY.__dict__, "total_timesteps": 8 + 100 - 1,
                             "target_update_every": 50})
        net, log = train(SHORT_ENV, cfg)
        syncs = [e for e in log.events if e["event"] == "target_sync"]
        # updates start at the 8th step, so update 50 happens at step 57
        assert [e["step"] for e in syncs] == [57, 107]
        np.testing.assert_array_equal(net.flat, net.target_.flat)

    def test_log_roundtrip(self, tmp_path):
        _, log = train(SHORT_ENV, TINY)
        log.write(tmp_path)
        back = TrainingLog.read(tmp_path)
        assert back.episodes == log.episodes

    def test_checkpoints_written(self, tmp_path):
        cfg = TrainConfig(**{**TINY.__dict__, "checkpoint_every": 200})
        train(SHORT_ENV, cfg, run_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
        assert names == ["final.ckpt", "step_000000200.ckpt", "step_000000400.ckpt",
                         "step_000000600.ckpt"]

    def test_resume_continues_step_count(self, tmp_path):
        cfg = TrainConfig(**{**TINY.__dict__, "checkpoint_every": 300})
        train(SHORT_ENV, cfg, run_dir=tmp_path)
        net, log = train(SHORT_ENV, cfg, resume=tmp_path / "step_000000300.ckpt")
        # 293 updates before the checkpoint; the replay buffer restarts empty
        assert net.optimizer_.t == 2 * (300 - TINY.batch_size + 1)
        assert log.episodes[0]["step"] > 300

    def test_custom_opponent(self):
        calls = []

        def opp(obs):
            calls.append(obs.shape)
            return 4

        train(SHORT_ENV, TrainConfig(**{**TINY.__dict__, "total_timesteps": 20}), opponent=opp)
        assert calls == [(7,)] * 20


def test_checkpoint_roundtrip_bytes(tmp_path):
    net = QNetwork(14, (6, 5), rng=np.random.default_rng(0))
    target = QNetwork(14, (6, 5), rng=np.random.default_rng(1))
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_network(p1, net, config={"stack_n": 2}, step=17, target=target)
    loaded, header, arrays = load_network(p1)
    t2 = loaded.copy()
    t2.load_flat(arrays["target"])
    save_network(p2, loaded, config=header["config"], step=header["step"], target=t2)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(loaded.forward(np.ones(14)), net.forward(np.ones(14)))


def test_checkpoint_shape_mismatch(tmp_path):
    save_network(tmp_path / "a.ckpt", QNetwork(14, (4,)))
    with pytest.raises(ShapeError):
        load_network(tmp_path / "a.ckpt", expected_inputs=7)


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint at all")
    with pytest.raises(ContractError):
        load_network(tmp_path / "x.ckpt")


class TestEstimator:
    def test_params_roundtrip(self):
        agent = DuelingDQNAgent(learning_rate=3e-4, selfplay_swap_every=100)
        params = agent.get_params()
        assert params["learning_rate"] == 3e-4
        twin = clone(agent)
        assert twin.get_params() == params
        assert twin.train_config().learning_rate == 3e-4
        assert twin.selfplay_config().swap_every == 100

    def test_defaults_match_train_config(self):
        assert DuelingDQNAgent().train_config() == TrainConfig()
        assert DuelingDQNAgent().selfplay_config() is None

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            DuelingDQNAgent().predict(np.zeros((1, 7)))

    def test_fit_predict(self, tmp_path):
        agent = DuelingDQNAgent.from_configs(TINY).fit(SHORT_ENV)
        X = np.random.default_rng(0).random((5, 7))
        q = agent.decision_function(X)
        assert q.shape == (5, 9)
        np.testing.assert_array_equal(agent.predict(X), q.argmax(axis=1))
        with pytest.raises(ContractError):
            agent.predict(np.zeros((1, 14)))
        agent.save(tmp_path / "m.ckpt")
        back = DuelingDQNAgent.load(tmp_path / "m.ckpt")
        np.testing.assert_array_equal(back.predict(X), agent.predict(X))

    def test_greedy_policy_invariance(self):
        agent = DuelingDQNAgent.from_configs(TINY).fit(SHORT_ENV)
        pol = agent.as_policy()
        obs = np.random.default_rng(5).random(7)
        assert len({pol(obs) for _ in range(50)}) == 1


def test_random_policy_seeded():
    a, b = RandomPolicy(3), RandomPolicy(3)
    assert [a(None) for _ in range(20)] == [b(None) for _ in range(20)]


@pytest.mark.slow
def test_learns_in_small_arena():
    """A short run in a cramped arena must beat an untrained agent."""
    env = EnvConfig(arena=Arena(-60, 60, -60, 60), episode_length=100, rng_seed=0)
    cfg = TrainConfig(total_timesteps=50_000, hidden_sizes=(64, 64), eps_anneal_steps=20_000,
                      target_update_every=1_000, learning_rate=5e-4, dtype="float32", seed=0)
    net, log = train(env, cfg)
    assert log.scores[-50:].mean() > log.scores[:50].mean() + 5
    from dataclasses import replace

    from aircombat.agent import GreedyPolicy
    from aircombat.evaluation import run_tournament
    summary, _ = run_tournament(GreedyPolicy(net), RandomPolicy(2),
                                replace(env, terminate_on_advantage=True),
                                episodes=400, base_seed=9)
    # random against random sits near 0.5
    assert summary.win_probability >= 0.7
