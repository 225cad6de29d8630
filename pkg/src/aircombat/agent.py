"""Dueling double DQN learner and its scikit-learn style estimator."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .checkpoint import load_network, save_network
from .env import AirCombatEnv, EnvConfig
from .exceptions import ContractError, TrainingDivergenceError
from .qnet import (Adam, QNetwork, apply_update, double_dqn_targets,
                   loss_and_gradients)
from .selfplay import OpponentPool, SelfPlayConfig
from .sim import N_ACTIONS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    gamma: float = 0.99
    replay_capacity: int = 20_000
    batch_size: int = 32
    target_update_every: int = 10_000
    eps_initial: float = 1.0
    eps_final: float = 0.05
    eps_anneal_steps: int = 100_000
    total_timesteps: int = 1_000_000
    hidden_sizes: tuple = (128, 128)
    loss: str = "mse"
    dtype: str = "float64"
    log_window: int = 100
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ContractError("gamma must lie in (0, 1]")
        if not 0 < self.eps_final <= self.eps_initial <= 1:
            raise ContractError("need 0 < eps_final <= eps_initial <= 1")
        if self.batch_size > self.replay_capacity:
            raise ContractError("batch_size cannot exceed replay_capacity")
        if self.loss not in ("mse", "huber"):
            raise ContractError(f"unknown loss {self.loss!r}")
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))


def epsilon_at(step: int, cfg: TrainConfig) -> float:
    """Linear anneal from eps_initial to eps_final, then constant."""
    if step < 0:
        raise ContractError("step must be non-negative")
    if step >= cfg.eps_anneal_steps:
        return cfg.eps_final
    frac = step / cfg.eps_anneal_steps
    return cfg.eps_initial + frac * (cfg.eps_final - cfg.eps_initial)


class ReplayBuffer:
    """FIFO ring of transitions stored in preallocated arrays."""

    def __init__(self, capacity: int, obs_size: int, dtype=np.float64):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_size), dtype=dtype)
        self.s_next = np.zeros((capacity, obs_size), dtype=dtype)
        self.a = np.zeros(capacity, dtype=np.intp)
        self.r = np.zeros(capacity, dtype=dtype)
        self.done = np.zeros(capacity, dtype=dtype)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s_next, done) -> None:
        i = self._next
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s_next[i] = s_next
        self.done[i] = done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform sample without replacement within the batch."""
        if batch_size > self.size:
            raise ContractError("not enough transitions to sample a batch")
        return rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size, rng):
        i = self.sample_indices(batch_size, rng)
        return self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i]

    def ordered(self):
        """Stored transitions oldest first, as ``(s, a, r, s_next, done)`` arrays."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = (np.arange(self.capacity) + self._next) % self.capacity
        return self.s[order], self.a[order], self.r[order], self.s_next[order], self.done[order]


# ---------------------------------------------------------------- policies

class GreedyPolicy:
    def __init__(self, net: QNetwork):
        self.net = net

    def __call__(self, obs) -> int:
        return int(np.argmax(self.net.forward(obs)))


class EpsilonGreedyPolicy:
    def __init__(self, net: QNetwork, epsilon: float, rng: np.random.Generator):
        self.net = net
        self.epsilon = epsilon
        self.rng = rng

    def __call__(self, obs) -> int:
        return epsilon_greedy(self.net, obs, self.epsilon, self.rng)


class RandomPolicy:
    def __init__(self, rng: np.random.Generator | int | None = None):
        self.rng = np.random.default_rng(rng)

    def __call__(self, obs) -> int:
        return int(self.rng.integers(N_ACTIONS))


def epsilon_greedy(net, obs, epsilon, rng) -> int:
    u = rng.random()
    if u < epsilon:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(net.forward(obs)))


# ---------------------------------------------------------------- training

@dataclass
class TrainingLog:
    window: int = 100
    episodes: list = field(default_factory=list)
    events: list = field(default_factory=list)

    EPISODE_FIELDS = ("episode", "step", "length", "score", "enemy_score",
                      "status", "epsilon", "mean_loss")
    EVENT_FIELDS = ("step", "event", "count")

    @property
    def scores(self) -> np.ndarray:
        return np.array([e["score"] for e in self.episodes], dtype=float)

    def smoothed(self, window=None) -> np.ndarray:
        from .evaluation import moving_average
        return moving_average(self.scores, window or self.window)

    def best_smoothed(self, window=None) -> float:
        curve = self.smoothed(window)
        return float(curve.max()) if len(curve) else float("nan")

    def write(self, directory) -> None:
        directory = Path(directory)
        _write_rows(directory / "scores.csv", self.EPISODE_FIELDS, self.episodes)
        _write_rows(directory / "events.csv", self.EVENT_FIELDS, self.events)

    @classmethod
    def read(cls, directory, window=100) -> TrainingLog:
        directory = Path(directory)
        out = cls(window=window)
        with open(directory / "scores.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                out.episodes.append({
                    "episode": int(row["episode"]), "step": int(row["step"]),
                    "length": int(row["length"]), "score": float(row["score"]),
                    "enemy_score": float(row["enemy_score"]),
                    "status": row["status"], "epsilon": float(row["epsilon"]),
                    "mean_loss": float(row["mean_loss"])})
        events = directory / "events.csv"
        if events.exists():
            with open(events, newline="") as fh:
                for row in csv.DictReader(fh):
                    out.events.append({"step": int(row["step"]), "event": row["event"],
                                       "count": int(row["count"])})
        return out


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(row[k])) if isinstance(row[k], (float, np.floating)) else row[k]
                        for k in header])


def _as_env(env_factory) -> AirCombatEnv:
    if isinstance(env_factory, AirCombatEnv):
        return env_factory
    if isinstance(env_factory, EnvConfig):
        return AirCombatEnv(env_factory)
    return env_factory()


def _huber_targets(q_taken, targets):
    # equivalent MSE target whose gradient equals the Huber(1) gradient
    err = q_taken - targets
    return q_taken - np.clip(err, -1.0, 1.0)


def train(env_factory, cfg: TrainConfig, selfplay: SelfPlayConfig | None = None,
          opponent: Callable | None = None, run_dir=None, resume=None,
          callback: Callable | None = None):
    """Train a dueling double DQN agent against an opponent.

    ``env_factory`` is an :class:`EnvConfig`, an environment, or a
    zero-argument callable returning one. Without ``selfplay`` the enemy is
    ``opponent`` (default: uniform random actions). With ``selfplay`` the
    enemy plays a frozen copy of the learner refreshed every
    ``selfplay.swap_every`` environment steps.

    Returns ``(online_network, TrainingLog)``.
    """
    env = _as_env(env_factory)
    obs_size = env.obs_size
    dtype = np.dtype(cfg.dtype)
    # the extra word keeps these streams distinct from an env seeded with cfg.seed
    init_ss, explore_ss, replay_ss, enemy_ss = np.random.SeedSequence(
        [cfg.seed, 0x5EED]).spawn(4)
    explore_rng = np.random.default_rng(explore_ss)
    replay_rng = np.random.default_rng(replay_ss)
    enemy_rng = np.random.default_rng(enemy_ss)

    online = QNetwork(obs_size, cfg.hidden_sizes, N_ACTIONS,
                      rng=np.random.default_rng(init_ss), dtype=dtype)
    opt = Adam(online.flat.size, lr=cfg.learning_rate, dtype=dtype)
    start_step = 0
    if resume is not None:
        net, header, arrays = load_network(resume, expected_inputs=obs_size)
        online.load_flat(net.flat)
        if "adam_m" in arrays:
            opt.m[...] = arrays["adam_m"]
            opt.v[...] = arrays["adam_v"]
            opt.t = header.get("optimizer_step", 0)
        start_step = int(header.get("step", 0))
    target = online.copy()
    if resume is not None and "target" in arrays:
        target.load_flat(arrays["target"])

    replay = ReplayBuffer(cfg.replay_capacity, obs_size, dtype=dtype)
    grad_buf = np.empty_like(online.flat)
    tlog = TrainingLog(window=cfg.log_window)
    pool = OpponentPool(online, start_step) if selfplay is not None else None
    if selfplay is None and opponent is None:
        opponent = RandomPolicy(enemy_rng)

    config_echo = {"train": _jsonable(asdict(cfg)),
                   "env": _jsonable(asdict(env.config)),
                   "selfplay": _jsonable(asdict(selfplay)) if selfplay else None}
    run_dir = Path(run_dir) if run_dir is not None else None

    def checkpoint(path, step):
        save_network(path, online, config=config_echo, step=step, target=target,
                     optimizer=opt)

    obs_a, obs_e = env.reset()
    ep_score = ep_enemy = 0.0
    ep_losses = []
    updates = 0
    for step in range(start_step, cfg.total_timesteps):
        eps = epsilon_at(step, cfg)
        a = epsilon_greedy(online, obs_a, eps, explore_rng)
        if pool is not None:
            b = pool.enemy_action(obs_e, selfplay.lam, enemy_rng)
        else:
            b = opponent(obs_e)
        res = env.step(a, b)
        replay.add(obs_a, a, res.reward_agent, res.obs_agent, res.terminated)
        ep_score += res.reward_agent
        ep_enemy += res.reward_enemy
        obs_a, obs_e = res.obs_agent, res.obs_enemy

        if len(replay) >= cfg.batch_size:
            s, act, r, s2, d = replay.sample(cfg.batch_size, replay_rng)
            y = double_dqn_targets(online, target, r, s2, d, cfg.gamma)
            if cfg.loss == "huber":
                q_taken = online.forward(s)[np.arange(len(act)), act]
                y = _huber_targets(q_taken, y)
            loss, grad = loss_and_gradients(online, s, act, y, out=grad_buf)
            if not math.isfinite(loss):
                payload = {"step": step, "loss": loss}
                if run_dir is not None:
                    path = run_dir / "diverged_last_finite.ckpt"
                    checkpoint(path, step)
                    payload["checkpoint"] = str(path)
                raise TrainingDivergenceError("non-finite loss", payload)
            try:
                apply_update(online, grad, opt)
            except TrainingDivergenceError as exc:
                exc.payload["step"] = step
                raise
            ep_losses.append(loss)
            updates += 1
            if updates % cfg.target_update_every == 0:
                target.load_flat(online.flat)
                tlog.events.append({"step": step + 1, "event": "target_sync",
                                    "count": updates // cfg.target_update_every})

        done_steps = step + 1
        if pool is not None and pool.maybe_swap(online, done_steps, selfplay.swap_every):
            tlog.events.append({"step": done_steps, "event": "snapshot_swap",
                                "count": pool.swaps})
        if run_dir is not None and cfg.checkpoint_every and done_steps % cfg.checkpoint_every == 0:
            checkpoint(run_dir / f"step_{done_steps:09d}.ckpt", done_steps)

        if res.done:
            tlog.episodes.append({
                "episode": len(tlog.episodes), "step": done_steps,
                "length": env.steps, "score": ep_score, "enemy_score": ep_enemy,
                "status": res.status.value, "epsilon": eps,
                "mean_loss": float(np.mean(ep_losses)) if ep_losses else 0.0})
            if callback is not None:
                callback(tlog.episodes[-1])
            ep_score = ep_enemy = 0.0
            ep_losses = []
            obs_a, obs_e = env.reset()

    if run_dir is not None:
        checkpoint(run_dir / "final.ckpt", cfg.total_timesteps)
    online.target_ = target
    online.optimizer_ = opt
    return online, tlog


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# ---------------------------------------------------------------- estimator

class DuelingDQNAgent(BaseEstimator):
    """Estimator wrapper: ``fit`` trains on an environment, ``predict`` acts.

    ``fit(X)`` takes an :class:`EnvConfig` (or environment factory) instead
    of a data matrix; ``predict`` and ``decision_function`` take stacked
    observations of shape ``(n_samples, 7 * stack_n)``.
    """

    def __init__(self, learning_rate=1e-4, gamma=0.99, replay_capacity=20_000,
                 batch_size=32, target_update_every=10_000, eps_initial=1.0,
                 eps_final=0.05, eps_anneal_steps=100_000, total_timesteps=1_000_000,
                 hidden_sizes=(128, 128), loss="mse", dtype="float64",
                 log_window=100, checkpoint_every=0, seed=0,
                 selfplay_swap_every=None, selfplay_lambda=0.0):
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.replay_capacity = replay_capacity
        self.batch_size = batch_size
        self.target_update_every = target_update_every
        self.eps_initial = eps_initial
        self.eps_final = eps_final
        self.eps_anneal_steps = eps_anneal_steps
        self.total_timesteps = total_timesteps
        self.hidden_sizes = hidden_sizes
        self.loss = loss
        self.dtype = dtype
        self.log_window = log_window
        self.checkpoint_every = checkpoint_every
        self.seed = seed
        self.selfplay_swap_every = selfplay_swap_every
        self.selfplay_lambda = selfplay_lambda

    @classmethod
    def from_configs(cls, cfg: TrainConfig, selfplay: SelfPlayConfig | None = None):
        agent = cls(**asdict(cfg))
        if selfplay is not None:
            agent.set_params(selfplay_swap_every=selfplay.swap_every,
                             selfplay_lambda=selfplay.lam)
        return agent

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def selfplay_config(self) -> SelfPlayConfig | None:
        if self.selfplay_swap_every is None:
            return None
        return SelfPlayConfig(self.selfplay_swap_every, self.selfplay_lambda)

    def fit(self, X, y=None, opponent=None, run_dir=None, resume=None):
        net, tlog = train(X, self.train_config(), self.selfplay_config(),
                          opponent=opponent, run_dir=run_dir, resume=resume)
        self.q_net_ = net
        self.target_net_ = net.target_
        self.log_ = tlog
        self.n_features_in_ = net.n_inputs
        return self

    def _check_fitted(self):
        if not hasattr(self, "q_net_"):
            raise NotFittedError("DuelingDQNAgent is not fitted yet; call fit()")

    def decision_function(self, X) -> np.ndarray:
        """Q-values for each row of ``X``, shape (n_samples, 9)."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(
                f"X has {X.shape[1]} features, agent expects {self.n_features_in_}")
        return self.q_net_.forward(X)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def as_policy(self) -> GreedyPolicy:
        self._check_fitted()
        return GreedyPolicy(self.q_net_)

    def save(self, path, config=None) -> None:
        self._check_fitted()
        save_network(path, self.q_net_, config=config, target=self.target_net_)

    @classmethod
    def load(cls, path, expected_inputs=None) -> DuelingDQNAgent:
        net, header, arrays = load_network(path, expected_inputs)
        train_cfg = header.get("config", {}).get("train") or {}
        known = cls().get_params()
        agent = cls(**{k: v for k, v in train_cfg.items() if k in known})
        agent.q_net_ = net
        target = net.copy()
        if "target" in arrays:
            target.load_flat(arrays["target"])
        agent.target_net_ = target
        agent.n_features_in_ = net.n_inputs
        return agent
