"""Run configuration: a flat ``section.key = value`` text format.

Every key has a typed default, so an empty file is a complete config that
reproduces the published hyperparameters. Unknown keys and unparsable values
raise :class:`ConfigError` naming the offending key.

Example::

    # comments and blank lines are ignored
    noise.var_xy = 20
    env.stack_n = 8
    train.hidden_sizes = 128,128
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .agent import TrainConfig
from .env import EnvConfig
from .exceptions import ConfigError, ContractError
from .observation import NoiseModel
from .reward import RewardParams
from .selfplay import SelfPlayConfig
from .sim import Arena, KinematicsParams


def _dataclass_defaults(section, cls, skip=()):
    return [(f"{section}.{f.name}", getattr(cls(), f.name))
            for f in fields(cls) if f.name not in skip]


SCHEMA: dict = dict(
    _dataclass_defaults("arena", Arena)
    + _dataclass_defaults("kinematics", KinematicsParams)
    + _dataclass_defaults("reward", RewardParams)
    # the heading noise is held at variance 1 in every published experiment
    + [("noise.mu", 0.0), ("noise.var_xy", 0.0), ("noise.var_psi", 1.0)]
    + [("env.stack_n", 1), ("env.episode_length", 200)]
    + _dataclass_defaults("train", TrainConfig, skip=("seed",))
    + [("selfplay.enabled", False), ("selfplay.swap_every", 50_000), ("selfplay.lam", 0.0)]
    + [("eval.episodes", 1000), ("eval.base_seed", 0), ("eval.mirror_pairs", False)]
    + [("sweep.variances", (1.0, 3.0, 5.0, 10.0, 20.0, 40.0)),
       ("sweep.stack_ns", (1, 2, 4, 8)), ("sweep.seeds", (0,))]
    + [("play.episodes", 1), ("play.base_seed", 0), ("play.stop_on_advantage", True)]
    + [("run.seed", 0), ("run.name", "")]
)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_value(key: str, text: str):
    """Convert ``text`` to the type of ``key``'s default."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key!r}")
    default = SCHEMA[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else int
            parts = [p for p in text.replace(" ", "").split(",") if p]
            if not parts:
                raise ValueError("empty list")
            return tuple(kind(p) for p in parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """A complete, validated flat configuration."""

    values: dict

    @classmethod
    def defaults(cls) -> RunConfig:
        return cls(dict(SCHEMA))

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> RunConfig:
        values = dict(SCHEMA)
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = (p.strip() for p in line.split("=", 1))
            if key in seen:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            seen.add(key)
            values[key] = parse_value(key, val)
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, str(path))

    def with_overrides(self, overrides: dict) -> RunConfig:
        values = dict(self.values)
        for key, val in overrides.items():
            values[key] = parse_value(key, val) if isinstance(val, str) else val
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key: {key!r}")
        cfg = RunConfig(values)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def to_text(self) -> str:
        """Canonical text form: every key, schema order, one per line."""
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in SCHEMA)

    def content_hash(self) -> str:
        """Git blob hash of the canonical text, so ``git hash-object`` agrees."""
        body = self.to_text().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    # -------------------------------------------------------- typed views

    def env_config(self, **overrides) -> EnvConfig:
        env = self.section("env")
        cfg = EnvConfig(
            arena=Arena(**self.section("arena")),
            kinematics=KinematicsParams(**self.section("kinematics")),
            reward=RewardParams(**self.section("reward")),
            noise=NoiseModel(**self.section("noise")),
            stack_n=env["stack_n"], episode_length=env["episode_length"],
            rng_seed=self["run.seed"])
        return replace(cfg, **overrides) if overrides else cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.section("train"), seed=self["run.seed"])

    def selfplay_config(self) -> SelfPlayConfig | None:
        sp = self.section("selfplay")
        if not sp["enabled"]:
            return None
        return SelfPlayConfig(swap_every=sp["swap_every"], lam=sp["lam"])

    def validate(self) -> None:
        try:
            self.env_config()
            self.train_config()
            SelfPlayConfig(self["selfplay.swap_every"], self["selfplay.lam"])
        except (ContractError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        for key in ("eval.episodes", "play.episodes"):
            if self[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if any(n < 1 for n in self["sweep.stack_ns"]):
            raise ConfigError("sweep.stack_ns entries must be >= 1")
        if any(v < 0 for v in self["sweep.variances"]):
            raise ConfigError("sweep.variances entries must be non-negative")
