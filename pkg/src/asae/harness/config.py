"""Experiment configuration: TOML files with [experiment], [env] and [training] sections."""

import math
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..advantage import VARIANTS
from ..envs import GAMES, GridBattleSpec, make_game
from ..estimator import ALGORITHMS
from ..exceptions import ConfigError
from ..trust_region import SURROGATES

ACTIVATIONS = ("tanh", "relu")
ENV_KEYS = {
    "matrix": {"payoff", "steps", "gamma"},
    "coordination": {"gamma"},
    "dummy-agent": {"gamma"},
    "grid-battle": {f.name for f in fields(GridBattleSpec)} | {"gamma"},
}


@dataclass
class ExperimentSection:
    algorithm: str = "asae"
    seeds: list = field(default_factory=lambda: [0])
    iterations: int = 200
    output_dir: str = "runs/default"
    checkpoint_every: int = 50
    log_wall_clock: bool = False


@dataclass
class TrainingSection:
    m: int = 50
    clip_range: float = 0.1
    kl_budget: float = 0.01
    kl_early_stop: bool = True
    actor_epochs: int = 4
    surrogate: str = "ppo-min"
    entropy_coef: float = 0.0
    estimator: str = "mc-q"
    batch_episodes: int = 32
    actor_hidden: list = field(default_factory=lambda: [64])
    critic_hidden: list = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    actor_lr: float = 5e-4
    critic_lr: float = 5e-4
    critic_epochs: int = 16
    critic_batch_size: int = 256
    target_sync: int = 50
    td_lambda: float = None
    normalize_advantages: bool = False
    warm_start_episodes: int = 0


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _int_at_least(name, lo):
    def check(v):
        if not _is_int(v) or v < lo:
            raise ConfigError(name, f"must be an integer >= {lo}, got {v!r}")
        return v
    return check


def _number(name, lo, hi, lo_open=False, hi_open=False):
    def check(v):
        if not _is_number(v):
            raise ConfigError(name, f"must be a finite number, got {v!r}")
        if v < lo or v > hi or (lo_open and v == lo) or (hi_open and v == hi):
            left, right = "(" if lo_open else "[", ")" if hi_open else "]"
            raise ConfigError(name, f"must lie in {left}{lo}, {hi}{right}, got {v!r}")
        return float(v)
    return check


def _choice(name, options):
    def check(v):
        if v not in options:
            raise ConfigError(name, f"must be one of {list(options)}, got {v!r}")
        return v
    return check


def _boolean(name):
    def check(v):
        if not isinstance(v, bool):
            raise ConfigError(name, f"must be true or false, got {v!r}")
        return v
    return check


def _layers(name):
    def check(v):
        if not isinstance(v, list) or not v or not all(_is_int(x) and x >= 1 for x in v):
            raise ConfigError(name, f"must be a non-empty array of positive integers, got {v!r}")
        return list(v)
    return check


def _seeds(v):
    if not isinstance(v, list) or not v or not all(_is_int(x) and x >= 0 for x in v):
        raise ConfigError("experiment.seeds", f"must be a non-empty array of nonnegative integers, got {v!r}")
    if len(set(v)) != len(v):
        raise ConfigError("experiment.seeds", "contains duplicates")
    return list(v)


def _string(name):
    def check(v):
        if not isinstance(v, str) or not v:
            raise ConfigError(name, f"must be a non-empty string, got {v!r}")
        return v
    return check


def _optional(check):
    return lambda v: None if v is None else check(v)


EXPERIMENT_CHECKS = {
    "algorithm": _choice("experiment.algorithm", ALGORITHMS),
    "seeds": _seeds,
    "iterations": _int_at_least("experiment.iterations", 0),
    "output_dir": _string("experiment.output_dir"),
    "checkpoint_every": _int_at_least("experiment.checkpoint_every", 0),
    "log_wall_clock": _boolean("experiment.log_wall_clock"),
}

TRAINING_CHECKS = {
    "m": _int_at_least("training.m", 1),
    "clip_range": _number("training.clip_range", 0.0, 1.0, lo_open=True, hi_open=True),
    "kl_budget": _number("training.kl_budget", 0.0, math.inf, lo_open=True),
    "kl_early_stop": _boolean("training.kl_early_stop"),
    "actor_epochs": _int_at_least("training.actor_epochs", 0),
    "surrogate": _choice("training.surrogate", SURROGATES),
    "entropy_coef": _number("training.entropy_coef", 0.0, math.inf),
    "estimator": _choice("training.estimator", [v for v in VARIANTS if v != "exact"]),
    "batch_episodes": _int_at_least("training.batch_episodes", 1),
    "actor_hidden": _layers("training.actor_hidden"),
    "critic_hidden": _layers("training.critic_hidden"),
    "activation": _choice("training.activation", ACTIVATIONS),
    "actor_lr": _number("training.actor_lr", 0.0, 1.0, lo_open=True),
    "critic_lr": _number("training.critic_lr", 0.0, 1.0, lo_open=True),
    "critic_epochs": _int_at_least("training.critic_epochs", 1),
    "critic_batch_size": _int_at_least("training.critic_batch_size", 1),
    "target_sync": _int_at_least("training.target_sync", 0),
    "td_lambda": _optional(_number("training.td_lambda", 0.0, 1.0)),
    "normalize_advantages": _boolean("training.normalize_advantages"),
    "warm_start_episodes": _int_at_least("training.warm_start_episodes", 0),
}


@dataclass
class ExperimentConfig:
    """A validated experiment: what to train, on which game, and with which settings."""

    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    env: dict = field(default_factory=lambda: {"id": "coordination"})
    training: TrainingSection = field(default_factory=TrainingSection)

    @property
    def env_id(self):
        return self.env["id"]

    @property
    def env_params(self):
        return {k: v for k, v in self.env.items() if k != "id"}

    def make_game(self):
        return make_game(self.env_id, **self.env_params)

    def estimator_params(self):
        """Keyword arguments for :class:`asae.estimator.ASAE` (seed excluded)."""
        t = self.training
        params = {f.name: getattr(t, f.name) for f in fields(t)}
        params["actor_hidden"] = tuple(t.actor_hidden)
        params["critic_hidden"] = tuple(t.critic_hidden)
        params["algorithm"] = self.experiment.algorithm
        params["n_iterations"] = self.experiment.iterations
        return params

    def to_dict(self):
        exp = {f.name: getattr(self.experiment, f.name) for f in fields(self.experiment)}
        tr = {f.name: getattr(self.training, f.name) for f in fields(self.training)}
        return {"experiment": exp, "env": dict(self.env), "training": tr}

    def to_toml(self):
        return dumps(self.to_dict())


def _section(raw, name, checks, cls):
    values = raw.get(name, {})
    if not isinstance(values, dict):
        raise ConfigError(name, "must be a table")
    unknown = sorted(set(values) - set(checks))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}", "unknown key")
    return cls(**{k: checks[k](v) for k, v in values.items()})


def _env_section(raw):
    env = raw.get("env", {"id": "coordination"})
    if not isinstance(env, dict):
        raise ConfigError("env", "must be a table")
    env = dict(env)
    env_id = env.get("id", "coordination")
    if env_id not in GAMES:
        raise ConfigError("env.id", f"must be one of {sorted(GAMES)}, got {env_id!r}")
    env["id"] = env_id
    unknown = sorted(set(env) - ENV_KEYS[env_id] - {"id"})
    if unknown:
        raise ConfigError(f"env.{unknown[0]}", f"unknown key for environment {env_id!r}")
    if "gamma" in env:
        env["gamma"] = _number("env.gamma", 0.0, 1.0)(env["gamma"])
    if env_id == "matrix" and "payoff" not in env:
        raise ConfigError("env.payoff", "required for the matrix environment")
    try:
        make_game(env_id, **{k: v for k, v in env.items() if k != "id"})
    except (TypeError, ValueError) as exc:
        key = next((k for k in env if k != "id" and k in str(exc)), None)
        raise ConfigError(f"env.{key}" if key else "env", str(exc)) from None
    return env


def from_dict(raw):
    """Validate a nested mapping (as parsed from TOML) into an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a table")
    unknown = sorted(set(raw) - {"experiment", "env", "training"})
    if unknown:
        raise ConfigError(unknown[0], "unknown section")
    return ExperimentConfig(
        experiment=_section(raw, "experiment", EXPERIMENT_CHECKS, ExperimentSection),
        env=_env_section(raw),
        training=_section(raw, "training", TRAINING_CHECKS, TrainingSection),
    )


def loads(text, overrides=()):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"not valid TOML: {exc}") from None
    for item in overrides:
        apply_override(raw, item)
    return from_dict(raw)


def load(path, overrides=()):
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read(), overrides)


def parse_value(text):
    """Interpret an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw, item):
    """Apply ``section.key=value`` (or ``key=value`` when the key is unambiguous) in place."""
    if "=" not in item:
        raise ConfigError(item, "override must look like section.key=value")
    key, value = item.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
    else:
        owners = [s for s, checks in (("experiment", EXPERIMENT_CHECKS), ("training", TRAINING_CHECKS))
                  if key in checks]
        if key == "id" or key in set().union(*ENV_KEYS.values()):
            owners.append("env")
        if len(owners) != 1:
            raise ConfigError(key, "ambiguous or unknown override key; use section.key=value")
        section, name = owners[0], key
    if section not in ("experiment", "env", "training"):
        raise ConfigError(section, "unknown section")
    raw.setdefault(section, {})[name] = parse_value(value.strip())


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    raise TypeError(f"cannot write {type(value).__name__} to TOML")


def dumps(data):
    """Write a two-level mapping as TOML; keys whose value is None are omitted."""
    lines = []
    for section, values in data.items():
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        for key, value in values.items():
            if value is not None:
                lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"
