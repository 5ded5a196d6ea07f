"""Training configuration: a flat ``key = value`` text format with dotted sections.

Example::

    # CalcChain, SPEAR recipe
    variant = spear
    env.name = calc_chain
    env.seed_lo = 0
    env.seed_hi = 9999
    G = 8
    eps_ub = 0.28

Keys follow the hyper-parameter names of the recipe.  A few long-form
aliases (``clip_ratio_low``, ``n_samples_per_prompt``, ...) are accepted and
mapped onto the canonical key.  Unknown keys are rejected with a suggestion.
"""
from __future__ import annotations

import dataclasses
import difflib
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

__all__ = ["TrainConfig", "VARIANTS", "load_config", "parse_config", "dump_config", "config_hash"]

VARIANTS = ("grpo", "drbot", "spear")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "spear"
    seed: int = 0
    num_steps: int = 500
    train_batch_size: int = 16
    G: int = 8
    env_name: str = "calc_chain"
    env_seed_lo: int = 0
    env_seed_hi: int = 9999
    env_max_turns: int | None = None
    max_response_turns: int | None = None
    learning_rate: float = 5.0
    mini_batch_size: int | None = None
    eps_lb: float = 0.2
    eps_ub: float = 0.28
    C: float = 10.0
    beta: float = 0.0
    lam: float = 0.02
    omega_lb: float = 1.0
    omega_ub: float = 40.0
    rollout_filter_ratio: float = 0.75
    norm_adv_by_std_in_grpo: bool | None = None
    N_D: int = 64
    N_D_R: int = 10240
    baseline_percentile: float = 50.0
    T_warmup: int = 100
    T_decay: int = 200
    omega_calib_top_lb: float = 0.20
    omega_calib_top_ub: float = 0.0002
    eval_seeds: int = 100

    def __post_init__(self):
        _validate(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @property
    def resolved_max_response_turns(self) -> int:
        if self.max_response_turns is not None:
            return self.max_response_turns
        from .env import ENV_REGISTRY
        if self.env_max_turns is not None:
            return self.env_max_turns
        return ENV_REGISTRY[self.env_name].default_max_turns


# field name -> text key
_KEY_OF = {"env_name": "env.name", "env_seed_lo": "env.seed_lo", "env_seed_hi": "env.seed_hi",
           "env_max_turns": "env.max_turns", "lam": "lambda"}
_FIELD_OF = {_KEY_OF.get(f.name, f.name): f.name for f in fields(TrainConfig)}
_ALIASES = {
    "clip_ratio_low": "eps_lb",
    "clip_ratio_high": "eps_ub",
    "clip_ratio_c": "C",
    "kl_loss_coef": "beta",
    "n_samples_per_prompt": "G",
    "actor_learning_rate": "learning_rate",
    "ppo_mini_batch_size": "mini_batch_size",
    "T_warm-up": "T_warmup",
    "multi_turn_max_turns": "env.max_turns",
    "clip_cov_ratio": "lambda",
    "clip_cov_lb": "omega_lb",
    "clip_cov_ub": "omega_ub",
}


def _fail(key: str, message: str):
    raise ConfigError(f"{key}: {message}")


def _validate(c: TrainConfig):
    from .env import ENV_REGISTRY

    if c.variant not in VARIANTS:
        _fail("variant", f"must be one of {', '.join(VARIANTS)}, got {c.variant!r}")
    if c.env_name not in ENV_REGISTRY:
        _fail("env.name", f"unknown environment {c.env_name!r}; known: {', '.join(sorted(ENV_REGISTRY))}")
    positive_ints = {"train_batch_size": c.train_batch_size, "N_D": c.N_D, "N_D_R": c.N_D_R,
                     "T_warmup": c.T_warmup, "T_decay": c.T_decay, "eval_seeds": c.eval_seeds}
    for key, v in positive_ints.items():
        if v < 1:
            _fail(key, f"must be >= 1, got {v}")
    if c.G < 2:
        _fail("G", f"group size must be >= 2, got {c.G}")
    if c.num_steps < 0:
        _fail("num_steps", f"must be >= 0, got {c.num_steps}")
    for key in ("env_max_turns", "max_response_turns", "mini_batch_size"):
        v = getattr(c, key)
        if v is not None and v < 1:
            _fail(_KEY_OF.get(key, key), f"must be >= 1, got {v}")
    if c.env_seed_lo > c.env_seed_hi:
        _fail("env.seed_lo", f"must be <= env.seed_hi ({c.env_seed_hi}), got {c.env_seed_lo}")
    if not 0 < c.eps_lb <= c.eps_ub:
        _fail("eps_ub" if c.eps_lb > 0 else "eps_lb",
              f"need 0 < eps_lb <= eps_ub, got eps_lb={c.eps_lb}, eps_ub={c.eps_ub}")
    if c.eps_lb >= 1:
        _fail("eps_lb", f"must be < 1, got {c.eps_lb}")
    if not c.C > 1 + c.eps_ub:
        _fail("C", f"must exceed 1 + eps_ub = {1 + c.eps_ub}, got {c.C}")
    if c.beta < 0:
        _fail("beta", f"must be >= 0, got {c.beta}")
    if not 0 <= c.lam <= 1:
        _fail("lambda", f"must lie in [0, 1], got {c.lam}")
    if c.omega_lb > c.omega_ub:
        _fail("omega_lb", f"must be <= omega_ub ({c.omega_ub}), got {c.omega_lb}")
    if not 0 < c.rollout_filter_ratio <= 1:
        _fail("rollout_filter_ratio", f"must lie in (0, 1], got {c.rollout_filter_ratio}")
    if not c.learning_rate > 0:
        _fail("learning_rate", f"must be > 0, got {c.learning_rate}")
    if not 0 < c.baseline_percentile <= 100:
        _fail("baseline_percentile", f"must lie in (0, 100], got {c.baseline_percentile}")
    for key in ("omega_calib_top_lb", "omega_calib_top_ub"):
        v = getattr(c, key)
        if not 0 < v <= 1:
            _fail(key, f"must lie in (0, 1], got {v}")
    for f in fields(c):
        v = getattr(c, f.name)
        if isinstance(v, float) and not math.isfinite(v):
            _fail(_KEY_OF.get(f.name, f.name), "must be finite")


def _coerce(key: str, field_type: str, text: str):
    optional = "None" in field_type
    if optional and text.lower() in ("none", "null", ""):
        return None
    try:
        if field_type.startswith("bool"):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if field_type.startswith("int"):
            return int(text)
        if field_type.startswith("float"):
            return float(text)
    except ValueError:
        _fail(key, f"cannot parse {text!r} as {field_type}")
    return text


def parse_config(text: str) -> TrainConfig:
    values = {}
    types = {f.name: str(f.type) for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELD_OF:
            close = difflib.get_close_matches(key, list(_FIELD_OF) + list(_ALIASES), n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigError(f"{key}: unknown key{hint}")
        name = _FIELD_OF[key]
        if name in values:
            raise ConfigError(f"{key}: given more than once")
        values[name] = _coerce(key, types[name], value)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(config: TrainConfig) -> str:
    """Canonical text form listing every effective value, defaults included."""
    return "".join(f"{_KEY_OF.get(f.name, f.name)} = {_fmt(getattr(config, f.name))}\n"
                   for f in fields(config))


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(dump_config(config).encode()).hexdigest()[:16]
