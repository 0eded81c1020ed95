"""Run configuration, named profiles and JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from dawnlab.buffer import WarmupStrategy
from dawnlab.errors import ConfigError

HEADS = ("scalar", "c51", "quantile", "tqc")
NORMS = ("none", "layer-norm", "hyperspherical")
EXPLICIT = ("none", "soft-auto", "soft-fixed", "hard")


@dataclass(frozen=True)
class RunConfig:
    env_id: str = "point-insert-2d"
    env_kwargs: dict = field(default_factory=dict)  # forwarded to make_env
    base_policy: str | None = None  # defaults to env_id
    variant: str = "dawn"
    lam: float = 0.1
    warmup: WarmupStrategy = field(default_factory=WarmupStrategy)
    critic_head: str = "scalar"
    critic_norm: str = "layer-norm"
    actor_norm: str = "none"
    explicit_warmup: str = "none"
    explicit_warmup_steps: int = 10000
    progressive_h: int | None = None
    gamma: float = 0.97
    alpha_init: float = 0.01
    alpha_mode: str = "auto"
    target_entropy: float | None = None  # None -> -action_dim
    lr: float = 1e-4
    batch: int = 256
    hidden: tuple[int, ...] = (128, 128)
    env_steps_per_update: int = 64
    utd: float = 0.25
    tau: float = 0.01
    total_steps: int = 200_000
    seed: int = 0
    eval_every: int = 2000
    eval_episodes: int = 50
    checkpoint_every: int = 20_000
    grad_clip: float = 10.0
    buffer_capacity: int = 1_000_000
    init_log_std: float = -6.0
    dtype: str = "float32"  # network arithmetic; float64 for exact checks
    # distributional heads
    n_atoms: int = 51
    v_min: float | None = None  # None -> derived from gamma and horizon
    v_max: float = 0.0
    n_quantiles: int = 25
    kappa: float = 1.0
    tqc_heads: int = 5
    tqc_drop: int = 2
    tqc_truncation: str = "pooled"
    anchor_episodes: int = 50
    anchor_seed: int = 10_007
    probe_size: int = 1024
    stop_at_success: float | None = None  # end early once eval success reaches this

    def __post_init__(self):
        if isinstance(self.warmup, dict):
            object.__setattr__(self, "warmup", WarmupStrategy(**self.warmup))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "env_kwargs", dict(self.env_kwargs))
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.utd <= 0:
            raise ConfigError(f"utd must be positive, got {self.utd}")
        for name, allowed in (("critic_head", HEADS), ("critic_norm", NORMS), ("actor_norm", NORMS),
                              ("explicit_warmup", EXPLICIT), ("alpha_mode", ("auto", "fixed")),
                              ("tqc_truncation", ("pooled", "per-head")),
                              ("dtype", ("float32", "float64"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.progressive_h is not None and self.progressive_h <= 0:
            raise ConfigError("progressive_h must be positive")
        if self.tqc_drop >= self.n_quantiles:
            raise ConfigError("tqc_drop must be smaller than n_quantiles")
        if self.total_steps < 0 or self.eval_every <= 0 or self.checkpoint_every <= 0:
            raise ConfigError("total_steps must be >= 0, eval_every and checkpoint_every > 0")

    @property
    def updates_per_chunk(self) -> int:
        return max(1, round(self.env_steps_per_update * self.utd))

    def with_(self, **changes) -> "RunConfig":
        if "warmup" in changes and isinstance(changes["warmup"], dict):
            changes["warmup"] = replace(self.warmup, **changes["warmup"])
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())


PROFILES = {
    "desk": dict(batch=256, hidden=(128, 128), total_steps=200_000, eval_every=2000),
    "paper": dict(batch=1024, hidden=(256, 256), total_steps=1_000_000, eval_every=10_000),
}


def profile(name: str, **overrides) -> RunConfig:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; known: {sorted(PROFILES)}")
    return RunConfig(**{**PROFILES[name], **overrides})
