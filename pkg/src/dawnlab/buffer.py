"""Replay storage and warmup data collection.

Transitions live in column arrays that grow geometrically up to the
capacity and then act as a FIFO ring. Every transition records which
behaviour produced it (``source``), which the warmup strategies and the
tests use for bookkeeping.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from dawnlab.agent import combine
from dawnlab.diffcore import load_params, save_params
from dawnlab.errors import ConfigError

FIELDS = ("obs", "a_base", "a_res", "a_exec", "reward", "next_obs", "done", "episode_id", "source")
WARMUP_KINDS = (
    "base-only", "full-action", "gaussian-noise", "epsilon-greedy", "tc-noise", "tc-noise-anchor",
)

# behaviour tags stored per transition
SRC_BASE, SRC_POLICY, SRC_NOISE = 0, 1, 2


@dataclass(frozen=True)
class WarmupStrategy:
    kind: str = "base-only"
    budget: int = 20000
    sigma: float = 0.1  # gaussian-noise std
    epsilon: float = 0.2  # epsilon-greedy full-policy ratio
    tc_sigma: float = 0.2  # per-episode bias std
    tc_jitter: float = 0.01

    def __post_init__(self):
        if self.kind not in WARMUP_KINDS:
            raise ConfigError(f"warmup kind must be one of {WARMUP_KINDS}, got {self.kind!r}")
        if self.budget < 0:
            raise ConfigError(f"warmup budget must be >= 0, got {self.budget}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Transition:
    obs: np.ndarray
    a_base: np.ndarray
    a_res: np.ndarray
    a_exec: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    episode_id: int


@dataclass
class Batch:
    """Column view of sampled transitions (arrays with a leading batch axis)."""

    obs: np.ndarray
    a_base: np.ndarray
    a_res: np.ndarray
    a_exec: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    episode_id: np.ndarray
    index: np.ndarray

    def __len__(self) -> int:
        return len(self.reward)

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.obs[i], self.a_base[i], self.a_res[i], self.a_exec[i], float(self.reward[i]),
                       self.next_obs[i], bool(self.done[i]), int(self.episode_id[i]))
            for i in range(len(self))
        ]


class ReplayBuffer:
    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigError("capacity must be positive")
        self.obs_dim, self.act_dim, self.capacity = obs_dim, act_dim, int(capacity)
        self.size = 0
        self.ptr = 0  # next write slot
        self.total_added = 0
        self._alloc(min(self.capacity, 4096))

    def _alloc(self, n: int) -> None:
        shapes = {
            "obs": (n, self.obs_dim), "next_obs": (n, self.obs_dim),
            "a_base": (n, self.act_dim), "a_res": (n, self.act_dim), "a_exec": (n, self.act_dim),
            "reward": (n,), "done": (n,), "episode_id": (n,), "source": (n,),
            "uid": (n,),
        }
        dtypes = {"done": bool, "episode_id": np.int64, "source": np.int8, "uid": np.int64}
        old = getattr(self, "data", None)
        self.data = {k: np.zeros(s, dtype=dtypes.get(k, np.float64)) for k, s in shapes.items()}
        if old is not None:
            for k in self.data:
                self.data[k][: self.size] = old[k][: self.size]

    def __len__(self) -> int:
        return self.size

    def add(self, obs, a_base, a_res, a_exec, reward, next_obs, done, episode_id, source=SRC_POLICY) -> None:
        """Append one transition or a batch of them (leading axis)."""
        obs = np.atleast_2d(obs)
        n = obs.shape[0]
        cols = {
            "obs": obs, "a_base": np.atleast_2d(a_base), "a_res": np.atleast_2d(a_res),
            "a_exec": np.atleast_2d(a_exec), "reward": np.atleast_1d(reward),
            "next_obs": np.atleast_2d(next_obs), "done": np.atleast_1d(done),
            "episode_id": np.broadcast_to(episode_id, (n,)), "source": np.broadcast_to(source, (n,)),
            "uid": self.total_added + np.arange(n),
        }
        for i in range(n):
            if self.size < self.capacity and self.ptr >= len(self.data["reward"]):
                self._alloc(min(self.capacity, 2 * len(self.data["reward"])))
            for k, v in cols.items():
                self.data[k][self.ptr] = v[i]
            self.ptr = (self.ptr + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
        self.total_added += n

    def column(self, name: str) -> np.ndarray:
        """Stored values in insertion order (oldest first)."""
        col = self.data[name][: self.size]
        if self.size < self.capacity:
            return col
        return np.roll(col, -self.ptr, axis=0)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return sample_batch(self, batch_size, rng)

    # -- persistence ---------------------------------------------------------------
    def dump(self, stem) -> None:
        stem = Path(stem)
        cols = {k: self.column(k).astype(np.float64) for k in self.data}
        meta = {"obs_dim": self.obs_dim, "act_dim": self.act_dim, "capacity": self.capacity,
                "size": self.size, "total_added": self.total_added}
        save_params(stem, {"buffer": cols}, meta)

    @classmethod
    def restore(cls, stem) -> "ReplayBuffer":
        groups, meta = load_params(stem)
        buf = cls(meta["obs_dim"], meta["act_dim"], meta["capacity"])
        cols = groups["buffer"]
        buf._alloc(max(meta["size"], 1))
        for k in buf.data:
            buf.data[k][: meta["size"]] = cols[k].astype(buf.data[k].dtype)
        buf.size = meta["size"]
        buf.ptr = buf.size % buf.capacity
        buf.total_added = meta["total_added"]
        return buf


def sample_batch(buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement."""
    if buffer.size == 0:
        raise ValueError("cannot sample from an empty buffer")
    idx = rng.integers(0, buffer.size, size=batch_size)
    d = buffer.data
    return Batch(
        d["obs"][idx], d["a_base"][idx], d["a_res"][idx], d["a_exec"][idx], d["reward"][idx],
        d["next_obs"][idx], d["done"][idx], d["episode_id"][idx], d["uid"][idx],
    )


# --------------------------------------------------------------------------- rollout
class EpisodeRunner:
    """Single-episode stepping loop with automatic resets.

    Each new episode is seeded from ``rng`` so warmup and online collection
    stay reproducible given the run seed.
    """

    def __init__(self, env, base_policy, rng: np.random.Generator):
        self.env, self.base, self.rng = env, base_policy, rng
        self.episode_id = -1
        self.episode_success: list[bool] = []
        self._new_episode()

    def _new_episode(self) -> None:
        self.episode_id += 1
        self.state = self.env.reset(seed=int(self.rng.integers(2**63 - 1)))

    @property
    def obs(self) -> np.ndarray:
        return self.state.obs[0]

    def base_action(self) -> np.ndarray:
        return self.base(self.obs)

    def step(self, buffer: ReplayBuffer, a_base, a_res, a_exec, source) -> bool:
        """Execute ``a_exec``, store the transition, reset on episode end.

        Returns True when this step started a fresh episode.
        """
        obs = self.obs
        self.state, res = self.env.step(self.state, a_exec)
        done = bool(res.done[0])
        buffer.add(obs, a_base, a_res, a_exec, float(res.reward[0]), res.next_observation[0], done,
                   self.episode_id, source)
        if done:
            self.episode_success.append(bool(res.success[0]))
            self._new_episode()
        return done


def collect_warmup(strategy: WarmupStrategy, env, base_policy, residual_policy, rng, buffer: ReplayBuffer,
                   lam: float = 0.1, runner: EpisodeRunner | None = None) -> EpisodeRunner:
    """Append exactly ``strategy.budget`` transitions to ``buffer``.

    Residual-style perturbations are stored as ``a_res = offset / lam`` so
    that ``clip(a_base + lam * a_res)`` reproduces the executed action.
    """
    if lam <= 0:
        raise ConfigError("lambda must be positive for warmup bookkeeping")
    runner = runner or EpisodeRunner(env, base_policy, rng)
    d = env.act_dim
    zero = np.zeros(d)
    kind = strategy.kind
    tc_bias = rng.normal(0.0, strategy.tc_sigma, d)
    tc_on = kind == "tc-noise"
    for _ in range(strategy.budget):
        a_base = runner.base_action()
        use_policy = kind == "full-action" or (kind == "epsilon-greedy" and rng.random() < strategy.epsilon)
        if use_policy:
            a_res = residual_policy.sample(runner.obs, rng)[0][0]
            src = SRC_POLICY
        elif kind == "gaussian-noise":
            a_res = rng.normal(0.0, strategy.sigma, d) / lam
            src = SRC_NOISE
        elif tc_on:
            a_res = (tc_bias + rng.normal(0.0, strategy.tc_jitter, d)) / lam
            src = SRC_NOISE
        else:
            a_res, src = zero, SRC_BASE
        a_exec = combine(a_base, a_res, lam)
        if runner.step(buffer, a_base, a_res, a_exec, src):
            tc_bias = rng.normal(0.0, strategy.tc_sigma, d)
            if kind == "tc-noise-anchor":
                tc_on = not tc_on
    return runner
