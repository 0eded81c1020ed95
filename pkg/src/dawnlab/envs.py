"""Seedable sparse-reward toy control tasks.

Every task keeps its state in arrays with a leading batch axis so that the
same code runs one training episode or a vector of evaluation episodes.
Rewards follow the shifted sparse convention: 0 on the success step,
-1 otherwise. Episodes end on success or at the horizon.

The observation exposes a goal estimate that is off by a per-episode bias
with a fixed systematic component. A proportional controller driven by the
estimate is therefore competent but imperfect, and a small state-dependent
correction is enough to fix it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from dawnlab.errors import ConfigError, NumericalError


@dataclass
class EnvState:
    obs: np.ndarray  # (n, obs_dim)
    t: int
    rng: np.random.Generator
    goal_params: dict[str, np.ndarray]
    done: np.ndarray  # (n,) episodes already finished (batched use)

    @property
    def observation(self) -> np.ndarray:
        return self.obs[0]

    @property
    def step_index(self) -> int:
        return self.t


@dataclass
class StepResult:
    next_observation: np.ndarray
    reward: np.ndarray | float
    done: np.ndarray | bool
    success: np.ndarray | bool


class ToyEnv:
    """Base class. Subclasses define ``_init_task``, ``_dynamics`` and ``_observe``."""

    env_id = "toy"
    obs_dim: int
    act_dim: int
    horizon: int
    max_step: float = 0.05

    def __init__(self, **overrides):
        for k, v in overrides.items():
            if not hasattr(self, k):
                raise ConfigError(f"{type(self).__name__} has no parameter {k!r}")
            setattr(self, k, v)

    # -- public functional API ---------------------------------------------------
    def reset(self, seed: int | None = None, n: int = 1, rng: np.random.Generator | None = None) -> EnvState:
        rng = rng if rng is not None else np.random.default_rng(seed)
        gp = self._init_task(rng, n)
        return EnvState(self._observe(gp), 0, rng, gp, np.zeros(n, dtype=bool))

    def step(self, state: EnvState, action) -> tuple[EnvState, StepResult]:
        action = np.asarray(action, dtype=np.float64).reshape(len(state.done), self.act_dim)
        if not np.all(np.isfinite(action)):
            raise NumericalError(f"non-finite action {action}")
        action = np.clip(action, -1.0, 1.0)
        gp = {k: v.copy() for k, v in state.goal_params.items()}
        live = ~state.done
        success = self._dynamics(gp, action, live) & live
        t = state.t + 1
        done = state.done | success | (t >= self.horizon)
        reward = np.where(success, 0.0, -1.0)
        obs = self._observe(gp)
        new = EnvState(obs, t, state.rng, gp, done)
        return new, StepResult(obs, reward, done & live, success)

    def true_goal(self, state: EnvState) -> np.ndarray:
        return state.goal_params["goal"]

    # -- hooks -------------------------------------------------------------------
    def _init_task(self, rng, n) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def _dynamics(self, gp, action, live) -> np.ndarray:
        raise NotImplementedError

    def _observe(self, gp) -> np.ndarray:
        raise NotImplementedError


class PointInsert2D(ToyEnv):
    """Planar peg insertion into a slot that opens toward -x.

    Observation: end-effector xy, last velocity xy (in action units) and the
    noisy slot estimate xy in world coordinates. The insertion is decided
    when the peg crosses the slot mouth (the vertical line through the true
    slot centre): it succeeds if the lateral offset to the centre is within
    ``tolerance`` and the heading lies within ``approach_band_deg`` of +x.
    Any other crossing jams the peg against the slot face, which freezes it
    for the rest of the episode.
    """

    env_id = "point-insert-2d"
    obs_dim = 6
    act_dim = 2
    horizon = 200
    tolerance = 0.01
    approach_band_deg = 45.0
    slot_x_range = (0.1, 0.5)
    slot_y_range = (-0.3, 0.3)
    start_dx_range = (0.4, 0.6)
    start_dy_range = (-0.15, 0.15)
    bias_mean = (0.0, 0.010)
    bias_std = 0.003

    def _init_task(self, rng, n):
        goal = np.column_stack([rng.uniform(*self.slot_x_range, n), rng.uniform(*self.slot_y_range, n)])
        start = goal - np.column_stack([rng.uniform(*self.start_dx_range, n), rng.uniform(*self.start_dy_range, n)])
        bias = np.asarray(self.bias_mean) + self.bias_std * rng.standard_normal((n, 2))
        return {"goal": goal, "pos": start, "vel": np.zeros((n, 2)), "bias": bias, "jammed": np.zeros(n, dtype=bool)}

    def _dynamics(self, gp, action, live):
        moving = live & ~gp["jammed"]
        a = np.where(moving[:, None], action, 0.0)
        old = gp["pos"]
        new = old + self.max_step * a
        crossing = moving & (old[:, 0] < gp["goal"][:, 0]) & (new[:, 0] >= gp["goal"][:, 0])
        vx, vy = a[:, 0], a[:, 1]
        heading_ok = (vx > 0) & (np.abs(vy) <= np.tan(np.deg2rad(self.approach_band_deg)) * vx)
        aligned = np.abs(new[:, 1] - gp["goal"][:, 1]) <= self.tolerance
        success = crossing & aligned & heading_ok
        jam = crossing & ~success
        new[jam, 0] = gp["goal"][jam, 0]
        gp["jammed"] = gp["jammed"] | jam
        gp["pos"] = new
        gp["vel"] = a
        return success

    def _observe(self, gp):
        return np.concatenate([gp["pos"], gp["vel"], gp["goal"] + gp["bias"]], axis=1)


class ReachND(ToyEnv):
    """n-dimensional goal reaching (default 7 action dims), tolerance 0.05."""

    env_id = "reach-nd"
    horizon = 100
    tolerance = 0.05
    n_dims = 7
    goal_range = (-0.5, 0.5)
    start_range = (-0.2, 0.2)
    bias_mean = 0.018
    bias_std = 0.008

    def __init__(self, **overrides):
        super().__init__(**overrides)
        self.act_dim = int(self.n_dims)
        self.obs_dim = 2 * self.act_dim

    def _init_task(self, rng, n):
        d = self.act_dim
        goal = rng.uniform(*self.goal_range, (n, d))
        start = rng.uniform(*self.start_range, (n, d))
        bias = self.bias_mean + self.bias_std * rng.standard_normal((n, d))
        return {"goal": goal, "pos": start, "bias": bias}

    def _dynamics(self, gp, action, live):
        gp["pos"] = gp["pos"] + self.max_step * np.where(live[:, None], action, 0.0)
        return np.linalg.norm(gp["pos"] - gp["goal"], axis=1) <= self.tolerance

    def _observe(self, gp):
        return np.concatenate([gp["pos"], gp["goal"] + gp["bias"] - gp["pos"]], axis=1)


class DriftPush(ToyEnv):
    """Push a sliding object to a target under per-episode random friction.

    The object keeps momentum: ``vel <- (1 - friction) * vel + accel * action``.
    Success needs the object within ``tolerance`` of the target and moving
    slower than ``max_speed``.
    """

    env_id = "drift-push"
    obs_dim = 6
    act_dim = 2
    horizon = 200
    tolerance = 0.02
    max_speed = 0.01
    accel = 0.01
    friction_range = (0.15, 0.6)
    goal_range = (-0.5, 0.5)
    start_radius = (0.3, 0.6)
    bias_mean = (0.016, 0.0)
    bias_std = 0.006
    vel_scale = 10.0

    def _init_task(self, rng, n):
        goal = rng.uniform(*self.goal_range, (n, 2))
        ang = rng.uniform(0, 2 * np.pi, n)
        r = rng.uniform(*self.start_radius, n)
        start = goal + np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        bias = np.asarray(self.bias_mean) + self.bias_std * rng.standard_normal((n, 2))
        fr = rng.uniform(*self.friction_range, (n, 1))
        return {"goal": goal, "pos": start, "vel": np.zeros((n, 2)), "bias": bias, "friction": fr}

    def _dynamics(self, gp, action, live):
        a = np.where(live[:, None], action, 0.0)
        vel = (1.0 - gp["friction"]) * gp["vel"] + self.accel * a
        gp["vel"] = np.where(live[:, None], vel, 0.0)
        gp["pos"] = gp["pos"] + gp["vel"]
        dist = np.linalg.norm(gp["pos"] - gp["goal"], axis=1)
        speed = np.linalg.norm(gp["vel"], axis=1)
        return (dist <= self.tolerance) & (speed <= self.max_speed)

    def _observe(self, gp):
        est = gp["goal"] + gp["bias"]
        return np.concatenate([gp["pos"], self.vel_scale * gp["vel"], est - gp["pos"]], axis=1)


REGISTRY: dict[str, Callable[..., ToyEnv]] = {
    PointInsert2D.env_id: PointInsert2D,
    ReachND.env_id: ReachND,
    DriftPush.env_id: DriftPush,
}


def make_env(env_id: str, **overrides) -> ToyEnv:
    try:
        cls = REGISTRY[env_id]
    except KeyError:
        raise ConfigError(f"unknown env id {env_id!r}; known: {sorted(REGISTRY)}") from None
    return cls(**overrides)


def reset(env_id: str, seed: int, **overrides) -> EnvState:
    return make_env(env_id, **overrides).reset(seed)


def reset_many(env: ToyEnv, seeds) -> EnvState:
    """Batch of episodes, each identical to ``env.reset(seed)`` for its seed."""
    states = [env.reset(seed=int(s)) for s in seeds]
    gp = {k: np.concatenate([st.goal_params[k] for st in states]) for k in states[0].goal_params}
    return EnvState(env._observe(gp), 0, states[0].rng, gp, np.zeros(len(states), dtype=bool))


def optimal_controller(env: ToyEnv, state: EnvState) -> np.ndarray:
    """Scripted oracle with access to the true goal (testing only)."""
    gp = state.goal_params
    err = gp["goal"] - gp["pos"]
    if isinstance(env, DriftPush):
        # Dead-beat: pick the action that lands on the goal with zero velocity when reachable.
        want_vel = err
        a = (want_vel - (1.0 - gp["friction"]) * gp["vel"]) / env.accel
        return np.clip(a * 0.5, -1.0, 1.0)
    return np.clip(err / env.max_step, -1.0, 1.0)
