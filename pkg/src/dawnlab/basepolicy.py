"""Frozen scripted controllers used as the base policy.

They read the (biased) goal estimate from the observation and never change
after construction. Competence is calibrated per task so the base succeeds
in roughly half of the episodes; see ``demos/calibrate_base.py``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dawnlab.errors import ConfigError


@dataclass(frozen=True)
class BasePolicy:
    """Proportional (optionally damped) controller toward an observed goal offset.

    ``target_slice`` selects the observation entries holding ``goal - pos``,
    or the goal itself when ``origin_slice`` names the position entries;
    ``push`` extends the first offset component so an insertion controller
    aims slightly past the slot mouth. The commanded action is
    ``gain * offset / max_step`` minus
    ``damping * velocity`` and is clipped to [-1, 1]. With ``kind ==
    "waypoint"`` the controller first aims at a point ``standoff`` behind
    the goal along -x and switches to the goal once within ``switch_radius``
    of that waypoint's line.
    """

    kind: str
    gain: float
    target_slice: tuple[int, int]
    max_step: float = 0.05
    velocity_slice: tuple[int, int] | None = None
    damping: float = 0.0
    standoff: float = 0.0
    switch_radius: float = 0.02
    push: float = 0.0
    origin_slice: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("proportional-biased", "waypoint"):
            raise ConfigError(f"unknown controller kind {self.kind!r}")

    def __call__(self, observation) -> np.ndarray:
        return base_action(self, observation)


def base_action(policy: BasePolicy, observation) -> np.ndarray:
    obs = np.asarray(observation, dtype=np.float64)
    lo, hi = policy.target_slice
    offset = obs[..., lo:hi]
    if policy.origin_slice is not None:
        offset = offset - obs[..., slice(*policy.origin_slice)]
    if policy.push:
        offset = offset.copy()
        offset[..., 0] += policy.push
    if policy.kind == "waypoint":
        lateral = np.abs(offset[..., 1:]).max(axis=-1, keepdims=True) if offset.shape[-1] > 1 else 0.0
        behind = np.zeros_like(offset)
        behind[..., 0] = policy.standoff
        use_wp = (lateral > policy.switch_radius) & (offset[..., :1] > 0)
        offset = np.where(use_wp, offset - behind, offset)
    a = policy.gain * offset / policy.max_step
    if policy.velocity_slice is not None and policy.damping:
        vlo, vhi = policy.velocity_slice
        a = a - policy.damping * obs[..., vlo:vhi]
    return np.clip(a, -1.0, 1.0)


DEFAULTS: dict[str, BasePolicy] = {
    "point-insert-2d": BasePolicy(
        "proportional-biased", gain=0.5, target_slice=(4, 6), origin_slice=(0, 2), push=0.05
    ),
    "point-insert-2d/waypoint": BasePolicy(
        "waypoint", gain=0.5, target_slice=(4, 6), origin_slice=(0, 2), standoff=0.05, switch_radius=0.01,
        push=0.05,
    ),
    "reach-nd": BasePolicy("proportional-biased", gain=0.25, target_slice=(7, 14)),
    "drift-push": BasePolicy(
        "proportional-biased", gain=0.06, target_slice=(4, 6), velocity_slice=(2, 4), damping=2.0
    ),
}


def make_base_policy(policy_id: str, env=None) -> BasePolicy:
    if policy_id == "reach-nd" and env is not None and env.act_dim != 7:
        d = env.act_dim
        return BasePolicy("proportional-biased", gain=0.25, target_slice=(d, 2 * d))
    try:
        return DEFAULTS[policy_id]
    except KeyError:
        raise ConfigError(f"unknown base policy {policy_id!r}; known: {sorted(DEFAULTS)}") from None


def rollout_success(env, policy, seeds, residual=None) -> np.ndarray:
    """Run one episode per seed (batched) with ``policy``; return per-episode success."""
    from dawnlab.envs import reset_many

    state = reset_many(env, seeds)
    success = np.zeros(len(state.done), dtype=bool)
    while not state.done.all():
        a = policy(state.obs)
        if residual is not None:
            a = np.clip(a + residual(state.obs), -1, 1)
        state, res = env.step(state, a)
        success |= res.success
    return success
