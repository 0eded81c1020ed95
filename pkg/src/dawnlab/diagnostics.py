"""Measurement instruments: grounding error, critic sensitivity, value
difference and the Q-anatomy report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dawnlab.agent import combine
from dawnlab.diffcore import Tensor
from dawnlab.envs import reset_many

DIVERGENCE_FACTOR = 5.0


# --------------------------------------------------------------------------- anchors
@dataclass
class AnchorSet:
    """Held-out base-policy state/action pairs with Monte Carlo returns."""

    obs: np.ndarray
    a_base: np.ndarray
    returns: np.ndarray
    episode: np.ndarray
    success: np.ndarray  # per episode

    def __len__(self) -> int:
        return len(self.returns)

    @property
    def mc_mean(self) -> float:
        return float(self.returns.mean())


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """G_t = sum_k gamma^k r_{t+k} within one finished episode."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def collect_anchorset(env, base_policy, n_episodes: int, seed: int, gamma: float) -> AnchorSet:
    seeds = np.random.SeedSequence(seed).generate_state(n_episodes, dtype=np.uint64)
    state = reset_many(env, seeds)
    obs_t, act_t, rew_t, live_t = [], [], [], []
    success = np.zeros(n_episodes, dtype=bool)
    while not state.done.all():
        live = ~state.done
        a = base_policy(state.obs)
        obs_t.append(state.obs)
        act_t.append(a)
        live_t.append(live)
        state, res = env.step(state, a)
        rew_t.append(res.reward)
        success |= res.success
    obs_l, act_l, ret_l, ep_l = [], [], [], []
    live = np.array(live_t)
    rew = np.array(rew_t)
    for e in range(n_episodes):
        steps = np.flatnonzero(live[:, e])
        obs_l.append(np.array([obs_t[t][e] for t in steps]))
        act_l.append(np.array([act_t[t][e] for t in steps]))
        ret_l.append(discounted_returns(rew[steps, e], gamma))
        ep_l.append(np.full(len(steps), e))
    return AnchorSet(np.concatenate(obs_l), np.concatenate(act_l), np.concatenate(ret_l),
                     np.concatenate(ep_l), success)


# --------------------------------------------------------------------------- metrics
def anchor_q(critic, anchors: AnchorSet, reduce: str = "mean") -> np.ndarray:
    return critic.q_value(anchors.obs, anchors.a_base, reduce=reduce)


def grounding_error(critic, anchors: AnchorSet, reduce: str = "mean") -> float:
    """Mean |Q(s, a_base) - G| over the anchor pairs (zero residual)."""
    if len(anchors) == 0:
        raise ValueError("anchor set is empty")
    return float(np.mean(np.abs(anchor_q(critic, anchors, reduce) - anchors.returns)))


def critic_sensitivity(critic, obs, a_base, policy, lam: float, route: str = "residual") -> float:
    """Mean ||d Q(s, a_base + lam * a_res) / d a_res|| at the policy mean.

    ``route="action"`` differentiates with respect to the combined action
    and scales by ``lam``; the two agree wherever the action is not clipped.
    """
    obs = np.atleast_2d(obs)
    a_res = policy.mean_action(obs) if policy is not None else np.zeros_like(a_base)
    if route == "residual":
        leaf = Tensor(a_res, requires_grad=True)
        act = combine(a_base, leaf, lam)
        scale = 1.0
    elif route == "action":
        leaf = Tensor(combine(a_base, a_res, lam), requires_grad=True)
        act, scale = leaf, lam
    else:
        raise ValueError(f"unknown route {route!r}")
    critic.q_tensor(obs, act, reduce="mean").sum().backward()
    return float(scale * np.linalg.norm(leaf.grad, axis=-1).mean())


def value_difference(critic, obs, a_base, policy, lam: float, a_res=None) -> float:
    """Mean |Q(s, a_base + lam * a_res) - Q(s, a_base)|, residual at the policy mean."""
    obs = np.atleast_2d(obs)
    if a_res is None:
        a_res = policy.mean_action(obs)
    q_full = critic.q_value(obs, combine(a_base, a_res, lam))
    q_base = critic.q_value(obs, a_base)
    return float(np.mean(np.abs(q_full - q_base)))


def is_diverged(value: float, initial: float, factor: float = DIVERGENCE_FACTOR) -> bool:
    return bool(value > factor * initial)


@dataclass
class MetricRecord:
    step: int
    grounding_error: float
    sensitivity: float
    value_difference: float
    alpha: float
    success_rate: float
    losses: dict[str, float] = field(default_factory=dict)
    extra: dict[str, float] = field(default_factory=dict)
    diverged: bool = False

    def items(self):
        yield "grounding_error", self.grounding_error
        yield "sensitivity", self.sensitivity
        yield "value_difference", self.value_difference
        yield "alpha", self.alpha
        yield "success_rate", self.success_rate
        yield from self.losses.items()
        yield from self.extra.items()
        yield "diverged", float(self.diverged)

    def check_finite(self) -> None:
        bad = [k for k, v in self.items() if not math.isfinite(v)]
        if bad:
            from dawnlab.errors import NumericalError

            raise NumericalError(f"non-finite metrics at step {self.step}: {bad}")


# --------------------------------------------------------------------------- anatomy
def power_iteration(cov, iters: int = 100, tol: float = 1e-9):
    """Leading eigenvector of a symmetric PSD matrix.

    Returns ``(vector, eigenvalue, degenerate)``; a (near) zero matrix yields
    the first coordinate axis with ``degenerate=True``.
    """
    cov = np.asarray(cov, dtype=np.float64)
    d = cov.shape[0]
    if np.trace(cov) <= 1e-14:
        e = np.zeros(d)
        e[0] = 1.0
        return e, 0.0, True
    # deterministic start that is not orthogonal to a generic eigenvector
    v = np.linspace(1.0, 2.0, d)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = cov @ v
        n = np.linalg.norm(w)
        if n == 0.0:
            break
        w /= n
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v, float(v @ cov @ v), False


@dataclass
class AnatomyReport:
    component: np.ndarray
    degenerate: bool
    proj_base: np.ndarray
    proj_full: np.ndarray
    q_base: np.ndarray
    q_full: np.ndarray
    bin_edges: np.ndarray
    hist_base: np.ndarray
    hist_full: np.ndarray

    @property
    def delta_mu(self) -> float:
        return float(self.q_full.mean() - self.q_base.mean())

    @property
    def projection_separation(self) -> float:
        """|mean difference| of the projections in pooled standard deviations."""
        pooled = math.sqrt(0.5 * (self.proj_base.var(ddof=1) + self.proj_full.var(ddof=1)))
        gap = abs(self.proj_full.mean() - self.proj_base.mean())
        if pooled == 0.0:
            return 0.0 if gap == 0.0 else math.inf
        return gap / pooled

    def summary(self) -> dict:
        return {
            "component": self.component.tolist(),
            "degenerate": self.degenerate,
            "delta_mu": self.delta_mu,
            "q_base_mean": float(self.q_base.mean()),
            "q_full_mean": float(self.q_full.mean()),
            "proj_base_mean": float(self.proj_base.mean()),
            "proj_full_mean": float(self.proj_full.mean()),
            "projection_separation": self.projection_separation,
            "n": int(len(self.q_base)),
        }

    def save(self, stem) -> None:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".json").write_text(json.dumps(self.summary(), indent=2) + "\n")
        with open(stem.with_suffix(".csv"), "w", newline="\n", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count_base", "count_full"])
            for i in range(len(self.hist_base)):
                w.writerow([repr(self.bin_edges[i]), repr(self.bin_edges[i + 1]),
                            int(self.hist_base[i]), int(self.hist_full[i])])


def q_anatomy(critic, obs, a_base, policy, lam: float, rng=None, bins: int = 30, a_res=None) -> AnatomyReport:
    """Compare base and combined actions and their Q-values on a batch of states.

    Residuals are sampled from the policy unless ``a_res`` is given.
    """
    obs = np.atleast_2d(obs)
    a_base = np.atleast_2d(a_base)
    if a_res is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        a_res = policy.sample(obs, rng)[0]
    a_full = combine(a_base, a_res, lam)
    executed = np.concatenate([a_base, a_full])
    centered = executed - executed.mean(axis=0)
    cov = centered.T @ centered / max(len(executed) - 1, 1)
    pc, _, degenerate = power_iteration(cov)
    q_base = critic.q_value(obs, a_base)
    q_full = critic.q_value(obs, a_full)
    lo = min(q_base.min(), q_full.min())
    hi = max(q_base.max(), q_full.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return AnatomyReport(
        pc, degenerate, a_base @ pc, a_full @ pc, q_base, q_full, edges,
        np.histogram(q_base, edges)[0], np.histogram(q_full, edges)[0],
    )
