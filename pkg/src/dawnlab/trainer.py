"""Residual SAC training: Bellman targets, critic objectives, actor and
temperature updates, and the two-phase training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dawnlab.agent import CriticEnsemble, ResidualPolicy, c51_vmin, combine, ema_update
from dawnlab.basepolicy import make_base_policy
from dawnlab.buffer import ReplayBuffer, SRC_BASE, SRC_POLICY, collect_warmup, sample_batch
from dawnlab.config import RunConfig
from dawnlab.diagnostics import (
    AnchorSet,
    MetricRecord,
    anchor_q,
    collect_anchorset,
    critic_sensitivity,
    grounding_error,
    is_diverged,
    value_difference,
)
from dawnlab.diffcore import Adam, AdamState, adam_step, copy_params, grads_of, leaves, quantile_huber, save_params
from dawnlab.envs import make_env, reset_many
from dawnlab.errors import NumericalError

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------- targets
def next_action(batch, policy: ResidualPolicy, base, lam: float, rng):
    """Resample a' = a'_base + lam * a'_res for every next observation."""
    noise = rng.standard_normal((len(batch), policy.act_dim))
    a_res, logp = policy.rsample(batch.next_obs, noise)
    a = combine(base(batch.next_obs), a_res.data, lam)
    return a.astype(batch.obs.dtype, copy=False), logp.data


def _bootstrap(batch, gamma):
    return gamma * (1.0 - batch.done.astype(np.float64))


def soft_target(batch, critic: CriticEnsemble, policy, alpha: float, gamma: float, base, lam: float, rng):
    """y = r + gamma (1 - done) (min_k Q'_k(s', a') - alpha log pi(a'_res | s'))."""
    a_next, logp = next_action(batch, policy, base, lam, rng)
    q_next = critic.q_value(batch.next_obs, a_next, reduce="min", target=True)
    return batch.reward + _bootstrap(batch, gamma) * (q_next - alpha * logp)


def hard_target(batch, critic, policy, gamma, base, lam, rng):
    return soft_target(batch, critic, policy, 0.0, gamma, base, lam, rng)


# --------------------------------------------------------------------------- critic losses
def _apply(critic: CriticEnsemble, nodes, loss, opt: Adam) -> None:
    if not np.isfinite(loss.data):
        raise NumericalError(f"non-finite critic loss {loss.data}")
    loss.backward()
    critic.params = opt.step(critic.params, grads_of(nodes))


def critic_update_scalar(batch, critic: CriticEnsemble, targets, opt: Adam | None = None) -> float:
    """Sum over heads of mean squared TD error; returns the per-head mean."""
    nodes = leaves(critic.params)
    q = critic.q_tensor(batch.obs, batch.a_exec, params=nodes)  # (E, B)
    diff = q - np.asarray(targets, dtype=q.data.dtype)
    loss = (diff * diff).mean(axis=1).sum()
    if opt is not None:
        _apply(critic, nodes, loss, opt)
    return float(loss.data) / critic.n_heads


def project_c51(probs, support, rewards, dones, gamma, shift) -> np.ndarray:
    """Project r + gamma (1 - done)(z - shift) onto the fixed atoms."""
    vmin, vmax = support[0], support[-1]
    n = len(support)
    dz = (vmax - vmin) / (n - 1)
    bsz = len(rewards)
    tz = rewards[:, None] + (gamma * (1.0 - dones.astype(np.float64)))[:, None] * (support[None, :] - shift[:, None])
    tz = np.minimum(np.maximum(tz, vmin), vmax)
    pos = (tz - vmin) / dz
    lo = np.floor(pos).astype(np.int64)
    hi = np.ceil(pos).astype(np.int64)
    same = lo == hi
    w_lo = np.where(same, probs, probs * (hi - pos))
    w_hi = np.where(same, 0.0, probs * (pos - lo))
    rows = (np.arange(bsz) * n)[:, None]
    idx = np.stack([rows + lo, rows + hi], axis=-1).ravel()
    w = np.stack([w_lo, w_hi], axis=-1).ravel()
    return np.bincount(idx, weights=w, minlength=bsz * n).reshape(bsz, n)


def _lower_head(values: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Per sample, the head (axis 0) with the lowest expectation."""
    k = means.argmin(axis=0)
    return values[k, np.arange(values.shape[1])]


def critic_update_c51(batch, critic, policy, alpha, gamma, base, lam, rng, opt=None) -> float:
    a_next, logp = next_action(batch, policy, base, lam, rng)
    dist = critic.distribution(batch.next_obs, a_next, target=True)
    probs = _lower_head(dist.probs, dist.probs @ critic.support)
    target = project_c51(probs, critic.support, batch.reward, batch.done, gamma, alpha * logp)
    target = target.astype(critic.dtype, copy=False)
    nodes = leaves(critic.params)
    logits = critic.raw(batch.obs, batch.a_exec, params=nodes)
    loss = -(logits.log_softmax(-1) * target).sum(axis=-1).mean(axis=1).sum()
    if opt is not None:
        _apply(critic, nodes, loss, opt)
    return float(loss.data) / critic.n_heads


def quantile_targets(batch, theta_next, gamma, alpha, logp) -> np.ndarray:
    boot = _bootstrap(batch, gamma)[:, None]
    return batch.reward[:, None] + boot * (theta_next - (alpha * logp)[:, None])


def critic_update_quantile(batch, critic, policy, alpha, gamma, base, lam, rng, kappa=1.0, opt=None) -> float:
    a_next, logp = next_action(batch, policy, base, lam, rng)
    theta = critic.raw(batch.next_obs, a_next, target=True).data  # (E, B, N)
    theta_next = _lower_head(theta, theta.mean(axis=-1))
    y = quantile_targets(batch, theta_next, gamma, alpha, logp)
    return _quantile_regress(batch, critic, y, kappa, opt)


def truncate_quantiles(theta: np.ndarray, drop: int, mode: str = "pooled") -> np.ndarray:
    """theta (K, B, N) -> kept target atoms (B, K * (N - drop)), sorted.

    ``pooled`` sorts all K*N atoms together and drops the top K*drop;
    ``per-head`` drops the top ``drop`` atoms of every head before pooling.
    """
    k, b, n = theta.shape
    if drop >= n:
        from dawnlab.errors import ConfigError

        raise ConfigError(f"cannot drop {drop} of {n} quantiles")
    if mode == "pooled":
        pooled = np.sort(theta.transpose(1, 0, 2).reshape(b, k * n), axis=-1)
        return pooled[:, : k * (n - drop)]
    if mode == "per-head":
        kept = np.sort(theta, axis=-1)[..., : n - drop]
        return np.sort(kept.transpose(1, 0, 2).reshape(b, k * (n - drop)), axis=-1)
    raise ValueError(f"unknown truncation mode {mode!r}")


def critic_update_tqc(batch, critic, policy, alpha, gamma, base, lam, rng, kappa=1.0, opt=None) -> float:
    a_next, logp = next_action(batch, policy, base, lam, rng)
    theta = critic.raw(batch.next_obs, a_next, target=True).data
    kept = truncate_quantiles(theta, critic.drop_per_head, critic.truncation)
    y = quantile_targets(batch, kept, gamma, alpha, logp)
    return _quantile_regress(batch, critic, y, kappa, opt)


def _quantile_regress(batch, critic, y, kappa, opt) -> float:
    nodes = leaves(critic.params)
    theta = critic.raw(batch.obs, batch.a_exec, params=nodes)  # (E, B, N)
    loss = quantile_huber(theta, y, critic.taus, kappa) * critic.n_heads
    if opt is not None:
        _apply(critic, nodes, loss, opt)
    return float(loss.data) / critic.n_heads


# --------------------------------------------------------------------------- actor / alpha
def actor_update(batch, policy: ResidualPolicy, critic: CriticEnsemble, alpha: float, lam: float,
                 noise, opt: Adam | None = None):
    """loss = mean(alpha log pi - Q(s, a_base + lam a_res)); critic held fixed.

    Returns ``(loss, log_probs)``; the policy parameters are updated in place
    when ``opt`` is given.
    """
    nodes = leaves(policy.params)
    a_res, logp = policy.rsample(batch.obs, noise, params=nodes)
    q = critic.policy_value(batch.obs, combine(batch.a_base, a_res, lam))
    loss = (logp * alpha - q).mean()
    if not np.isfinite(loss.data):
        raise NumericalError(f"non-finite actor loss {loss.data}")
    if opt is not None:
        loss.backward()
        policy.params = opt.step(policy.params, grads_of(nodes))
    return float(loss.data), logp.data


@dataclass
class AlphaState:
    log_alpha: float
    mode: str = "auto"
    lr: float = 1e-4
    opt: AdamState = field(default_factory=AdamState)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


def alpha_gradient(log_alpha: float, log_probs, target_entropy: float) -> float:
    """d/d log_alpha of mean(-exp(log_alpha) (log pi + target_entropy))."""
    return float(-np.exp(log_alpha) * np.mean(np.asarray(log_probs) + target_entropy))


def alpha_update(state: AlphaState, log_probs, target_entropy: float) -> float:
    if state.mode == "fixed":
        return state.alpha
    g = alpha_gradient(state.log_alpha, log_probs, target_entropy)
    new, state.opt = adam_step({"log_alpha": np.array(state.log_alpha)}, {"log_alpha": np.array(g)},
                               state.opt, state.lr)
    state.log_alpha = float(new["log_alpha"])
    return state.alpha


def progressive_gate(t: int, horizon: int, rng) -> bool:
    """True (use the residual) with probability min(t / H, 1)."""
    if horizon <= 0:
        raise ValueError("H must be positive")
    return bool(rng.random() < min(t / horizon, 1.0))


# --------------------------------------------------------------------------- agent bundle
@dataclass
class Learner:
    cfg: RunConfig
    policy: ResidualPolicy
    critic: CriticEnsemble
    base: object
    alpha: AlphaState
    critic_opt: Adam
    actor_opt: Adam
    target_entropy: float

    @classmethod
    def build(cls, cfg: RunConfig, env, rng) -> "Learner":
        base = make_base_policy(cfg.base_policy or cfg.env_id, env)
        policy = ResidualPolicy.create(env.obs_dim, env.act_dim, cfg.hidden, cfg.actor_norm, rng, cfg.init_log_std)
        v_min = cfg.v_min if cfg.v_min is not None else c51_vmin(cfg.gamma, env.horizon)
        critic = CriticEnsemble.create(
            env.obs_dim, env.act_dim, cfg.hidden, cfg.critic_norm, cfg.critic_head, rng,
            n_atoms=cfg.n_atoms, v_min=v_min, v_max=cfg.v_max, n_quantiles=cfg.n_quantiles,
            n_heads=cfg.tqc_heads if cfg.critic_head == "tqc" else 2, drop_per_head=cfg.tqc_drop,
            kappa=cfg.kappa, truncation=cfg.tqc_truncation,
        )
        dt = np.dtype(cfg.dtype)
        policy.astype(dt)
        critic.astype(dt)
        te = cfg.target_entropy if cfg.target_entropy is not None else -float(env.act_dim)
        return cls(cfg, policy, critic, base, AlphaState(float(np.log(cfg.alpha_init)), cfg.alpha_mode, cfg.lr),
                   Adam(cfg.lr, cfg.grad_clip), Adam(cfg.lr, cfg.grad_clip), te)

    def cast(self, batch):
        """Batch arrays in the network dtype."""
        dt = self.critic.dtype
        if batch.obs.dtype == dt:
            return batch
        return replace(batch, obs=batch.obs.astype(dt), next_obs=batch.next_obs.astype(dt),
                       a_base=batch.a_base.astype(dt), a_exec=batch.a_exec.astype(dt))

    def critic_step(self, batch, rng, alpha: float | None = None) -> float:
        c, cfg = self.critic, self.cfg
        batch = self.cast(batch)
        alpha = self.alpha.alpha if alpha is None else alpha
        args = (batch, c, self.policy, alpha, cfg.gamma, self.base, cfg.lam, rng)
        if c.head_kind == "scalar":
            y = soft_target(*args)
            loss = critic_update_scalar(batch, c, y, self.critic_opt)
        elif c.head_kind == "c51":
            loss = critic_update_c51(*args, opt=self.critic_opt)
        elif c.head_kind == "quantile":
            loss = critic_update_quantile(*args, kappa=cfg.kappa, opt=self.critic_opt)
        else:
            loss = critic_update_tqc(*args, kappa=cfg.kappa, opt=self.critic_opt)
        ema_update(c, cfg.tau)
        return loss

    def update(self, batch, rng) -> dict[str, float]:
        batch = self.cast(batch)
        critic_loss = self.critic_step(batch, rng)
        noise = rng.standard_normal((len(batch), self.policy.act_dim))
        actor_loss, logp = actor_update(batch, self.policy, self.critic, self.alpha.alpha, self.cfg.lam,
                                        noise, self.actor_opt)
        alpha_update(self.alpha, logp, self.target_entropy)
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "log_pi": float(logp.mean())}

    def snapshot(self) -> dict:
        return {
            "policy": copy_params(self.policy.params),
            "critic": copy_params(self.critic.params),
            "critic_target": copy_params(self.critic.target_params),
            "alpha": {"log_alpha": np.array([self.alpha.log_alpha])},
        }

    def load(self, snap: dict) -> None:
        self.policy.params = copy_params(snap["policy"])
        self.critic.params = copy_params(snap["critic"])
        self.critic.target_params = copy_params(snap["critic_target"])
        self.alpha.log_alpha = float(snap["alpha"]["log_alpha"][0])


# --------------------------------------------------------------------------- evaluation
def evaluate(env, learner: Learner, seeds, deterministic: bool = True, rng=None) -> float:
    """Success rate of the combined policy over one batched episode per seed."""
    state = reset_many(env, seeds)
    success = np.zeros(len(seeds), dtype=bool)
    while not state.done.all():
        if deterministic:
            a_res = learner.policy.mean_action(state.obs)
        else:
            a_res = learner.policy.sample(state.obs, rng)[0]
        a = combine(learner.base(state.obs), a_res, learner.cfg.lam)
        state, res = env.step(state, a)
        success |= res.success
    return float(success.mean())


@dataclass
class RunResult:
    config: RunConfig
    records: list[MetricRecord]
    alpha_trace: list[tuple[int, float]]
    checkpoints: list[tuple[int, dict]]
    buffer_size: int
    status: str = "ok"
    error: str | None = None
    anchors: AnchorSet | None = None
    learner: Learner | None = None
    buffer: ReplayBuffer | None = None
    wallclock: float = 0.0
    # explicit warmup: (step, mean |alpha * log pi|, mean |r|) every 100 updates
    entropy_trace: list[tuple[int, float, float]] = field(default_factory=list)

    def series(self, metric: str) -> tuple[np.ndarray, np.ndarray]:
        steps, vals = [], []
        for r in self.records:
            d = dict(r.items())
            if metric in d:
                steps.append(r.step)
                vals.append(d[metric])
        return np.array(steps), np.array(vals)

    def value_at(self, metric: str, step: int) -> float:
        s, v = self.series(metric)
        i = np.flatnonzero(s <= step)
        if len(i) == 0:
            raise KeyError(f"no {metric} recorded at or before step {step}")
        return float(v[i[-1]])

    def steps_to(self, metric: str, threshold: float) -> float:
        s, v = self.series(metric)
        hit = np.flatnonzero(v >= threshold)
        return float(s[hit[0]]) if len(hit) else float("inf")

    def metric_rows(self):
        """Rows (step, metric, value) in emission order."""
        for r in self.records:
            for k, v in r.items():
                yield r.step, k, v


# --------------------------------------------------------------------------- main loop
def _streams(seed: int):
    keys = ("init", "warmup", "online", "update", "eval", "gate")
    return dict(zip(keys, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(keys)))))


def run_dawn(cfg: RunConfig, out_dir=None, keep_state: bool = False) -> RunResult:
    """Anchor-set collection, Phase 1 warmup, optional explicit critic
    warmup, then Phase 2 online residual SAC."""
    t0 = time.perf_counter()
    env = make_env(cfg.env_id, **cfg.env_kwargs)
    rngs = _streams(cfg.seed)
    learner = Learner.build(cfg, env, rngs["init"])
    anchors = collect_anchorset(env, learner.base, cfg.anchor_episodes, cfg.anchor_seed, cfg.gamma)
    probe = np.random.default_rng(cfg.anchor_seed).permutation(len(anchors))[: cfg.probe_size]
    probe_obs, probe_base = anchors.obs[probe], anchors.a_base[probe]
    eval_seeds = rngs["eval"].integers(0, 2**63 - 1, size=cfg.eval_episodes)
    out_dir = Path(out_dir) if out_dir is not None else None

    buffer = ReplayBuffer(env.obs_dim, env.act_dim, cfg.buffer_capacity)
    runner = collect_warmup(cfg.warmup, env, learner.base, learner.policy, rngs["warmup"], buffer, cfg.lam)

    result = RunResult(cfg, [], [], [], 0, anchors=anchors)
    last_good = learner.snapshot()
    losses: dict[str, list[float]] = {}
    initial_grounding = None

    def record(step: int) -> None:
        nonlocal initial_grounding
        c = learner.critic
        g = grounding_error(c, anchors)
        if initial_grounding is None:
            initial_grounding = g
        q_mean = anchor_q(c, anchors)
        rec = MetricRecord(
            step=step,
            grounding_error=g,
            sensitivity=critic_sensitivity(c, probe_obs, probe_base, learner.policy, cfg.lam),
            value_difference=value_difference(c, probe_obs, probe_base, learner.policy, cfg.lam),
            alpha=learner.alpha.alpha,
            success_rate=evaluate(env, learner, eval_seeds),
            losses={k: float(np.mean(v)) for k, v in losses.items() if v},
            extra={
                "grounding_error_min": grounding_error(c, anchors, reduce="min"),
                "q_anchor_mean": float(q_mean.mean()),
                "mc_anchor_mean": anchors.mc_mean,
                "buffer_size": float(len(buffer)),
            },
            diverged=is_diverged(g, initial_grounding),
        )
        rec.check_finite()
        result.records.append(rec)
        losses.clear()

    def checkpoint(step: int) -> None:
        snap = learner.snapshot()
        result.checkpoints.append((step, snap))
        if out_dir is not None:
            save_params(out_dir / "checkpoints" / f"step_{step:08d}", snap, {"step": step, "variant": cfg.variant})

    try:
        # explicit critic-only warmup between the two phases
        if cfg.explicit_warmup != "none" and len(buffer) > 0:
            urng = rngs["update"]
            soft = cfg.explicit_warmup != "hard"
            result.alpha_trace.append((0, learner.alpha.alpha))
            ent, rew = [], []
            for i in range(1, cfg.explicit_warmup_steps + 1):
                batch = sample_batch(buffer, cfg.batch, urng)
                alpha = None if soft else 0.0
                loss = learner.critic_step(batch, urng, alpha=alpha)
                losses.setdefault("critic_loss", []).append(loss)
                if soft:
                    logp = learner.policy.sample(batch.obs, urng)[1]
                    ent.append(float(np.mean(np.abs(learner.alpha.alpha * logp))))
                    rew.append(float(np.mean(np.abs(batch.reward))))
                    if cfg.explicit_warmup == "soft-auto":
                        alpha_update(learner.alpha, logp, learner.target_entropy)
                if i % 100 == 0:
                    result.alpha_trace.append((i, learner.alpha.alpha))
                    if ent:
                        result.entropy_trace.append((i, float(np.mean(ent)), float(np.mean(rew))))
                        ent, rew = [], []

        record(0)
        last_good = learner.snapshot()
        step = 0
        urng, grng = rngs["update"], rngs["gate"]
        chunk = cfg.env_steps_per_update
        owed = 0.0  # fractional updates carried over from chunks cut short
        while step < cfg.total_steps:
            # chunks end exactly on evaluation and checkpoint steps
            n = min(chunk, cfg.total_steps - step, cfg.eval_every - step % cfg.eval_every,
                    cfg.checkpoint_every - step % cfg.checkpoint_every)
            for _ in range(n):
                a_base = runner.base_action()
                use_res = cfg.progressive_h is None or progressive_gate(step, cfg.progressive_h, grng)
                if use_res:
                    a_res = learner.policy.sample(runner.obs, rngs["online"])[0][0]
                    src = SRC_POLICY
                else:
                    a_res, src = np.zeros(env.act_dim), SRC_BASE
                runner.step(buffer, a_base, a_res, combine(a_base, a_res, cfg.lam), src)
                step += 1
            owed += n * cfg.updates_per_chunk / chunk
            n_updates = int(owed + 1e-9)
            owed -= n_updates
            if len(buffer) >= cfg.batch:
                for _ in range(n_updates):
                    for k, v in learner.update(sample_batch(buffer, cfg.batch, urng), urng).items():
                        losses.setdefault(k, []).append(v)
            if step % cfg.eval_every == 0 or step == cfg.total_steps:
                record(step)
                last_good = learner.snapshot()
                if cfg.stop_at_success is not None and result.records[-1].success_rate >= cfg.stop_at_success:
                    break
            if step % cfg.checkpoint_every == 0:
                checkpoint(step)
    except (NumericalError, FloatingPointError) as exc:
        log.warning("run %s seed %d aborted: %s", cfg.variant, cfg.seed, exc)
        learner.load(last_good)
        result.status, result.error = "aborted", str(exc)

    result.buffer_size = len(buffer)
    result.wallclock = time.perf_counter() - t0
    if keep_state:
        result.learner, result.buffer = learner, buffer
    return result
