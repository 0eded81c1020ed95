"""Residual Gaussian policy, critic ensembles and the action composition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dawnlab.diffcore import MlpSpec, Tensor, concat, copy_params, forward_mlp, init_mlp
from dawnlab.errors import ConfigError

LOG_2PI = math.log(2 * math.pi)
SQUASH_EPS = 1e-6
HEAD_KINDS = ("scalar", "c51", "quantile", "tqc")


def combine(a_base, a_res, lam: float):
    """Executed action ``clip(a_base + lam * a_res, -1, 1)``.

    Accepts arrays or tensors (the tensor path keeps gradients inside the
    clip range).
    """
    if lam < 0:
        raise ValueError(f"residual scale must be non-negative, got {lam}")
    if isinstance(a_res, Tensor) or isinstance(a_base, Tensor):
        base = a_base if isinstance(a_base, Tensor) else Tensor(a_base)
        res = a_res if isinstance(a_res, Tensor) else Tensor(a_res)
        if base.shape[-1] != res.shape[-1]:
            raise ValueError(f"action dims differ: {base.shape} vs {res.shape}")
        return (base + res * lam).clip(-1.0, 1.0)
    a_base = np.asarray(a_base, dtype=np.float64)
    a_res = np.asarray(a_res, dtype=np.float64)
    if a_base.shape != a_res.shape:
        raise ValueError(f"action dims differ: {a_base.shape} vs {a_res.shape}")
    return np.clip(a_base + lam * a_res, -1.0, 1.0)


# --------------------------------------------------------------------------- policy
@dataclass
class ResidualPolicy:
    """tanh-squashed diagonal Gaussian over residual actions.

    The network maps observations to ``[mean, log_std]``. The output layer
    starts with weights in U(-1e-3, 1e-3), zero mean bias and a log-std bias
    of ``init_log_std``, so fresh policies emit near-zero, near-deterministic
    residuals.
    """

    spec: MlpSpec
    params: dict
    act_dim: int
    log_std_min: float = -10.0
    log_std_max: float = 2.0

    @classmethod
    def create(cls, obs_dim, act_dim, hidden=(256, 256), norm="none", rng=None, init_log_std=-6.0):
        rng = rng if rng is not None else np.random.default_rng()
        spec = MlpSpec(obs_dim, tuple(hidden), 2 * act_dim, norm)
        params = init_mlp(spec, rng)
        params["out.W"] = rng.uniform(-1e-3, 1e-3, params["out.W"].shape)
        params["out.b"] = np.zeros_like(params["out.b"])
        params["out.b"][..., act_dim:] = init_log_std
        return cls(spec, params, act_dim)

    def astype(self, dtype) -> "ResidualPolicy":
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    def heads(self, obs, params=None) -> tuple[Tensor, Tensor]:
        out = forward_mlp(self.spec, self.params if params is None else params, obs)[0]
        d = self.act_dim
        return out[:, :d], out[:, d:].clip(self.log_std_min, self.log_std_max)

    @property
    def dtype(self):
        return self.params["out.W"].dtype

    def rsample(self, obs, noise, params=None) -> tuple[Tensor, Tensor]:
        """Reparameterized sample ``tanh(mean + std * noise)`` and its log-density."""
        mean, log_std = self.heads(obs, params)
        noise = np.asarray(noise, dtype=mean.data.dtype)
        u = mean + log_std.exp() * noise
        a = u.tanh()
        gauss = (log_std * -1.0 - 0.5 * LOG_2PI).sum(axis=-1) - 0.5 * (noise * noise).sum(axis=-1)
        squash = (1.0 - a * a + SQUASH_EPS).log().sum(axis=-1)
        return a, gauss - squash

    def sample(self, obs, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        obs = np.atleast_2d(obs)
        noise = rng.standard_normal((obs.shape[0], self.act_dim))
        a, logp = self.rsample(obs.astype(self.dtype, copy=False), noise)
        return a.data, logp.data

    def mean_action(self, obs) -> np.ndarray:
        mean, _ = self.heads(np.atleast_2d(obs).astype(self.dtype, copy=False))
        return np.tanh(mean.data)

    def log_prob(self, obs, a_res) -> np.ndarray:
        """Density of given squashed actions (inverse-tanh route)."""
        mean, log_std = self.heads(np.atleast_2d(obs))
        a = np.clip(np.atleast_2d(a_res), -1 + 1e-12, 1 - 1e-12)
        u = np.arctanh(a)
        z = (u - mean.data) / np.exp(log_std.data)
        gauss = (-0.5 * z * z - log_std.data - 0.5 * LOG_2PI).sum(-1)
        return gauss - np.log(1 - a * a + SQUASH_EPS).sum(-1)


# --------------------------------------------------------------------------- critic
@dataclass
class ValueDistribution:
    kind: str  # scalar | categorical | quantiles
    scalar_value: np.ndarray | None = None
    probs: np.ndarray | None = None
    support: np.ndarray | None = None
    quantiles: np.ndarray | None = None
    taus: np.ndarray | None = None

    def mean(self) -> np.ndarray:
        if self.kind == "scalar":
            return self.scalar_value
        if self.kind == "categorical":
            return self.probs @ self.support
        return self.quantiles.mean(axis=-1)


def quantile_fractions(n: int) -> np.ndarray:
    return (2 * np.arange(1, n + 1) - 1) / (2.0 * n)


def c51_vmin(gamma: float, horizon: int) -> float:
    """Shifted-sparse lower value bound, rounded down to a multiple of 5."""
    exact = -(1 - gamma**horizon) / (1 - gamma)
    return 5.0 * math.floor(exact / 5.0)


@dataclass
class CriticEnsemble:
    spec: MlpSpec
    params: dict
    target_params: dict
    head_kind: str = "scalar"
    n_heads: int = 2
    support: np.ndarray | None = None
    taus: np.ndarray | None = None
    kappa: float = 1.0
    drop_per_head: int = 2
    truncation: str = "pooled"
    obs_dim: int = 0
    act_dim: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(
        cls, obs_dim, act_dim, hidden=(256, 256), norm="none", head_kind="scalar", rng=None,
        n_atoms=51, v_min=-35.0, v_max=0.0, n_quantiles=25, n_heads=None, drop_per_head=2,
        kappa=1.0, truncation="pooled",
    ):
        if head_kind not in HEAD_KINDS:
            raise ConfigError(f"head kind must be one of {HEAD_KINDS}")
        rng = rng if rng is not None else np.random.default_rng()
        support = taus = None
        if head_kind == "scalar":
            out = 1
        elif head_kind == "c51":
            if v_min >= v_max:
                raise ConfigError(f"need v_min < v_max, got {v_min} >= {v_max}")
            support = np.linspace(v_min, v_max, n_atoms)
            out = n_atoms
        else:
            taus = quantile_fractions(n_quantiles)
            out = n_quantiles
            if head_kind == "tqc" and drop_per_head >= n_quantiles:
                raise ConfigError("TQC needs drop_per_head < n_quantiles")
        if n_heads is None:
            n_heads = 5 if head_kind == "tqc" else 2
        spec = MlpSpec(obs_dim + act_dim, tuple(hidden), out, norm)
        params = init_mlp(spec, rng, ensemble=n_heads)
        return cls(
            spec, params, copy_params(params), head_kind, n_heads, support, taus, kappa,
            drop_per_head, truncation, obs_dim, act_dim,
        )

    @property
    def dtype(self):
        return self.params["out.W"].dtype

    def astype(self, dtype) -> "CriticEnsemble":
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.target_params = {k: v.astype(dtype) for k, v in self.target_params.items()}
        return self

    # raw network output, (E, B, out)
    def raw(self, obs, act, params=None, target: bool = False) -> Tensor:
        if params is None:
            params = self.target_params if target else self.params
        x = concat([obs if isinstance(obs, Tensor) else Tensor(obs), act if isinstance(act, Tensor) else Tensor(act)])
        return forward_mlp(self.spec, params, x)

    def expectation(self, out: Tensor) -> Tensor:
        """Per-head scalar value (E, B) from raw outputs, differentiable."""
        if self.head_kind == "scalar":
            return out[..., 0]
        if self.head_kind == "c51":
            return (out.log_softmax(-1).exp() * self.support.astype(out.data.dtype)).sum(axis=-1)
        return out.mean(axis=-1)

    def q_tensor(self, obs, act, params=None, target=False, reduce="none") -> Tensor:
        q = self.expectation(self.raw(obs, act, params, target))
        if reduce == "none":
            return q
        if reduce == "mean":
            return q.mean(axis=0)
        if reduce == "min":
            return q.min(axis=0)
        raise ValueError(f"unknown reduce {reduce!r}")

    def q_value(self, obs, act, reduce="mean", target=False) -> np.ndarray:
        return self.q_tensor(np.atleast_2d(obs), np.atleast_2d(act), target=target, reduce=reduce).data

    def policy_value(self, obs, act, params=None) -> Tensor:
        """Value used by the actor: twin-min of expectations, or the mean of all
        quantiles of all heads for TQC."""
        q = self.q_tensor(obs, act, params=params)
        return q.mean(axis=0) if self.head_kind == "tqc" else q.min(axis=0)

    def distribution(self, obs, act, target=False) -> ValueDistribution:
        out = self.raw(np.atleast_2d(obs), np.atleast_2d(act), target=target).data
        if self.head_kind == "scalar":
            return ValueDistribution("scalar", scalar_value=out[..., 0])
        if self.head_kind == "c51":
            z = out - out.max(-1, keepdims=True)
            p = np.exp(z)
            return ValueDistribution("categorical", probs=p / p.sum(-1, keepdims=True), support=self.support)
        return ValueDistribution("quantiles", quantiles=out, taus=self.taus)


def ema_update(critic: CriticEnsemble, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    for k, v in critic.params.items():
        critic.target_params[k] = tau * v + (1.0 - tau) * critic.target_params[k]


def q_value(critic: CriticEnsemble, obs, action, reduce="mean"):
    return critic.q_value(obs, action, reduce=reduce)


def sample_residual(policy: ResidualPolicy, obs, rng):
    return policy.sample(obs, rng)
