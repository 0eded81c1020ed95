"""MLP construction, initialization and forward pass on top of :mod:`tensor`.

Parameter sets are plain ``dict[str, ndarray]``. Every array carries a
leading ensemble axis ``E`` so K critic heads evaluate in one batched
matmul; a single network simply has ``E == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dawnlab.errors import ConfigError
from dawnlab.diffcore.tensor import Tensor, as_tensor, hyperspherical, layer_norm as _ln

NORMS = ("none", "layer-norm", "hyperspherical")
LN_EPS = 1e-5

ParamSet = dict[str, np.ndarray]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    hidden_norm: str = "none"
    activation: str = field(default="relu", init=False)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.hidden_norm not in NORMS:
            raise ConfigError(f"hidden_norm must be one of {NORMS}, got {self.hidden_norm!r}")
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"all layer sizes must be >= 1: {self}")


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    epsilon: float = LN_EPS


@dataclass
class HypersphericalParams:
    weight_rows: np.ndarray  # (out, in): one direction per output
    scale: np.ndarray  # (out,)


def layer_norm(x, p: LayerNormParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if p.gamma.shape[-1] != x.shape[-1] or p.beta.shape[-1] != x.shape[-1]:
        raise ConfigError("gamma/beta length must equal the feature dimension")
    return _ln(Tensor(x), Tensor(p.gamma), Tensor(p.beta), p.epsilon).data


def hyperspherical_layer(x, p: HypersphericalParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return hyperspherical(Tensor(x), Tensor(p.weight_rows.T), Tensor(p.scale)).data


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


def init_mlp(spec: MlpSpec, rng: np.random.Generator, ensemble: int = 1) -> ParamSet:
    """Default initialization.

    Linear layers use U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and
    biases; LN starts at gamma=1, beta=0; hyperspherical layers draw unit
    Gaussian directions (normalized in the forward pass) with scale 1.
    """
    params: ParamSet = {}
    fan_in = spec.input_dim
    for i, width in enumerate(spec.hidden_dims):
        bound = 1.0 / np.sqrt(fan_in)
        if spec.hidden_norm == "hyperspherical":
            w = rng.standard_normal((ensemble, fan_in, width))
            params[f"l{i}.W"] = w / np.linalg.norm(w, axis=1, keepdims=True)
            params[f"l{i}.s"] = np.ones((ensemble, 1, width))
        else:
            params[f"l{i}.W"] = _uniform(rng, bound, (ensemble, fan_in, width))
            params[f"l{i}.b"] = _uniform(rng, bound, (ensemble, 1, width))
            if spec.hidden_norm == "layer-norm":
                params[f"l{i}.gamma"] = np.ones((ensemble, 1, width))
                params[f"l{i}.beta"] = np.zeros((ensemble, 1, width))
        fan_in = width
    bound = 1.0 / np.sqrt(fan_in)
    params["out.W"] = _uniform(rng, bound, (ensemble, fan_in, spec.output_dim))
    params["out.b"] = _uniform(rng, bound, (ensemble, 1, spec.output_dim))
    return params


def check_params(spec: MlpSpec, params) -> int:
    """Validate parameter shapes against ``spec``; return the ensemble size."""
    ens = None
    fan_in = spec.input_dim
    layers = [(f"l{i}", w) for i, w in enumerate(spec.hidden_dims)] + [("out", spec.output_dim)]
    for name, width in layers:
        key = f"{name}.W"
        if key not in params:
            raise ConfigError(f"missing parameter {key}")
        w = params[key].data if isinstance(params[key], Tensor) else params[key]
        if w.ndim != 3 or w.shape[1:] != (fan_in, width):
            raise ConfigError(f"{key} has shape {w.shape}, expected (E, {fan_in}, {width})")
        ens = w.shape[0] if ens is None else ens
        if w.shape[0] != ens:
            raise ConfigError("inconsistent ensemble sizes")
        fan_in = width
    return ens


def forward_mlp(spec: MlpSpec, params, x) -> Tensor:
    """Run the network on ``x`` of shape (B, input_dim) or (E, B, input_dim).

    Hidden layers are linear -> norm -> ReLU (the hyperspherical option
    replaces the linear map and the norm together); the output layer is a
    plain linear map. Returns a (E, B, output_dim) tensor.
    """
    x = as_tensor(x)
    if x.shape[-1] != spec.input_dim:
        raise ConfigError(f"input has {x.shape[-1]} features, network expects {spec.input_dim}")
    check_params(spec, params)
    p = {k: as_tensor(v) for k, v in params.items()}
    h = x
    for i in range(len(spec.hidden_dims)):
        if spec.hidden_norm == "hyperspherical":
            h = hyperspherical(h, p[f"l{i}.W"], p[f"l{i}.s"])
        else:
            h = h @ p[f"l{i}.W"] + p[f"l{i}.b"]
            if spec.hidden_norm == "layer-norm":
                h = _ln(h, p[f"l{i}.gamma"], p[f"l{i}.beta"], LN_EPS)
        h = h.relu()
    return h @ p["out.W"] + p["out.b"]


def leaves(params: ParamSet) -> dict[str, Tensor]:
    """Wrap a parameter set as gradient-requiring leaf tensors."""
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


def grads_of(nodes: dict[str, Tensor]) -> ParamSet:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in nodes.items()}


def copy_params(params: ParamSet) -> ParamSet:
    return {k: v.copy() for k, v in params.items()}
