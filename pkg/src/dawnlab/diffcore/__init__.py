from dawnlab.diffcore.tensor import Tensor, as_tensor, concat, hyperspherical, quantile_huber
from dawnlab.diffcore.nn import (
    HypersphericalParams,
    LayerNormParams,
    MlpSpec,
    copy_params,
    forward_mlp,
    grads_of,
    hyperspherical_layer,
    init_mlp,
    layer_norm,
    leaves,
)
from dawnlab.diffcore.optim import Adam, AdamState, adam_step, clip_by_global_norm, global_norm
from dawnlab.diffcore.serialize import load_params, save_params


def backward(output: Tensor):
    """Populate ``.grad`` on every gradient-requiring node feeding ``output``."""
    return output.backward()


__all__ = [
    "Adam", "AdamState", "HypersphericalParams", "LayerNormParams", "MlpSpec", "Tensor",
    "adam_step", "as_tensor", "backward", "clip_by_global_norm", "concat", "copy_params",
    "forward_mlp", "global_norm", "grads_of", "hyperspherical", "hyperspherical_layer",
    "init_mlp", "layer_norm", "leaves", "load_params", "quantile_huber", "save_params",
]
