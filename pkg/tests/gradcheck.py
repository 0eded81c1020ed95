"""Finite-difference check of every parameter and input gradient of an MLP."""

import numpy as np

from dawnlab.diffcore import Tensor, forward_mlp, init_mlp, leaves
from oracles import central_fd, grad_close


def mlp_grad_check(spec, seed, ensemble=1):
    rng = np.random.default_rng(seed)
    params = init_mlp(spec, rng, ensemble)
    if spec.hidden_norm == "layer-norm":
        for k in params:
            if k.endswith("gamma"):
                params[k] = rng.uniform(0.5, 1.5, params[k].shape)
            if k.endswith("beta"):
                params[k] = rng.normal(0, 0.1, params[k].shape)
    x0 = rng.normal(size=(3, spec.input_dim))
    w = rng.normal(size=(ensemble, 3, spec.output_dim))

    nodes = leaves(params)
    x = Tensor(x0, requires_grad=True)
    (forward_mlp(spec, nodes, x) * w).sum().backward()

    ok = grad_close(x.grad, central_fd(lambda xx: float((forward_mlp(spec, params, xx).data * w).sum()), x0))
    for name, node in nodes.items():
        def f(v, name=name):
            q = dict(params)
            q[name] = v
            return float((forward_mlp(spec, q, x0).data * w).sum())
        ok &= grad_close(node.grad, central_fd(f, params[name]))
    return ok
