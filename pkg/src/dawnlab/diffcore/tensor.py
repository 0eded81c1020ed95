"""Reverse-mode automatic differentiation over dense float arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when any operand requires a
gradient, records the primitive that produced it together with a closure
computing the vector-Jacobian product for each parent. Nodes that do not
require gradients never record parents, so inference through the same code
path builds no graph.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray
_FLOATS = (np.dtype(np.float64), np.dtype(np.float32))


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        a = np.asarray(data)
        self.data = a if a.dtype in _FLOATS else a.astype(np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], Sequence[Array | None]] | None = None

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data: Array, parents: Sequence["Tensor"], op: str, vjp) -> "Tensor":
        out = Tensor(data, op=op)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._vjp = vjp
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------------
    def backward(self) -> dict[int, Array]:
        """Accumulate d(self)/d(node) into ``.grad`` of every node requiring grad.

        Only scalar outputs are accepted. Returns a map from ``id(node)`` to
        its gradient for convenience.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.get(id(node))
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        return grads

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic -------------------------------------------------------------
    # Python scalars stay scalars so float32 graphs are not promoted, and
    # every closure skips the work for operands that need no gradient.
    def __add__(self, other) -> "Tensor":
        if _is_scalar(other):
            other = float(other)
            return Tensor._make(self.data + other, (self,), "add", lambda g: (g,))
        other = as_tensor(other)
        sa, sb = self.data.shape, other.data.shape
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(
            self.data + other.data, (self, other), "add",
            lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(g, sb) if rb else None),
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        if _is_scalar(other):
            other = float(other)
            return Tensor._make(self.data - other, (self,), "sub", lambda g: (g,))
        other = as_tensor(other)
        sa, sb = self.data.shape, other.data.shape
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(
            self.data - other.data, (self, other), "sub",
            lambda g: (_unbroadcast(g, sa) if ra else None, _unbroadcast(-g, sb) if rb else None),
        )

    def __rsub__(self, other) -> "Tensor":
        if _is_scalar(other):
            other = float(other)
            return Tensor._make(other - self.data, (self,), "rsub", lambda g: (-g,))
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        if _is_scalar(other):
            other = float(other)
            return Tensor._make(self.data * other, (self,), "mul", lambda g: (g * other,))
        other = as_tensor(other)
        a, b = self.data, other.data
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(
            a * b, (self, other), "mul",
            lambda g: (
                _unbroadcast(g * b, a.shape) if ra else None,
                _unbroadcast(g * a, b.shape) if rb else None,
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if _is_scalar(other):
            other = float(other)
            return self * (1.0 / other)
        other = as_tensor(other)
        a, b = self.data, other.data
        ra, rb = self.requires_grad, other.requires_grad
        return Tensor._make(
            a / b, (self, other), "div",
            lambda g: (
                _unbroadcast(g / b, a.shape) if ra else None,
                _unbroadcast(-g * a / (b * b), b.shape) if rb else None,
            ),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), "neg", lambda g: (-g,))

    def __pow__(self, k: float) -> "Tensor":
        if isinstance(k, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self.data
        return Tensor._make(a**k, (self,), "pow", lambda g: (g * k * a ** (k - 1),))

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        ra, rb = self.requires_grad, other.requires_grad

        def vjp(g):
            ga = gb = None
            if ra:
                ga = _unbroadcast(g @ np.swapaxes(b, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b), a.shape)
            if rb:
                gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a, g), b.shape)
            return ga, gb

        return Tensor._make(a @ b, (self, other), "matmul", vjp)

    def __getitem__(self, idx) -> "Tensor":
        # Basic indexing only: repeated elements would need np.add.at.
        a = self.data

        def vjp(g):
            out = np.zeros_like(a)
            out[idx] += g
            return (out,)

        return Tensor._make(a[idx], (self,), "getitem", vjp)

    # -- reductions ---------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self.data

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(a.sum(axis=axis, keepdims=keepdims), (self,), "sum", vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def min(self, axis: int) -> "Tensor":
        """Minimum along ``axis``; the gradient is routed to the first argmin."""
        a = self.data
        idx = np.expand_dims(a.argmin(axis=axis), axis)

        def vjp(g):
            out = np.zeros_like(a)
            np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
            return (out,)

        return Tensor._make(np.take_along_axis(a, idx, axis).squeeze(axis), (self,), "min", vjp)

    def reshape(self, *shape) -> "Tensor":
        a = self.data
        return Tensor._make(a.reshape(*shape), (self,), "reshape", lambda g: (g.reshape(a.shape),))

    # -- elementwise nonlinearities ---------------------------------------------
    def relu(self) -> "Tensor":
        a = self.data
        mask = a > 0
        return Tensor._make(a * mask, (self,), "relu", lambda g: (g * mask,))

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        return Tensor._make(t, (self,), "tanh", lambda g: (g * (1.0 - t * t),))

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        return Tensor._make(e, (self,), "exp", lambda g: (g * e,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), "log", lambda g: (g / a,))

    def clip(self, lo: float, hi: float) -> "Tensor":
        a = self.data
        mask = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), "clip", lambda g: (g * mask,))

    def log_softmax(self, axis: int = -1) -> "Tensor":
        a = self.data
        shifted = a - a.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out = shifted - lse
        p = np.exp(out)
        return Tensor._make(
            out, (self,), "log_softmax",
            lambda g: (g - p * g.sum(axis=axis, keepdims=True),),
        )


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(out, tensors, "concat", vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """gamma * (x - mean) / sqrt(var + eps) + beta over the last axis."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    a = x.data
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data
    rx, rg, rb = x.requires_grad, gamma.requires_grad, beta.requires_grad

    def vjp(g):
        dx = None
        if rx:
            dxhat = g * gamma.data
            dx = inv * (
                dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return (
            dx,
            _unbroadcast(g * xhat, gamma.data.shape) if rg else None,
            _unbroadcast(g, beta.data.shape) if rb else None,
        )

    return Tensor._make(out, (x, gamma, beta), "layer_norm", vjp)


HN_EPS = 1e-12


def _unit(v: Array, axis: int) -> tuple[Array, Array]:
    norm = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    safe = np.where(norm < HN_EPS, 1.0, norm)
    unit = np.where(norm < HN_EPS, 0.0, v / safe)
    return unit, safe


def _unit_vjp(g: Array, unit: Array, norm: Array, axis: int) -> Array:
    # d(v/|v|) = (I - u u^T)/|v|; zero-norm vectors have u = 0 and get zero grad.
    return (g - unit * (g * unit).sum(axis=axis, keepdims=True)) / norm * (unit != 0).any(axis=axis, keepdims=True)


def hyperspherical(x: Tensor, weight: Tensor, scale: Tensor) -> Tensor:
    """``scale_j * cos(angle(x, weight[:, j]))`` for every output column j.

    ``x`` has shape (..., in); ``weight`` has shape (..., in, out) with one
    direction vector per column; ``scale`` broadcasts against (..., out).
    Inputs with norm below 1e-12 map to zero output.
    """
    x, weight, scale = as_tensor(x), as_tensor(weight), as_tensor(scale)
    xh, xn = _unit(x.data, -1)
    wh, wn = _unit(weight.data, -2)
    cos = xh @ wh
    out = scale.data * cos

    def vjp(g):
        gcos = g * scale.data
        gxh = gcos @ np.swapaxes(wh, -1, -2)
        gwh = _unbroadcast(np.swapaxes(xh, -1, -2) @ gcos, wh.shape) if xh.ndim > 1 else np.multiply.outer(xh, gcos)
        return (
            _unit_vjp(_unbroadcast(gxh, xh.shape), xh, xn, -1),
            _unit_vjp(gwh, wh, wn, -2),
            _unbroadcast(g * cos, scale.data.shape),
        )

    return Tensor._make(out, (x, weight, scale), "hyperspherical", vjp)


def quantile_huber(theta: Tensor, targets: Array, taus: Array, kappa: float = 1.0) -> Tensor:
    """Pairwise quantile-Huber regression loss.

    ``theta`` (..., N) are predicted quantiles at fractions ``taus`` (N,);
    ``targets`` (..., M) are constants. Returns the mean over all N*M pairs
    and all leading positions.
    """
    theta = as_tensor(theta)
    th = theta.data
    taus = np.asarray(taus, dtype=th.dtype)
    u = np.asarray(targets, dtype=th.dtype)[..., None, :] - th[..., :, None]
    absu = np.abs(u)
    huber = np.where(absu <= kappa, 0.5 * u * u, kappa * (absu - 0.5 * kappa))
    w = np.abs(taus[:, None] - (u < 0))
    count = u.size
    loss = (w * huber).sum() / count

    def vjp(g):
        dh_du = np.where(absu <= kappa, u, kappa * np.sign(u))
        # u = y - theta  =>  d/dtheta = -dh/du
        return (-(g / count) * (w * dh_du).sum(axis=-1),)

    return Tensor._make(np.asarray(loss), (theta,), "quantile_huber", vjp)
