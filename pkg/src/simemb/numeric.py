"""Dense-tensor kernels with reverse-mode gradients, Adam, and a finite-difference checker.

Reductions (matmul, sparse products, softmax sums) accumulate in float64 and cast
back to the operands' promoted dtype, so float32 training keeps usable precision
while float64 inputs stay exact enough for gradient checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "matmul",
    "sparse_dense_matmul",
    "tanh",
    "masked_softmax",
    "gather",
    "add",
    "scale",
    "row_dot",
    "transpose",
    "reshape",
    "concat_cols",
    "logsumexp",
    "mean_all",
    "AdamState",
    "adam_step",
    "grad_check",
]


class Tensor:
    """A dense array node in a reverse-mode computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @classmethod
    def _result(cls, data: np.ndarray, parents, backward) -> "Tensor":
        # op-output constructor: skips the finiteness scan on hot paths
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        grad_parents = tuple(p for p in parents if p.requires_grad)
        out.requires_grad = bool(grad_parents)
        out._parents = grad_parents
        out._backward = backward if grad_parents else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Run reverse-mode accumulation from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar output")
        if not self.requires_grad:
            raise ValueError("backward on a graph with no trainable inputs")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _f64(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        g = g.reshape(t.data.shape)
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(arr: np.ndarray) -> np.ndarray:
    return np.swapaxes(arr, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, with numpy leading-dim broadcasting."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be >= 2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype)
    out_data = np.matmul(_f64(a.data), _f64(b.data)).astype(dtype, copy=False)
    out = Tensor._result(out_data, (a, b), None)

    def backward():
        g = _f64(out.grad)
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, _swap(_f64(b.data))), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(_swap(_f64(a.data)), g), b.shape))

    out._backward = backward
    return out


def sparse_dense_matmul(sp, dense: Tensor) -> Tensor:
    """Product of a constant CSR matrix and a dense 2-d tensor.

    Gradients flow to the dense operand only; the sparse rows are data,
    not parameters.
    """
    if dense.ndim != 2:
        raise ValueError(f"sparse_dense_matmul: dense operand must be 2-d, got {dense.shape}")
    if sp.n_cols != dense.shape[0]:
        raise ValueError(
            f"sparse_dense_matmul: shapes ({sp.n_rows}, {sp.n_cols}) @ {dense.shape} do not chain"
        )
    out_data = (sp.to_scipy() @ _f64(dense.data)).astype(dense.dtype, copy=False)
    out = Tensor._result(out_data, (dense,), None)

    def backward():
        _accum(dense, sp.to_scipy_t() @ _f64(out.grad))

    out._backward = backward
    return out


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)
    out = Tensor._result(out_data, (x,), None)

    def backward():
        _accum(x, (1.0 - out_data * out_data) * out.grad)

    out._backward = backward
    return out


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over `axis` restricted to positions where `mask` is truthy.

    Masked positions get probability 0 and propagate zero gradient. A slice
    with no unmasked position is an error.
    """
    m = np.broadcast_to(np.asarray(mask).astype(bool), x.shape)
    if not m.any(axis=axis).all():
        raise ValueError("masked_softmax: a softmax slice is fully masked")
    z = np.where(m, _f64(x.data), -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    e = np.where(m, e, 0.0)
    p64 = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._result(p64.astype(x.dtype, copy=False), (x,), None)

    def backward():
        g = _f64(out.grad)
        inner = (g * p64).sum(axis=axis, keepdims=True)
        _accum(x, p64 * (g - inner))

    out._backward = backward
    return out


def gather(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: out[..., :] = table[indices[...], :]."""
    if table.ndim != 2:
        raise ValueError(f"gather: table must be 2-d, got {table.shape}")
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValueError(f"gather: index out of range for table with {table.shape[0]} rows")
    out = Tensor._result(table.data[idx], (table,), None)

    def backward():
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, np.asarray(out.grad, dtype=table.dtype))
        _accum(table, buf)

    out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc
    out = Tensor._result(out_data, (a, b), None)

    def backward():
        if a.requires_grad:
            _accum(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(out.grad, b.shape))

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor._result(a.data * c, (a,), None)

    def backward():
        _accum(a, out.grad * c)

    out._backward = backward
    return out


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Dot product along the last axis: out[...] = sum_i a[..., i] * b[..., i]."""
    if a.shape != b.shape:
        raise ValueError(f"row_dot: shapes {a.shape} and {b.shape} differ")
    out_data = np.einsum("...i,...i->...", _f64(a.data), _f64(b.data))
    dtype = np.result_type(a.dtype, b.dtype)
    out = Tensor._result(out_data.astype(dtype, copy=False), (a, b), None)

    def backward():
        g = np.expand_dims(out.grad, -1)
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    out._backward = backward
    return out


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ValueError(f"transpose: needs >= 2-d, got {x.shape}")
    out = Tensor._result(_swap(x.data), (x,), None)

    def backward():
        _accum(x, _swap(out.grad))

    out._backward = backward
    return out


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = Tensor._result(x.data.reshape(shape), (x,), None)

    def backward():
        _accum(x, np.asarray(out.grad).reshape(x.shape))

    out._backward = backward
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat_cols: leading shapes {a.shape} and {b.shape} differ")
    out = Tensor._result(np.concatenate([a.data, b.data], axis=-1), (a, b), None)
    na = a.shape[-1]

    def backward():
        if a.requires_grad:
            _accum(a, out.grad[..., :na])
        if b.requires_grad:
            _accum(b, out.grad[..., na:])

    out._backward = backward
    return out


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    x64 = _f64(x.data)
    m = x64.max(axis=axis, keepdims=True)
    e = np.exp(x64 - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis).astype(x.dtype, copy=False)
    out = Tensor._result(out_data, (x,), None)

    def backward():
        p = e / s
        _accum(x, p * np.expand_dims(_f64(out.grad), axis))

    out._backward = backward
    return out


def mean_all(x: Tensor) -> Tensor:
    out_data = np.asarray(_f64(x.data).mean(), dtype=x.dtype)
    out = Tensor._result(out_data, (x,), None)

    def backward():
        _accum(x, np.full(x.shape, out.grad / x.data.size, dtype=x.dtype))

    out._backward = backward
    return out


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for one parameter list."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params: list, grads: list, state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, in place on `params`."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("adam_step: params/grads/state lengths differ")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter shape {p.data.shape}")
        if not np.isfinite(g).all():
            raise ValueError("adam_step: non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=p.data.dtype)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return state


def grad_check(loss_fn, params: list, h: float = 1e-4, max_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central differences.

    `loss_fn()` must rebuild the scalar loss from the current contents of
    `params`. Checks every coordinate when the total parameter count is small,
    otherwise a random subsample of at least `max_coords` coordinates. Run with
    float64 parameters for a meaningful comparison at the default step size.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in picked]

    worst = 0.0
    for i, j in coords:
        p = params[i]
        orig = p.data.flat[j]
        p.data.flat[j] = orig + h
        f_plus = float(loss_fn().data)
        p.data.flat[j] = orig - h
        f_minus = float(loss_fn().data)
        p.data.flat[j] = orig
        numeric_g = (f_plus - f_minus) / (2.0 * h)
        analytic_g = float(analytic[i].flat[j])
        denom = max(abs(analytic_g) + abs(numeric_g), 1e-8)
        worst = max(worst, abs(analytic_g - numeric_g) / denom)
    return worst
