"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps an ndarray and, when gradients are enabled, remembers
the operation that produced it as a vector-Jacobian-product closure plus
parent links. ``Tensor.backward`` walks that implicit tape in reverse
topological order, accumulating gradients additively across fan-out.

float32 is the training dtype; verification suites run the same graph in
float64. Mixing dtypes inside one graph is rejected.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ShapeError, SpecError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / stat updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "meta")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp
        self.meta: dict | None = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
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

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- backward ----------------------------------------------------------

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable leaf that requires it.

        The loss must be scalar; seeding with d loss/d loss = 1.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_tensor(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _check_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise SpecError(f"mixed dtypes on one tape: {dt} vs {t.dtype}")


def _result(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    _check_same_dtype(a, b)
    ash, bsh = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))


def sub(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    _check_same_dtype(a, b)
    ash, bsh = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))


def mul(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a: Tensor, b) -> Tensor:
    a, b = a, _coerce(b, a)
    _check_same_dtype(a, b)
    ad, bd = a.data, b.data
    return _result(ad / bd, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def pow_scalar(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * (0.5 / out),))


_kink_trace: list | None = None


@contextmanager
def trace_activation_signs():
    """Record the sign pattern at every rectifier evaluated in the block.

    Gradient checking compares the patterns of the two perturbed forward
    passes; a mismatch means the finite-difference interval straddles a
    kink and the coordinate cannot be measured there.
    """
    global _kink_trace
    prev = _kink_trace
    _kink_trace = trace = []
    try:
        yield trace
    finally:
        _kink_trace = prev


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if _kink_trace is not None:
        _kink_trace.append(mask)
    return _result(np.where(mask, a.data, 0), (a,), lambda g: (np.where(mask, g, 0),))


def leaky_relu(a: Tensor, alpha: float = 0.01) -> Tensor:
    mask = a.data > 0
    if _kink_trace is not None:
        _kink_trace.append(mask)
    out = np.where(mask, a.data, a.data * alpha)
    return _result(out, (a,), lambda g: (np.where(mask, g, g * alpha),))


def activation(a: Tensor, kind: str = "relu", alpha: float = 0.01) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    raise SpecError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ash = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % len(ash) for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, ash).copy() if g.shape != ash else g,)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ash = a.shape
    count = a.data.size if axis is None else int(np.prod(
        [ash[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))

    def vjp(g):
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % len(ash) for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, ash).copy(),)

    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


# ---------------------------------------------------------------------------
# shape algebra


def reshape(a: Tensor, shape) -> Tensor:
    ash = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape {ash} -> {tuple(shape)} changes element count") from None
    return _result(data, (a,), lambda g: (g.reshape(ash),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                   lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    _check_same_dtype(*tensors)
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
                i != axis % len(base) and other[i] != base[i] for i in range(len(base))):
            raise ShapeError(
                f"concat operands disagree off the concat axis: {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp)


def repeat_axis(a: Tensor, axis: int, copies: int) -> Tensor:
    """Insert a new axis at ``axis`` holding ``copies`` identical copies."""
    data = np.repeat(np.expand_dims(a.data, axis), copies, axis=axis)
    return _result(data, (a,), lambda g: (g.sum(axis=axis),))


def slice_tensor(a: Tensor, idx) -> Tensor:
    ash = a.shape

    def vjp(g):
        full = np.zeros(ash, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _result(np.ascontiguousarray(a.data[idx]), (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)
        return ga, gb

    return _result(np.matmul(ad, bd), (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the trailing feature axis: (..., Fin) x (Fout, Fin) -> (..., Fout)."""
    _check_same_dtype(x, w)
    fin = x.shape[-1]
    if w.ndim != 2 or w.shape[1] != fin:
        raise ShapeError(f"linear weight {w.shape} incompatible with input feature dim {fin}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, fin)
    y2 = x2 @ w.data.T
    if b is not None:
        y2 = y2 + b.data
    fout = w.shape[0]

    def vjp(g):
        g2 = g.reshape(-1, fout)
        gx = (g2 @ w.data).reshape(*lead, fin)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w) if b is None else (x, w, b)
    return _result(y2.reshape(*lead, fout), parents, vjp)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), vjp)


# ---------------------------------------------------------------------------
# normalization (composed from primitives, so gradients come for free)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 5:
        raise ShapeError(f"group_norm expects (B,C,D,H,W), got rank {x.ndim}")
    B, C = x.shape[:2]
    if C % groups:
        raise SpecError(f"channels {C} not divisible by groups {groups}")
    spatial = x.shape[2:]
    xg = reshape(x, (B, groups, -1))
    m = tmean(xg, axis=2, keepdims=True)
    centered = sub(xg, m)
    var = tmean(mul(centered, centered), axis=2, keepdims=True)
    xn = div(centered, sqrt(add(var, float(eps))))
    xn = reshape(xn, (B, C, *spatial))
    return add(mul(xn, reshape(gamma, (1, C, 1, 1, 1))), reshape(beta, (1, C, 1, 1, 1)))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, axis: int = -1) -> Tensor:
    m = tmean(x, axis=axis, keepdims=True)
    centered = sub(x, m)
    var = tmean(mul(centered, centered), axis=axis, keepdims=True)
    xn = div(centered, sqrt(add(var, float(eps))))
    shape = [1] * x.ndim
    shape[axis] = x.shape[axis]
    return add(mul(xn, reshape(gamma, shape)), reshape(beta, shape))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               momentum: float = 0.1, eps: float = 1e-5,
               training: bool = True, stats_initialized: bool = True) -> Tensor:
    """Per-channel normalization of a (B,C,D,H,W) tensor.

    Training mode normalizes with batch statistics and folds them into the
    running estimates in place. Eval mode uses the running estimates; if
    none were ever recorded it falls back to (0, 1) and marks the result
    via ``out.meta['batch_norm_default_stats']``.
    """
    if x.ndim != 5:
        raise ShapeError(f"batch_norm expects (B,C,D,H,W), got rank {x.ndim}")
    C = x.shape[1]
    if running_mean.shape != (C,) or running_var.shape != (C,):
        raise ShapeError(f"running stats must have shape ({C},)")
    cshape = (1, C, 1, 1, 1)
    used_default = False
    if training:
        m = tmean(x, axis=(0, 2, 3, 4), keepdims=True)
        centered = sub(x, m)
        var = tmean(mul(centered, centered), axis=(0, 2, 3, 4), keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * m.data.reshape(C)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(C)
        xn = div(centered, sqrt(add(var, float(eps))))
    else:
        if stats_initialized:
            m_const = running_mean.reshape(cshape).astype(x.dtype, copy=False)
            v_const = running_var.reshape(cshape).astype(x.dtype, copy=False)
        else:
            m_const = np.zeros(cshape, dtype=x.dtype)
            v_const = np.ones(cshape, dtype=x.dtype)
            used_default = True
        xn = div(sub(x, Tensor(m_const)), sqrt(add(Tensor(v_const), float(eps))))
    out = add(mul(xn, reshape(gamma, cshape)), reshape(beta, cshape))
    if used_default:
        out.meta = {"batch_norm_default_stats": True}
    return out
