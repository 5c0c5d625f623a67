"""Dense tensors with reverse-mode automatic differentiation.

Every value in the stack is a :class:`Tensor` wrapping a contiguous numpy
buffer. Operations that touch a tensor with ``requires_grad`` record a node
(operation tag, parents, and a closure that maps the output gradient to
parent gradients). :meth:`Tensor.backward` walks that graph in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import functools
import threading
from typing import Callable, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class GradientError(RuntimeError):
    """Raised for invalid backward calls."""


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype not in DTYPES:
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = ""

    # construction helpers

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        out.op = op
        return out

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(_lift(other, self), self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    # autodiff

    def backward(self, grad=None) -> None:
        """Populate ``.grad`` on every leaf reachable from this scalar.

        Gradients accumulate into leaves across repeated calls; call
        :meth:`zero_grad` (or step an optimizer) to reset them.
        """
        if not self.requires_grad:
            raise GradientError("backward() on a tensor that is not tracked by autograd")
        if grad is None:
            if self.data.size != 1:
                raise GradientError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)

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

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# elementwise and linear algebra


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._make(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return Tensor._make(ad * bd, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), backward, "matmul")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    src = x.shape
    return Tensor._make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return Tensor._make(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: (np.ascontiguousarray(g.transpose(inverse)),),
        "permute",
    )


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input")
    ndim = tensors[0].ndim
    ax = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat along axis {axis}: shapes {ref} and {t.shape} disagree")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=ax),
        tuple(tensors),
        lambda g: tuple(np.split(g, bounds, axis=ax)),
        "concat",
    )


def split(x: Tensor, parts, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into ``parts`` equal pieces, or pieces of the given sizes."""
    ax = axis % x.ndim
    extent = x.shape[ax]
    if isinstance(parts, int):
        if parts <= 0 or extent % parts:
            raise ShapeError(f"split: extent {extent} is not divisible into {parts} parts")
        sizes = [extent // parts] * parts
    else:
        sizes = [int(s) for s in parts]
        if sum(sizes) != extent or any(s < 0 for s in sizes):
            raise ShapeError(f"split: sizes {sizes} do not sum to extent {extent}")
    outs = []
    start = 0
    for size in sizes:
        outs.append(_slice_axis(x, ax, start, start + size))
        start += size
    return outs


def _slice_axis(x: Tensor, ax: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    src_shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[index] = g
        return (full,)

    return Tensor._make(np.ascontiguousarray(x.data[index]), (x,), backward, "slice")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / float(count))


# nonlinearities and normalization


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._make(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor | None, beta: Tensor | None, eps: float = 1e-6, axis: int = -1) -> Tensor:
    """Normalize ``x`` over ``axis``; ``gamma``/``beta`` are vectors along that axis."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    ax = axis % x.ndim
    n = x.shape[ax]
    bshape = [1] * x.ndim
    bshape[ax] = n
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = np.ones(bshape, x.dtype) if gamma is None else gamma.data.reshape(bshape)
    out = xhat * gd
    if beta is not None:
        out = out + beta.data.reshape(bshape)
    other = tuple(i for i in range(x.ndim) if i != ax)
    parents = tuple(t for t in (x, gamma, beta) if t is not None)

    def backward(g):
        gx_hat = g * gd
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=ax, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=ax, keepdims=True)
        )
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=other).reshape(gamma.shape))
        if beta is not None:
            grads.append(g.sum(axis=other).reshape(beta.shape))
        return grads

    return Tensor._make(out.astype(x.dtype, copy=False), parents, backward, "layer_norm")


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * (xd * xd * xd))
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return Tensor._make(out.astype(xd.dtype, copy=False), (x,), backward, "gelu")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return Tensor._make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``(B, K)`` logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {labels.shape[0]} labels")
    if labels.size == 0:
        raise ShapeError("cross_entropy: empty batch")
    k = logits.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range for {k} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(labels.size)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / labels.size),)

    return Tensor._make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


# convolutions (NCHW, cross-correlation, zero padding)


def _promote(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"convolution input must be C×H×W or B×C×H×W, got {x.shape}")
    return x, False


def _demote(out: Tensor, squeezed: bool) -> Tensor:
    return reshape(out, out.shape[1:]) if squeezed else out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense 2-D convolution; ``weight`` is ``C_out×C_in×k×k``."""
    x, squeezed = _promote(x)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be C_out×C_in×k×k, got {weight.shape}")
    cout, cin, k, _ = weight.shape
    b, c, h, w = x.shape
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {cin}")
    if pad < 0 or stride < 1:
        raise ValueError(f"conv2d: invalid pad={pad} / stride={stride}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if h + 2 * pad < k or w + 2 * pad < k or ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: non-positive output extent for input {h}×{w}, k={k}, pad={pad}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")

    wd = weight.data
    if k == 1 and stride == 1 and pad == 0:
        w2 = wd.reshape(cout, cin)
        xf = x.data.reshape(b, cin, h * w)
        out = (w2 @ xf).reshape(b, cout, h, w)
        if bias is not None:
            out = out + bias.data.reshape(1, cout, 1, 1)

        def backward(g):
            gf = g.reshape(b, cout, h * w)
            gx = (w2.T @ gf).reshape(x.shape) if x.requires_grad else None
            gw = np.einsum("boi,bci->oc", gf, xf).reshape(wd.shape) if weight.requires_grad else None
            gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
            return gx, gw, gb

    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
        out = np.einsum("bchwij,ocij->bohw", win, wd, optimize=True)
        if bias is not None:
            out = out + bias.data.reshape(1, cout, 1, 1)

        def backward(g):
            gx = gw = gb = None
            if weight.requires_grad:
                gw = np.einsum("bchwij,bohw->ocij", win, g, optimize=True)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        contrib = np.einsum("bohw,oc->bchw", g, wd[:, :, i, j], optimize=True)
                        gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += contrib
                gx = gxp[:, :, pad : pad + h, pad : pad + w]
            if bias is not None and bias.requires_grad:
                gb = g.sum(axis=(0, 2, 3))
            return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = Tensor._make(np.ascontiguousarray(out, dtype=x.dtype), parents, backward, "conv2d")
    return _demote(res, squeezed)


@functools.lru_cache(maxsize=64)
def _shift_operators(k: int, h: int, w: int, pad: int) -> np.ndarray:
    """``k·k × (ho·wo) × (h·w)`` 0/1 matrices; operator ``(i, j)`` gathers the
    input pixel under kernel tap ``(i, j)`` for every output pixel (zero padded)."""
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    ops = np.zeros((k * k, ho * wo, h * w), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            for r in range(ho):
                src_r = r + i - pad
                if not 0 <= src_r < h:
                    continue
                for c in range(wo):
                    src_c = c + j - pad
                    if 0 <= src_c < w:
                        ops[i * k + j, r * wo + c, src_r * w + src_c] = 1.0
    ops.setflags(write=False)
    return ops


# lattices up to this many cells use the dense per-channel operator (BLAS);
# larger ones fall back to shift-and-add
DENSE_DEPTHWISE_MAX_CELLS = 400


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, pad: int = 0) -> Tensor:
    """Per-channel 2-D convolution at stride 1; ``weight`` is ``C×1×k×k``."""
    x, squeezed = _promote(x)
    if weight.ndim != 4 or weight.shape[1] != 1 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"depthwise_conv2d: weight must be C×1×k×k, got {weight.shape}")
    c, _, k, _ = weight.shape
    b, cx, h, w = x.shape
    if cx != c:
        raise ShapeError(f"depthwise_conv2d: input has {cx} channels, kernel has {c}")
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    if pad < 0 or ho <= 0 or wo <= 0:
        raise ShapeError(f"depthwise_conv2d: non-positive output extent for {h}×{w}, k={k}, pad={pad}")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"depthwise_conv2d: bias shape {bias.shape} != ({c},)")
    if h * w <= DENSE_DEPTHWISE_MAX_CELLS and ho * wo <= DENSE_DEPTHWISE_MAX_CELLS:
        out, backward = _depthwise_dense(x, weight, bias, pad, (ho, wo))
    else:
        out, backward = _depthwise_shift(x, weight, bias, pad, (ho, wo))
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return _demote(Tensor._make(out, parents, backward, "depthwise_conv2d"), squeezed)


def _depthwise_dense(x: Tensor, weight: Tensor, bias, pad: int, out_hw):
    c, _, k, _ = weight.shape
    b, _, h, w = x.shape
    ho, wo = out_hw
    ops = _shift_operators(k, h, w, pad).astype(x.dtype, copy=False)
    wk = weight.data.reshape(c, k * k)
    # per-channel (ho·wo × h·w) operator built from the taps
    mats = (wk @ ops.reshape(k * k, -1)).reshape(c, ho * wo, h * w)
    xc = np.ascontiguousarray(x.data.reshape(b, c, h * w).transpose(1, 0, 2))  # c, b, hw
    out = (xc @ mats.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(b, c, ho, wo)

    def backward(g):
        gc = np.ascontiguousarray(g.reshape(b, c, ho * wo).transpose(1, 0, 2))  # c, b, howo
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gc @ mats).transpose(1, 0, 2).reshape(x.shape)
        if weight.requires_grad:
            gmats = gc.transpose(0, 2, 1) @ xc  # c, howo, hw
            gw = (gmats.reshape(c, -1) @ ops.reshape(k * k, -1).T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return np.ascontiguousarray(out), backward


def _depthwise_shift(x: Tensor, weight: Tensor, bias, pad: int, out_hw):
    c, _, k, _ = weight.shape
    b, _, h, w = x.shape
    ho, wo = out_hw
    wd = weight.data.reshape(c, k, k)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((b, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += wd[:, i, j].reshape(1, c, 1, 1) * xp[:, :, i : i + ho, j : j + wo]

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + ho, j : j + wo] += wd[:, i, j].reshape(1, c, 1, 1) * g
            gx = gxp[:, :, pad : pad + h, pad : pad + w]
        if weight.requires_grad:
            gw = np.empty((c, k, k), dtype=wd.dtype)
            for i in range(k):
                for j in range(k):
                    gw[:, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, i : i + ho, j : j + wo])
            gw = gw.reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return out, backward
