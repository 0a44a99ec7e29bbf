"""Dense f64 tensors with tape-based reverse-mode differentiation.

Every differentiable quantity in the package (images, disparity maps, depth
distributions, losses) lives in a :class:`Tensor`.  Operations on tensors that
require gradients append a node to the active :class:`Tape`; :func:`backward`
replays the tape in reverse and accumulates gradients into leaf tensors.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "DomainError",
    "TapeError",
    "Tensor",
    "Tape",
    "tensor",
    "no_grad",
    "grad_enabled",
    "active_tape",
    "reset_tape",
    "record",
    "elementwise",
    "reduce",
    "add",
    "sub",
    "mul",
    "div",
    "exp",
    "log",
    "absolute",
    "maximum",
    "power",
    "sigmoid",
    "clip",
    "where_const",
    "reshape",
    "concat",
    "pad",
    "upsample_nearest",
    "conv2d",
    "backward",
    "gradcheck",
]


class NonFiniteError(ValueError):
    """A tensor would hold NaN or Inf."""


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    """log/div called outside their domain."""


class TapeError(RuntimeError):
    pass


class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)


_state = {"tape": Tape(), "enabled": True}


def active_tape() -> Tape:
    return _state["tape"]


def reset_tape() -> Tape:
    """Drop the active tape (and everything recorded on it) and start a new one."""
    _state["tape"] = Tape()
    return _state["tape"]


def grad_enabled() -> bool:
    return _state["enabled"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state["enabled"]
    _state["enabled"] = False
    try:
        yield
    finally:
        _state["enabled"] = prev


def _check_finite(data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        bad = np.argwhere(~np.isfinite(data))[0]
        raise NonFiniteError(f"non-finite value at index {tuple(int(i) for i in bad)}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")
    # make ``ndarray <op> Tensor`` dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, *, check: bool = True) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if check:
            _check_finite(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, check=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None):
        return reduce("sum", self, axis)

    def mean(self, axis=None):
        return reduce("mean", self, axis)

    def var(self, axis=None):
        return reduce("variance", self, axis)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as an op output; record it on the tape when gradients flow.

    ``backward_fn(grad_out)`` must return one gradient array (or ``None``) per
    parent, each shaped like that parent.
    """
    out = Tensor(data)
    if _state["enabled"] and any(p.requires_grad for p in parents):
        tape = _state["tape"]
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append((out, tuple(parents), backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shapes(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b)
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b)
    return record(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b)
    zero = b.data == 0
    if zero.any():
        idx = tuple(int(i) for i in np.argwhere(zero)[0])
        raise DomainError(f"division by zero at index {idx}")
    out = a.data / b.data
    return record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
    )


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    bad = a.data <= 0
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DomainError(f"log of non-positive value {a.data[idx]!r} at index {idx}")
    return record(np.log(a.data), (a,), lambda g: (g / a.data,))


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    return record(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a, c: float) -> Tensor:
    """max(a, c) against a constant; the derivative at the tie is 0."""
    a = _as_tensor(a)
    mask = a.data > c
    return record(np.where(mask, a.data, c), (a,), lambda g: (g * mask,))


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    if p < 1 and (a.data < 0).any():
        raise DomainError("fractional power of a negative value")
    out = a.data**p
    return record(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return record(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def where_const(mask: np.ndarray, a) -> Tensor:
    """Keep ``a`` where ``mask`` holds, zero elsewhere."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "max": maximum,
    "power": power,
}
_UNARY = {"exp": exp, "log": log, "abs": absolute}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, div, exp, log, abs, max (with constant), power."""
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {kind!r}")
    return _ELEMENTWISE[kind](a, b)


# ----------------------------------------------------------------- reductions


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce(kind: str, a, axes=None) -> Tensor:
    """sum, mean or population variance over ``axes`` (all axes when None)."""
    a = _as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in ax])) if ax else 1
    if count == 0:
        raise ShapeError("empty reduction")

    def expand(g: np.ndarray) -> np.ndarray:
        return np.expand_dims(g, ax) if ax else g

    if kind == "sum":
        return record(
            a.data.sum(axis=ax), (a,), lambda g: (np.broadcast_to(expand(g), a.shape).copy(),)
        )
    if kind == "mean":
        return record(
            a.data.mean(axis=ax),
            (a,),
            lambda g: (np.broadcast_to(expand(g) / count, a.shape).copy(),),
        )
    if kind == "variance":
        mu = a.data.mean(axis=ax, keepdims=True)
        out = (a.data**2).mean(axis=ax) - np.squeeze(mu, axis=ax) ** 2
        out = np.maximum(out, 0.0)
        return record(out, (a,), lambda g: (expand(g) * 2.0 * (a.data - mu) / count,))
    raise ValueError(f"unknown reduction {kind!r}")


# -------------------------------------------------------------- shape plumbing


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _getitem(a: Tensor, idx) -> Tensor:
    items = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return record(a.data[idx], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return record(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def pad(a, width: int, mode: str = "zero", axes: tuple[int, int] = (-3, -2)) -> Tensor:
    """Pad two spatial axes by ``width`` on each side ('zero' or 'replicate')."""
    a = _as_tensor(a)
    if width < 0:
        raise ValueError("padding must be non-negative")
    if width == 0:
        return a
    ax = [x % a.ndim for x in axes]
    if mode == "zero":
        spec = [(width, width) if i in ax else (0, 0) for i in range(a.ndim)]
        sl = tuple(slice(width, -width) if i in ax else slice(None) for i in range(a.ndim))
        return record(np.pad(a.data, spec), (a,), lambda g: (g[sl],))
    if mode == "replicate":
        idx = [np.clip(np.arange(-width, a.shape[i] + width), 0, a.shape[i] - 1) for i in ax]
        out = np.take(np.take(a.data, idx[0], axis=ax[0]), idx[1], axis=ax[1])

        def back(g):
            return (fold_edges(fold_edges(g, ax[1], width), ax[0], width),)

        return record(out, (a,), back)
    raise ValueError(f"unknown padding mode {mode!r}")


def fold_edges(g: np.ndarray, axis: int, width: int) -> np.ndarray:
    """Adjoint of replicate padding along one axis: fold the pads onto the edge cells."""
    g = np.moveaxis(g, axis, 0)
    out = g[width:-width].copy()
    out[0] += g[:width].sum(axis=0)
    out[-1] += g[-width:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def upsample_nearest(a, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the (H, W) axes of a (..., H, W, C) tensor."""
    a = _as_tensor(a)
    out = np.repeat(np.repeat(a.data, factor, axis=-3), factor, axis=-2)

    def back(g):
        *lead, h, w, c = g.shape
        g = g.reshape(*lead, h // factor, factor, w // factor, factor, c)
        return (g.sum(axis=(-4, -2)),)

    return record(out, (a,), back)


def conv2d(x, kernel, stride: int = 1, padding: int = 0, mode: str = "zero") -> Tensor:
    """Cross-correlation of a (..., H, W, Cin) input with a (kh, kw, Cin, Cout) kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if stride < 1 or padding < 0:
        raise ValueError(f"invalid stride {stride} / padding {padding}")
    if kernel.ndim == 2:
        kernel = reshape(kernel, kernel.shape + (1, 1))
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects {cin}")
    xp = pad(x, padding, mode) if padding else x
    h, w = xp.shape[-3], xp.shape[-2]
    if kh > h or kw > w:
        raise ShapeError("kernel larger than padded input")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    xd, kd = xp.data, kernel.data

    def window(i: int, j: int) -> tuple:
        rows = slice(i, i + stride * (ho - 1) + 1, stride)
        cols = slice(j, j + stride * (wo - 1) + 1, stride)
        return (Ellipsis, rows, cols, slice(None))

    out = np.zeros(xd.shape[:-3] + (ho, wo, cout))
    for i in range(kh):
        for j in range(kw):
            out += xd[window(i, j)] @ kd[i, j]

    def back(g):
        gx = None
        if xp.requires_grad:
            gx = np.zeros_like(xd)
            for i in range(kh):
                for j in range(kw):
                    gx[window(i, j)] += g @ kd[i, j].T
        gk = None
        if kernel.requires_grad:
            gk = np.empty_like(kd)
            g2 = g.reshape(-1, cout)
            for i in range(kh):
                for j in range(kw):
                    gk[i, j] = xd[window(i, j)].reshape(-1, cin).T @ g2
        return gx, gk

    return record(out, (xp, kernel), back)


# ------------------------------------------------------------------- backward


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf's ``grad`` and consume the tape."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise TapeError("loss is not on a tape (nothing requires grad)")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node[0]) for node in tape.nodes}
    leaves: dict[int, Tensor] = {}
    for out, parents, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for parent, pg in zip(parents, fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if key not in produced:
                leaves[key] = parent
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    tape.consumed = True
    if tape is _state["tape"]:
        reset_tape()


def gradcheck(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|)."""
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    reset_tape()
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if not np.isfinite(out.data).all():
        raise NonFiniteError("f returned a non-finite value")
    if out._tape is None:
        analytic = np.zeros_like(x0)
    else:
        backward(out)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)
    reset_tape()
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    with no_grad():
        for k in range(x0.size):
            xp = x0.copy().reshape(-1)
            xm = xp.copy()
            xp[k] += h
            xm[k] -= h
            fp = f(Tensor(xp.reshape(x0.shape))).data
            fm = f(Tensor(xm.reshape(x0.shape))).data
            if not (np.isfinite(fp).all() and np.isfinite(fm).all()):
                raise NonFiniteError(f"f non-finite at coordinate {k}")
            flat[k] = (float(fp.reshape(-1)[0]) - float(fm.reshape(-1)[0])) / (2 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
