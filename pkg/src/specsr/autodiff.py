"""Minimal reverse-mode autodiff over dense float32 arrays.

Only the primitives the network and its losses need are provided. Every
primitive records a node on its output; :func:`backward` replays the reachable
nodes in reverse creation order and then frees them, so a graph can be
differentiated exactly once.
"""

from __future__ import annotations

import contextlib
import contextvars
import itertools
from typing import Callable, Sequence

import numpy as np

from . import _kernels

DTYPE = np.float32

_seq = itertools.count()
# Working precision of newly created arrays; float32 everywhere except inside
# the finite-difference oracle, which re-runs forward passes in float64.
_precision: contextvars.ContextVar[type] = contextvars.ContextVar("precision", default=DTYPE)
# Non-smooth ops log their discrete decisions here while a trace is active;
# the finite-difference checker uses it to skip coordinates that cross a kink.
_kink_log: contextvars.ContextVar[list | None] = contextvars.ContextVar("kink_log", default=None)


@contextlib.contextmanager
def precision(dtype):
    token = _precision.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _precision.reset(token)


def _dt():
    return _precision.get()


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested primitive."""


class GraphError(RuntimeError):
    """Misuse of the recorded computation (non-scalar loss, replayed graph...)."""


class _Node:
    __slots__ = ("seq", "op", "inputs", "backward_fn", "consumed")

    def __init__(self, op, inputs, backward_fn):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """Dense float32 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=_dt(), copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._node = None
        self.name = name

    @classmethod
    def _from_op(cls, data, op, inputs, backward_fn) -> Tensor:
        out = cls.__new__(cls)
        dt = _dt()
        out.data = data if data.dtype == dt else data.astype(dt)
        out.grad = None
        out.name = None
        tracked = any(t.requires_grad or t._node is not None for t in inputs)
        out.requires_grad = False
        out._node = _Node(op, inputs, backward_fn) if tracked else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self):
        return backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> list[str]:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate. Leaves in ``params`` that ``loss`` does not
    depend on get a zero gradient. Returns the names of the replayed
    primitives in visit order.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")

    order = []
    if loss._node is not None:
        seen = set()
        stack = [loss]
        while stack:
            t = stack.pop()
            if id(t) in seen or t._node is None:
                continue
            seen.add(id(t))
            if t._node.consumed:
                raise GraphError("graph already differentiated; run a new forward pass")
            order.append(t)
            stack.extend(t._node.inputs)
        order.sort(key=lambda t: t._node.seq, reverse=True)

    grads = {id(loss): np.ones_like(loss.data)}
    if loss._node is None and loss.requires_grad:
        _accumulate_leaf(loss, grads[id(loss)])

    replayed = []
    for t in order:
        node = t._node
        g = grads.pop(id(t), None)
        if g is not None:
            in_grads = node.backward_fn(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None:
                    continue
                if inp._node is not None:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + ig
                    else:
                        grads[key] = ig
                elif inp.requires_grad:
                    _accumulate_leaf(inp, ig)
        replayed.append(node.op)
        node.consumed = True
        node.backward_fn = None

    if params is not None:
        for p in params:
            if p.grad is None:
                p.zero_grad()
    return replayed


def _accumulate_leaf(leaf, g):
    g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad += g


@contextlib.contextmanager
def kink_trace():
    """Collect the discrete decisions (relu masks, argmax picks, clamps) of a forward pass."""
    log = []
    token = _kink_log.set(log)
    try:
        yield log
    finally:
        _kink_log.reset(token)


def _log_kink(arr):
    log = _kink_log.get()
    if log is not None:
        log.append(np.asarray(arr).tobytes())


# --- primitives -------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 'same' convolution (cross-correlation) of a [F_in, H, W] map."""
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects [F,H,W] input and [Fo,Fi,k,k] kernel, got {x.shape}, {kernel.shape}")
    f_out, f_in, k, k2 = kernel.shape
    f, h, w = x.shape
    if f_in != f:
        raise ShapeError(f"kernel expects {f_in} input channels, input has {f}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {k}x{k2}")
    if bias.shape != (f_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {f_out} output channels")

    wmat = kernel.data.reshape(f_out, f_in * k * k)
    if k == 1:
        cols = x.data.reshape(f, h * w)
    else:
        cols = _kernels.im2col(x.data, k)
    out = wmat @ cols
    out += bias.data[:, None]

    def grad_fn(g):
        g2 = g.reshape(f_out, h * w)
        gk = (g2 @ cols.T).reshape(kernel.shape)
        gb = g2.sum(axis=1)
        gcols = wmat.T @ g2
        gx = gcols.reshape(f, h, w) if k == 1 else _kernels.col2im(gcols, f, h, w, k)
        return gx, gk, gb

    return Tensor._from_op(out.reshape(f_out, h, w), "conv2d", (x, kernel, bias), grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_kink(mask)
    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.data.dtype), "relu", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    return Tensor._from_op(s, "sigmoid", (x,), lambda g: (g * s * (1 - s),))


def global_pool(x: Tensor, mode: str) -> Tensor:
    """Per-channel spatial max or mean of [C, H, W], returned as [C, 1, 1]."""
    if x.data.ndim != 3:
        raise ShapeError(f"global_pool expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    flat = x.data.reshape(c, h * w)
    if mode == "max":
        idx = flat.argmax(axis=1)  # first occurrence in row-major order
        _log_kink(idx)
        out = flat[np.arange(c), idx]

        def grad_fn(g):
            gx = np.zeros((c, h * w), dtype=g.dtype)
            gx[np.arange(c), idx] = g.reshape(c)
            return (gx.reshape(c, h, w),)
    elif mode == "mean":
        out = flat.mean(axis=1, dtype=np.float64).astype(flat.dtype)
        n = h * w

        def grad_fn(g):
            return (np.broadcast_to(g.reshape(c, 1, 1) / g.dtype.type(n), (c, h, w)).copy(),)
    else:
        raise ValueError(f"unknown pool mode {mode!r}")
    return Tensor._from_op(out.reshape(c, 1, 1), f"global_pool_{mode}", (x,), grad_fn)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._from_op(a.data + b.data, "add", (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._from_op(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def scale(a: Tensor, s: float) -> Tensor:
    s = _dt()(s)
    return Tensor._from_op(a.data * s, "scale", (a,), lambda g: (g * s,))


def scalar_mul(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``x`` by the single learnable value in ``s``."""
    if s.size != 1:
        raise ShapeError(f"scalar_mul needs a 1-element factor, got {s.shape}")
    xd, sv = x.data, s.data.reshape(-1)[0]
    return Tensor._from_op(xd * sv, "scalar_mul", (x, s), lambda g: (g * sv, np.array([np.sum(g * xd, dtype=np.float64)], dtype=g.dtype)))


def channel_scale(x: Tensor, w: Tensor) -> Tensor:
    """Multiply channel i of a [C, H, W] map by w[i]."""
    if x.data.ndim != 3 or w.shape != (x.shape[0],):
        raise ShapeError(f"channel_scale: weights {w.shape} do not match channels of {x.shape}")
    xd, wd = x.data, w.data[:, None, None]

    def grad_fn(g):
        return g * wd, np.einsum("chw,chw->c", g, xd, dtype=np.float64).astype(g.dtype)

    return Tensor._from_op(xd * wd, "channel_scale", (x, w), grad_fn)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one part")
    spatial = parts[0].shape[1:]
    for p in parts:
        if p.data.ndim != 3 or p.shape[1:] != spatial:
            raise ShapeError(f"concat_channels: spatial mismatch {p.shape} vs {spatial}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def grad_fn(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Tensor._from_op(np.concatenate([p.data for p in parts], axis=0), "concat_channels", tuple(parts), grad_fn)


def gather_channels(x: Tensor, index) -> Tensor:
    """Select channels ``x[index]``; a permutation when ``index`` is one."""
    index = np.asarray(index, dtype=np.intp)
    c = x.shape[0]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return Tensor._from_op(x.data[index], "gather_channels", (x,), grad_fn)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    total = np.array([np.sum(x.data, dtype=np.float64)], dtype=x.data.dtype)
    return Tensor._from_op(total, "sum", (x,), lambda g: (np.full(shape, g.reshape(-1)[0], dtype=g.dtype),))


def custom_op(name: str, data: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Record a fused primitive whose gradient rule is supplied by the caller."""
    return Tensor._from_op(np.asarray(data, dtype=_dt()), name, tuple(inputs), grad_fn)


# --- finite differences ---------------------------------------------------------------

def relative_error(analytic: float, numeric: float, floor: float) -> float:
    """|a - n| / max(|a|, |n|, floor); ``floor`` keeps near-zero gradients meaningful."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    rng: np.random.Generator,
    coords_per_tensor: int | None = 20,
    step: float = 1e-3,
    floor: float = 1e-2,
    fd_dtype=np.float64,
) -> list[tuple[str, tuple, float, float, float]]:
    """Compare analytic gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the graph from the leaf ``tensors`` on every call.
    Analytic gradients come from the float32 graph; the difference quotients
    re-run the same forward code with the leaves promoted to ``fd_dtype``.
    Coordinates whose +/- perturbation changes a relu mask, argmax or clamp are
    skipped and replaced by the next random draw, so a tensor may end up with
    fewer rows than requested. ``coords_per_tensor=None`` checks every smooth
    coordinate. Returns
    ``(name, index, analytic, numeric, rel_err)`` rows.
    """
    for t in tensors.values():
        t.grad = None
    backward(loss_fn(), params=list(tensors.values()))
    analytic = {name: t.grad.copy() for name, t in tensors.items()}

    originals = {name: t.data for name, t in tensors.items()}
    rows = []
    try:
        for t in tensors.values():
            t.data = t.data.astype(fd_dtype)

        def evaluate():
            with precision(fd_dtype), kink_trace() as log:
                value = float(loss_fn().data.reshape(-1)[0])
            return value, log

        for name, t in tensors.items():
            if coords_per_tensor is None or coords_per_tensor >= t.size:
                candidates = list(range(t.size))
                quota = t.size
            else:
                candidates = list(rng.permutation(t.size))
                quota = coords_per_tensor
            done = 0
            for flat in candidates:
                if done >= quota:
                    break
                idx = np.unravel_index(flat, t.shape)
                orig = t.data[idx]
                t.data[idx] = orig + step
                fp, plus_log = evaluate()
                t.data[idx] = orig - step
                fm, minus_log = evaluate()
                t.data[idx] = orig
                if plus_log != minus_log:
                    continue
                numeric = (fp - fm) / (2 * step)
                a = float(analytic[name][idx])
                rows.append((name, tuple(int(i) for i in idx), a, numeric, relative_error(a, numeric, floor)))
                done += 1
    finally:
        for name, t in tensors.items():
            t.data = originals[name]
            t.grad = analytic[name]
    return rows
