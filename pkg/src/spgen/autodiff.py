"""Minimal reverse-mode automatic differentiation on numpy arrays.

Every differentiable op builds its output eagerly and, when any input requires
a gradient, appends a record to the active :class:`Tape`.  ``backward`` then
walks those records in reverse execution order.

Spatial ops accept either an unbatched ``(C, H, W)`` tensor or a batched
``(N, C, H, W)`` one; there is no general broadcasting.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32


class Tensor:
    """n-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.name = name
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

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


# ---------------------------------------------------------------------------
# tape


@dataclass
class OpRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered op records; records are appended in execution order."""

    records: list[OpRecord] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _state().stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state().stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        for rec in self.records:
            rec.output.node_id = None
            rec.output._tape = None
        self.records.clear()


class _State(threading.local):
    def __init__(self):
        self.stack: list[Tape] = [Tape()]
        self.enabled = True


_STATE = _State()


def _state() -> _State:
    return _STATE


def current_tape() -> Tape:
    return _state().stack[-1]


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them."""
    st = _state()
    prev, st.enabled = st.enabled, False
    try:
        yield
    finally:
        st.enabled = prev


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def apply_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    """Wrap ``out_data`` in a tensor and record ``backward`` if needed.

    ``backward(grad_out)`` must return one gradient (or None) per input.
    """
    out = Tensor(out_data, dtype=out_data.dtype)
    st = _state()
    if st.enabled and any(t.requires_grad for t in inputs):
        tape = st.stack[-1]
        out.requires_grad = True
        out.node_id = len(tape.records)
        out._tape = tape
        tape.records.append(OpRecord(op, tuple(inputs), out, backward))
    return out


def backward(loss: Tensor, params: Sequence[Tensor] | None = None, order: str = "tape",
             retain: bool = False):
    """Back-propagate from a scalar ``loss``.

    Gradients are summed into ``.grad`` of every reachable leaf.  Returns the
    gradients of ``params`` when given.  ``order="topo"`` traverses a
    depth-first topological order instead of the tape order (same result up
    to float associativity).
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is detached from the graph: nothing requires grad")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.node_id is None:
        leaves[id(loss)] = loss
    else:
        tape = loss._tape
        records = _traversal(tape, loss.node_id, order)
        for rec in records:
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.node_id is None:
                    leaves[key] = inp
        if not retain:
            tape.clear()

    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.astype(leaf.dtype, copy=False).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g

    if params is not None:
        return [p.grad for p in params]
    return None


def _traversal(tape: Tape, root: int, order: str) -> list[OpRecord]:
    records = tape.records[: root + 1]
    if order == "tape":
        return records[::-1]
    if order != "topo":
        raise ValueError(f"unknown traversal order {order!r}")
    # explicit-stack DFS post-order over parent links, children visited last-input-first
    seen: set[int] = set()
    post: list[int] = []
    stack = [(root, False)]
    while stack:
        nid, expanded = stack.pop()
        if expanded:
            post.append(nid)
            continue
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((nid, True))
        for inp in records[nid].inputs:
            if inp.node_id is not None and inp._tape is tape and inp.node_id not in seen:
                stack.append((inp.node_id, False))
    return [records[i] for i in reversed(post)]


# ---------------------------------------------------------------------------
# elementwise / shape ops


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = float(b)
        return apply_op("add_const", (a,), a.data + a.dtype.type(c), lambda g: (g,))
    _check_same(a, b, "add")
    return apply_op("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _check_same(a, b, "sub")
    return apply_op("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = a.dtype.type(float(b))
        return apply_op("mul_const", (a,), a.data * c, lambda g: (g * c,))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return apply_op("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("square", (x,), xd * xd, lambda g: (2 * xd * g,))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return apply_op("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype),
                    lambda g: (np.broadcast_to(g, shape).astype(g.dtype),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return apply_op("mean", (x,), np.asarray(x.data.mean(), dtype=x.dtype),
                    lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return apply_op("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; all other dims must agree."""
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=ax))

    return apply_op("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=ax), bwd)


def tile_batch(x: Tensor, n: int) -> Tensor:
    """Repeat an unbatched tensor ``n`` times along a new leading axis."""
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return apply_op("tile_batch", (x,), out, lambda g: (g.sum(axis=0),))


def take(x: Tensor, flat_index: np.ndarray) -> Tensor:
    """Gather elements of the flattened ``x``; backward scatter-adds."""
    idx = np.asarray(flat_index, dtype=np.intp)
    shape = x.shape

    def bwd(g):
        gx = np.zeros(int(np.prod(shape)), dtype=g.dtype)
        np.add.at(gx, idx, g)
        return (gx.reshape(shape),)

    return apply_op("take", (x,), x.data.reshape(-1)[idx], bwd)


def channel_scale(maps: Tensor, scale: Tensor) -> Tensor:
    """Multiply each channel of ``maps`` (…, C, h, w) by ``scale`` (…, C)."""
    if maps.shape[:-2] != scale.shape:
        raise ValueError(f"channel_scale: maps {maps.shape} vs scale {scale.shape}")
    md, sd = maps.data, scale.data

    def bwd(g):
        return g * sd[..., None, None], (g * md).sum(axis=(-2, -1))

    return apply_op("channel_scale", (maps, scale), md * sd[..., None, None], bwd)


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_op("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return apply_op("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(x: Tensor) -> Tensor:
    z = x.data
    out = np.logaddexp(0, z).astype(x.dtype)
    return apply_op("softplus", (x,), out, lambda g: (g * _sigmoid(z),))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softplus":
        return softplus(x)
    raise ValueError(f"unknown activation {kind!r}")


def gradient_reverse(x: Tensor) -> Tensor:
    """Identity forward, negated gradient backward."""
    return apply_op("grl", (x,), x.data.copy(), lambda g: (-g,))


# ---------------------------------------------------------------------------
# dense / pooling


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``W @ x + b`` for ``x`` of shape (n,) or (N, n)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: x {x.shape}, W {weight.shape}, b {bias.shape} do not agree")
    xd, wd = x.data, weight.data
    out = xd @ wd.T + bias.data

    def bwd(g):
        g2 = g.reshape(-1, wd.shape[0])
        x2 = xd.reshape(-1, wd.shape[1])
        return (g @ wd, g2.T @ x2, g2.sum(axis=0))

    return apply_op("linear", (x, weight, bias), out, bwd)


def global_pool(kind: str, maps: Tensor) -> Tensor:
    """Per-channel max or mean over the last two axes."""
    if maps.ndim < 2 or maps.shape[-1] < 1 or maps.shape[-2] < 1:
        raise ValueError(f"global_pool: empty map of shape {maps.shape}")
    h, w = maps.shape[-2:]
    lead = maps.shape[:-2]
    flat = maps.data.reshape(lead + (h * w,))
    if kind == "avg":
        return apply_op("gavgpool", (maps,), flat.mean(axis=-1),
                        lambda g: (np.broadcast_to(g[..., None, None] / (h * w), maps.shape).astype(g.dtype),))
    if kind == "max":
        arg = flat.argmax(axis=-1)  # first occurrence on ties

        def bwd(g):
            gx = np.zeros_like(flat)
            np.put_along_axis(gx, arg[..., None], g[..., None], axis=-1)
            return (gx.reshape(maps.shape),)

        return apply_op("gmaxpool", (maps,), np.take_along_axis(flat, arg[..., None], -1)[..., 0], bwd)
    raise ValueError(f"unknown pooling kind {kind!r}")


def softmax2d(maps: Tensor, beta: float) -> Tensor:
    """Softmax over the last two axes of ``beta * maps`` (max-subtracted)."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if not np.all(np.isfinite(maps.data)):
        raise ValueError("softmax2d: non-finite input")
    h, w = maps.shape[-2:]
    lead = maps.shape[:-2]
    z = beta * maps.data.reshape(lead + (h * w,))
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = (e / e.sum(axis=-1, keepdims=True)).astype(maps.dtype)

    def bwd(g):
        g2 = g.reshape(p.shape)
        dot = (g2 * p).sum(axis=-1, keepdims=True)
        return ((beta * p * (g2 - dot)).reshape(maps.shape),)

    return apply_op("softmax2d", (maps,), p.reshape(maps.shape), bwd)


def spatial_expectation(prob: Tensor) -> Tensor:
    """Expected normalized grid position under ``prob`` (…, h, w) -> (…, 2).

    Column ``i`` maps to ``x = i / w`` and row ``j`` to ``y = j / h``.
    """
    h, w = prob.shape[-2:]
    xs = (np.arange(w) / w).astype(prob.dtype)
    ys = (np.arange(h) / h).astype(prob.dtype)
    pd = prob.data
    out = np.stack([(pd.sum(axis=-2) * xs).sum(-1), (pd.sum(axis=-1) * ys).sum(-1)], axis=-1)

    def bwd(g):
        return (g[..., 0, None, None] * xs[None, :] + g[..., 1, None, None] * ys[:, None],)

    return apply_op("expectation", (prob,), out.astype(prob.dtype), bwd)


# ---------------------------------------------------------------------------
# convolutions


def _batched(x: Tensor, op: str) -> bool:
    if x.ndim == 3:
        return False
    if x.ndim == 4:
        return True
    raise ValueError(f"{op}: expected (C,H,W) or (N,C,H,W) input, got shape {x.shape}")


def _out_size(h: int, w: int, kh: int, kw: int, stride: int, padding: int, op: str):
    if stride < 1:
        raise ValueError(f"{op}: stride must be >= 1, got {stride}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"{op}: kernel {kh}x{kw} larger than padded input {hp}x{wp} (axes H, W)")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _windows(xd: np.ndarray, kh: int, kw: int, stride: int, padding: int, ho: int, wo: int):
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _col2im(dwin: np.ndarray, xshape, kh, kw, stride, padding):
    n, c, h, w = xshape
    _, _, ho, wo = dwin.shape[:4]
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dwin.dtype)
    for a in range(kh):
        for b in range(kw):
            dxp[:, :, a : a + stride * (ho - 1) + 1 : stride, b : b + stride * (wo - 1) + 1 : stride] += dwin[..., a, b]
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Dense 2-D cross-correlation with zero padding."""
    batched = _batched(x, "conv2d")
    xd = x.data if batched else x.data[None]
    if kernel.ndim != 4:
        raise ValueError(f"conv2d: kernel must be (Cout,Cin,kh,kw), got {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if xd.shape[1] != cin:
        raise ValueError(f"conv2d: input channels (axis C) {xd.shape[1]} != kernel Cin {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    n, _, h, w = xd.shape
    ho, wo = _out_size(h, w, kh, kw, stride, padding, "conv2d")
    wmat = kernel.data.reshape(cout, -1)

    if kh == kw == 1 and stride == 1 and padding == 0:
        cols = None
        out = np.einsum("oc,nchw->nohw", wmat, xd, optimize=True)
    else:
        win = _windows(xd, kh, kw, stride, padding, ho, wo)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
        out = (cols @ wmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def bwd(g):
        gb = g if batched else g[None]
        g2 = gb.transpose(0, 2, 3, 1).reshape(-1, cout)
        if cols is None:
            x2 = xd.transpose(0, 2, 3, 1).reshape(-1, cin)
            dk = (g2.T @ x2).reshape(kernel.shape)
            dx = np.einsum("oc,nohw->nchw", wmat, gb, optimize=True)
        else:
            dk = (g2.T @ cols).reshape(kernel.shape)
            dcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dx = _col2im(dcols, xd.shape, kh, kw, stride, padding)
        if not batched:
            dx = dx[0]
        db = g2.sum(axis=0) if bias is not None else None
        return (dx, dk, db) if bias is not None else (dx, dk)

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return apply_op("conv2d", inputs, out if batched else out[0], bwd)


def depthwise_conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0) -> Tensor:
    """Per-channel spatial convolution, ``kernels`` of shape (C, kh, kw)."""
    batched = _batched(x, "depthwise_conv2d")
    xd = x.data if batched else x.data[None]
    if kernels.ndim != 3 or kernels.shape[0] != xd.shape[1]:
        raise ValueError(f"depthwise_conv2d: {xd.shape[1]} input channels vs kernels {kernels.shape}")
    c, kh, kw = kernels.shape
    n, _, h, w = xd.shape
    ho, wo = _out_size(h, w, kh, kw, stride, padding, "depthwise_conv2d")
    win = _windows(xd, kh, kw, stride, padding, ho, wo)
    kd = kernels.data
    out = np.einsum("nchwij,cij->nchw", win, kd, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def bwd(g):
        gb = g if batched else g[None]
        dk = np.einsum("nchw,nchwij->cij", gb, win, optimize=True)
        dwin = gb[..., None, None] * kd[None, :, None, None]
        dx = _col2im(dwin, xd.shape, kh, kw, stride, padding)
        if not batched:
            dx = dx[0]
        if bias is None:
            return dx, dk
        return dx, dk, gb.sum(axis=(0, 2, 3))

    inputs = (x, kernels, bias) if bias is not None else (x, kernels)
    return apply_op("dwconv2d", inputs, out if batched else out[0], bwd)


def depthwise_separable(x: Tensor, dw_kernels: Tensor, pw_kernel: Tensor, stride: int = 1, padding: int = 0,
                        dw_bias: Tensor | None = None, pw_bias: Tensor | None = None) -> Tensor:
    """Depthwise spatial conv followed by a 1x1 channel-mixing conv."""
    c = x.shape[-3]
    if dw_kernels.shape[0] != c:
        raise ValueError(f"depthwise_separable: depthwise stage has {dw_kernels.shape[0]} channels, input has {c}")
    if pw_kernel.ndim != 4 or pw_kernel.shape[1] != c or pw_kernel.shape[2:] != (1, 1):
        raise ValueError(f"depthwise_separable: pointwise kernel {pw_kernel.shape} does not take {c} channels")
    y = depthwise_conv2d(x, dw_kernels, dw_bias, stride=stride, padding=padding)
    return conv2d(y, pw_kernel, pw_bias)


# ---------------------------------------------------------------------------
# losses


def binary_cross_entropy(pred: Tensor, target: np.ndarray, weights: np.ndarray | None = None,
                         eps: float = 1e-7) -> Tensor:
    """Weighted sum of elementwise BCE between probabilities and targets.

    ``weights`` defaults to ``1/size`` (the mean).  Predictions are clipped to
    ``[eps, 1-eps]``; the clip has zero gradient outside that range.
    """
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"binary_cross_entropy: pred {pred.shape} vs target {t.shape}")
    wts = np.full(pred.shape, 1.0 / max(pred.size, 1), dtype=pred.dtype) if weights is None else \
        np.asarray(weights, dtype=pred.dtype)
    p = pred.data
    pc = np.clip(p, eps, 1 - eps)
    val = -(wts * (t * np.log(pc) + (1 - t) * np.log1p(-pc))).sum()
    inside = (p > eps) & (p < 1 - eps)

    def bwd(g):
        return (g * wts * (pc - t) / (pc * (1 - pc)) * inside,)

    return apply_op("bce", (pred,), np.asarray(val, dtype=pred.dtype), bwd)


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean BCE on raw logits, ``max(z,0) - z*y + log(1+exp(-|z|))``."""
    y = np.asarray(labels, dtype=logits.dtype).reshape(logits.shape)
    z = logits.data
    val = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).mean()
    n = logits.size

    def bwd(g):
        return (g * (_sigmoid(z) - y) / n,)

    return apply_op("bce_logits", (logits,), np.asarray(val, dtype=logits.dtype), bwd)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class OptimState:
    """Adam moment buffers, keyed by parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: OptimState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimState:
    """One bias-corrected Adam update, in place on ``params``."""
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        if lr != 0:
            update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
            p.data = (p.data - update).astype(p.dtype)
    return state


def xavier_init(shape, rng_seed, fan_in: int | None = None, fan_out: int | None = None,
                gain: float = 1.0) -> Tensor:
    """Glorot-uniform samples in (-a, a), ``a = gain * sqrt(6 / (fan_in + fan_out))``.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or int(np.prod(shape)) == 0:
        raise ValueError(f"xavier_init needs a non-empty shape, got {shape}")
    if fan_in is None or fan_out is None:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fo = shape[0] * receptive
        fi = (shape[1] if len(shape) > 1 else shape[0]) * receptive
        fan_in = fi if fan_in is None else fan_in
        fan_out = fo if fan_out is None else fan_out
    a = gain * np.sqrt(6.0 / (fan_in + fan_out))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return Tensor(rng.uniform(-a, a, size=shape).astype(DTYPE), requires_grad=True)


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_check(op: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-5,
                            seed: int = 0, atol: float = 1e-6) -> float:
    """Worst relative error between AD and central-difference gradients.

    ``op`` maps tensors to a tensor; a fixed random projection reduces its
    output to a scalar.  Everything runs in float64 so the comparison checks
    the derivative formulas rather than float32 round-off.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    rng = np.random.default_rng(seed)

    def scalar(arrs, track):
        ts = [Tensor(a, requires_grad=track, dtype=np.float64) for a in arrs]
        out = op(*ts)
        proj = rng_proj(out.shape)
        return ts, sum(mul(out, Tensor(proj, dtype=np.float64))) if out.size > 1 else out

    proj_cache: dict = {}

    def rng_proj(shape):
        if shape not in proj_cache:
            proj_cache[shape] = rng.standard_normal(shape)
        return proj_cache[shape]

    with Tape():
        ts, loss = scalar(arrays, True)
        backward(loss)
    ad = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]

    worst = 0.0
    with no_grad():
        for k, a in enumerate(arrays):
            flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = scalar(arrays, False)[1].item()
                flat[i] = orig - eps
                fm = scalar(arrays, False)[1].item()
                flat[i] = orig
                fd = (fp - fm) / (2 * eps)
                g = float(ad[k].reshape(-1)[i])
                denom = max(abs(g), abs(fd), atol)
                worst = max(worst, abs(g - fd) / denom)
    return worst
