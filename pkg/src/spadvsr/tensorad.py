"""Small dense-array engine with reverse-mode differentiation.

Every operation returns a :class:`Tensor` that remembers its parents and a
closure mapping the output gradient onto parent gradients.  Calling
:func:`backward` on a scalar walks that record in reverse topological order.

Feature maps use a channels-last layout, ``(N, T, H, W, C)``; the leading
batch axis is optional for the convolution and normalisation layers.
All data is held as float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

PADDING_MODES = ("replicate", "zero")
_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording a graph (inference)."""
    global _grad_enabled
    previous, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """An n-d float64 array plus the bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(data: np.ndarray, parents: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap ``data`` as the output of an operation on ``parents``.

    ``backward_fn`` receives the output gradient and must call
    :func:`accumulate` for each parent that needs a gradient.  When no parent
    requires a gradient nothing is recorded.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        raise ValueError(f"gradient shape {g.shape} does not match tensor {t.data.shape}")
    t.grad = g.copy() if t.grad is None else t.grad + g


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    if not loss.requires_grad:
        raise RuntimeError("loss has no recorded graph; run a forward pass on "
                           "tensors with requires_grad=True first")
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add: shapes differ {a.shape} vs {b.shape}")

    def _bw(g):
        accumulate(a, g)
        accumulate(b, g)
    return record(a.data + b.data, (a, b), _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"sub: shapes differ {a.shape} vs {b.shape}")

    def _bw(g):
        accumulate(a, g)
        accumulate(b, -g)
    return record(a.data - b.data, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: shapes differ {a.shape} vs {b.shape}")

    def _bw(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)
    return record(a.data * b.data, (a, b), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    return record(a.data * c, (a,), lambda g: accumulate(a, g * c))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return record(np.array(a.data.sum()), (a,),
                  lambda g: accumulate(a, np.broadcast_to(g, a.shape).copy()))


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return record(np.array(a.data.mean()), (a,),
                  lambda g: accumulate(a, np.full(a.shape, float(g) / n)))


def relu(a: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: accumulate(a, g * mask))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)
    return record(np.clip(a.data, lo, hi), (a,), lambda g: accumulate(a, g * inside))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return record(a.data.reshape(shape), (a,), lambda g: accumulate(a, g.reshape(a.shape)))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            accumulate(t, np.ascontiguousarray(part))
    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, _bw)


def take(a: Tensor, index: int, axis: int, keepdims: bool = False) -> Tensor:
    """Select one position along ``axis``."""
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(index, index + 1) if keepdims else index
    sl = tuple(sl)

    def _bw(g):
        full = np.zeros(a.shape)
        full[sl] = g
        accumulate(a, full)
    return record(a.data[sl].copy(), (a,), _bw)


# ------------------------------------------------------------------- padding

def _pad_axis(x: np.ndarray, axis: int, p: int, mode: str) -> np.ndarray:
    if p == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (p, p)
    return np.pad(x, widths, mode="edge" if mode == "replicate" else "constant")


def _unpad_axis(g: np.ndarray, axis: int, p: int, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad_axis`."""
    if p == 0:
        return g
    n = g.shape[axis] - 2 * p
    core = np.take(g, np.arange(p, p + n), axis=axis).copy()
    if mode == "replicate":
        head = np.take(g, np.arange(0, p), axis=axis).sum(axis=axis)
        tail = np.take(g, np.arange(p + n, n + 2 * p), axis=axis).sum(axis=axis)
        first = [slice(None)] * g.ndim
        last = [slice(None)] * g.ndim
        first[axis] = 0
        last[axis] = n - 1
        core[tuple(first)] += head
        core[tuple(last)] += tail
    return core


# --------------------------------------------------------------- convolution

def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           temporal_padding: str = "replicate", spatial_padding: str = "zero") -> Tensor:
    """Stride-1 'same' 3D convolution.

    x is ``(N, T, H, W, Cin)`` or ``(T, H, W, Cin)``; weight is
    ``(kt, kh, kw, Cin, Cout)``; bias is ``(Cout,)``.  Kernel extents must be
    odd so the output keeps the input extents.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if temporal_padding not in PADDING_MODES or spatial_padding not in PADDING_MODES:
        raise ValueError(f"padding must be one of {PADDING_MODES}")
    squeeze = x.ndim == 4
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 5 or weight.ndim != 5:
        raise ValueError("conv3d expects a (N,)T,H,W,C input and a 5-d kernel")
    kt, kh, kw, cin, cout = weight.shape
    if xd.shape[-1] != cin:
        raise ValueError(f"conv3d: input has {xd.shape[-1]} channels, kernel expects {cin}")
    if not (kt % 2 and kh % 2 and kw % 2):
        raise ValueError("conv3d: kernel extents must be odd")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"conv3d: bias shape {bias.shape} != ({cout},)")

    n, t, h, w, _ = xd.shape
    pads = ((1, kt // 2, temporal_padding), (2, kh // 2, spatial_padding),
            (3, kw // 2, spatial_padding))
    xp = xd
    for axis, p, mode in pads:
        xp = _pad_axis(xp, axis, p, mode)

    wd = weight.data
    out = np.zeros((n, t, h, w, cout))
    offsets = [(i, j, k) for i in range(kt) for j in range(kh) for k in range(kw)]
    for i, j, k in offsets:
        out += xp[:, i:i + t, j:j + h, k:k + w] @ wd[i, j, k]
    if bias is not None:
        out += bias.data

    def _bw(g):
        g5 = g[None] if squeeze else g
        if weight.requires_grad:
            g2 = g5.reshape(-1, cout)
            gw = np.empty_like(wd)
            for i, j, k in offsets:
                gw[i, j, k] = xp[:, i:i + t, j:j + h, k:k + w].reshape(-1, cin).T @ g2
            accumulate(weight, gw)
        if bias is not None and bias.requires_grad:
            accumulate(bias, g5.reshape(-1, cout).sum(axis=0))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i, j, k in offsets:
                gxp[:, i:i + t, j:j + h, k:k + w] += g5 @ wd[i, j, k].T
            for axis, p, mode in reversed(pads):
                gxp = _unpad_axis(gxp, axis, p, mode)
            accumulate(x, gxp[0] if squeeze else gxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out[0] if squeeze else out, parents, _bw)


# ------------------------------------------------------------ normalisation

class BatchNormState:
    """Running statistics for one batch-normalisation layer."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool) -> Tensor:
    """Per-channel normalisation over every axis except the last.

    Training mode uses the batch statistics and updates the running ones;
    eval mode uses the running statistics only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("batch_norm: gamma/beta must have one entry per channel")
    axes = tuple(range(x.ndim - 1))
    m = x.data.size // c
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        mom = state.momentum
        state.running_mean = mom * state.running_mean + (1 - mom) * mu
        unbiased = var * m / (m - 1) if m > 1 else var
        state.running_var = mom * state.running_var + (1 - mom) * unbiased
    else:
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gamma.data + beta.data

    def _bw(g):
        accumulate(gamma, (g * xhat).sum(axis=axes))
        accumulate(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                s1 = dxhat.sum(axis=axes)
                s2 = (dxhat * xhat).sum(axis=axes)
                accumulate(x, inv_std * (dxhat - s1 / m - xhat * s2 / m))
            else:
                accumulate(x, dxhat * inv_std)
    return record(out, (x, gamma, beta), _bw)


# ------------------------------------------------------------ rearrangement

def softmax_taps(logits: Tensor, axis: int = -1) -> Tensor:
    logits = as_tensor(logits)
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        accumulate(logits, s * (g - (g * s).sum(axis=axis, keepdims=True)))
    return record(s, (logits,), _bw)


def depth_to_space(x: Tensor, r: int) -> Tensor:
    """``(..., H, W, r*r*C) -> (..., r*H, r*W, C)``.

    Channel ``(dy*r + dx)*C + c`` of an input pixel lands at row offset ``dy``
    and column offset ``dx`` of its output block.
    """
    x = as_tensor(x)
    *lead, h, w, cc = x.shape
    if cc % (r * r):
        raise ValueError(f"depth_to_space: {cc} channels not divisible by r^2={r * r}")
    c = cc // (r * r)
    nl = len(lead)
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    out = x.data.reshape(*lead, h, w, r, r, c).transpose(perm).reshape(*lead, h * r, w * r, c)

    def _bw(g):
        gi = g.reshape(*lead, h, r, w, r, c).transpose(perm).reshape(x.shape)
        accumulate(x, gi)
    return record(np.ascontiguousarray(out), (x,), _bw)


def _neighbourhoods(frame: np.ndarray, k: int) -> np.ndarray:
    """``(N, H, W) -> (N, H, W, k*k)`` patches with replicate borders."""
    p = k // 2
    padded = np.pad(frame, ((0, 0), (p, p), (p, p)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    n, h, w = frame.shape
    return win.reshape(n, h, w, k * k)


def local_filter(weights: Tensor, frame: Tensor, k: int) -> Tensor:
    """Apply per-pixel filters to the k x k neighbourhood of each pixel.

    weights: ``(N, H, W, S, k*k)``, one filter per output sub-position S.
    frame:   ``(N, H, W)``.
    Returns ``(N, H, W, S)``.
    """
    weights, frame = as_tensor(weights), as_tensor(frame)
    n, h, w, s, kk = weights.shape
    if kk != k * k or frame.shape != (n, h, w):
        raise ValueError("local_filter: weights/frame shapes are inconsistent")
    patches = _neighbourhoods(frame.data, k)
    out = np.einsum("nhwsk,nhwk->nhws", weights.data, patches)

    def _bw(g):
        if weights.requires_grad:
            accumulate(weights, g[..., None] * patches[..., None, :])
        if frame.requires_grad:
            gp = np.einsum("nhws,nhwsk->nhwk", g, weights.data).reshape(n, h, w, k, k)
            p = k // 2
            gpad = np.zeros((n, h + 2 * p, w + 2 * p))
            for a in range(k):
                for b in range(k):
                    gpad[:, a:a + h, b:b + w] += gp[..., a, b]
            gpad = _unpad_axis(gpad, 1, p, "replicate")
            gpad = _unpad_axis(gpad, 2, p, "replicate")
            accumulate(frame, gpad)
    return record(out, (weights, frame), _bw)


# ------------------------------------------------------- gradient checking

def gradient_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                   h: float = 1e-5, floor: float = 1e-7,
                   indices: dict[str, np.ndarray] | None = None) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    The error of one entry is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps entries whose true gradient is zero from dividing rounding noise
    by itself; differencing noise is about ``eps * |loss| / h``.
    ``indices`` restricts the check to some flat positions per tensor.
    Returns the worst error per parameter name.
    """
    for t in params.values():
        t.grad = None
    backward(loss_fn())
    worst = {}
    for name, t in params.items():
        analytic = np.zeros(t.data.size) if t.grad is None else t.grad.reshape(-1)
        flat = t.data.flat           # writes through even for non-contiguous data
        chosen = range(t.data.size) if indices is None else indices.get(name, ())
        err = 0.0
        for i in chosen:
            old = flat[i]
            flat[i] = old + h
            up = float(loss_fn().data)
            flat[i] = old - h
            down = float(loss_fn().data)
            flat[i] = old
            num = (up - down) / (2 * h)
            a = float(analytic[i])
            err = max(err, abs(a - num) / max(abs(a), abs(num), floor))
        worst[name] = err
    return worst
