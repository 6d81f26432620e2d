"""Differentiable ops on :class:`~drowsynet.nn.tensor.Tensor`.

Spatial layout is ``[batch, channel, time, height, width]``; the batch axis is
optional on every conv/pool/SE entry point.  Convolution is implemented as
cross-correlation (the CNN convention); :func:`convolve2d` and
:func:`convolve3d` flip the kernel to give the true-convolution indexing
``sum x(i-m, j-n, t-k) w(m, n, k)``.
"""

from __future__ import annotations

from itertools import product
from typing import Sequence

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, make_result

PROB_FLOOR = 1e-12


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data * b.data, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape),
                                  _unbroadcast(g * a.data, b.shape)))


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


# -- reductions and reshaping -----------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    return make_result(np.asarray(x.data.sum()), (x,),
                       lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return make_result(np.asarray(x.data.mean()), (x,),
                       lambda g: (np.full(x.shape, float(g) / n),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def narrow(x: Tensor, axis: int, length: int) -> Tensor:
    """Keep the first ``length`` entries along ``axis``."""
    if length == x.shape[axis]:
        return x
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, length)
    idx = tuple(idx)

    def bw(g):
        out = np.zeros(x.shape)
        out[idx] = g
        return (out,)

    return make_result(x.data[idx], (x,), bw)


# -- dense / classification --------------------------------------------------

def dense(x, w, b=None) -> Tensor:
    """``y = W x + b`` for ``x`` of shape [N] or batched [B, N]; ``W`` is [M, N]."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"dense: input features {x.shape[-1]} vs weight {w.shape}", axis="features")
    y = x.data @ w.data.T
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise DimensionError(f"dense: bias {b.shape} vs outputs {w.shape[0]}", axis="outputs")
        y = y + b.data
        parents.append(b)

    def bw(g):
        g2 = g.reshape(-1, w.shape[0])
        x2 = x.data.reshape(-1, w.shape[1])
        grads = [(g @ w.data), g2.T @ x2]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return make_result(y, parents, bw)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (logits,), bw)


def cross_entropy(p, q: Tensor, tol: float = 1e-9) -> Tensor:
    """Mean over the batch of ``sum_k -p_k log q_k``.

    ``p`` is one-hot (or soft) targets, ``q`` probabilities along the last axis;
    ``q`` is clamped below at 1e-12 before the log.
    """
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    q = as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"cross_entropy: targets {p.shape} vs probabilities {q.shape}", axis="classes")
    sums = q.data.sum(axis=-1)
    if np.any(q.data < 0) or np.any(np.abs(sums - 1.0) > tol):
        raise ValueError("cross_entropy: q must be non-negative and sum to 1")
    qc = np.maximum(q.data, PROB_FLOOR)
    per = -(p * np.log(qc)).sum(axis=-1)
    n = per.size
    floor_mask = q.data > PROB_FLOOR

    def bw(g):
        return (float(g) * (-p / qc) * floor_mask / n,)

    return make_result(np.asarray(per.mean()), (q,), bw)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# -- regularisation ----------------------------------------------------------

def dropout(x: Tensor, rate: float, seed: int, training: bool) -> Tensor:
    """Inverted dropout driven by a counter-based (Philox) stream keyed on ``seed``."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    keep = rng.random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,))


def l2_penalty(params: Sequence[Tensor], lam: float) -> Tensor:
    """``lam * sum ||W||^2`` over the given weight tensors (callers pass no biases)."""
    if lam == 0.0 or not params:
        return Tensor(0.0)
    total = None
    for w in params:
        term = sum_all(square(w))
        total = term if total is None else add(total, term)
    return mul(total, lam)


# -- convolution -------------------------------------------------------------

def _triple(v, name: str) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError(f"{name} needs 3 entries, got {v}")
    return v


def _out_extent(n: int, k: int, s: int, p: int, axis: str) -> int:
    if s < 1:
        raise ValueError(f"stride on {axis} must be >= 1")
    if p < 0:
        raise ValueError(f"padding on {axis} must be >= 0")
    if k > n + 2 * p:
        raise DimensionError(f"window {k} exceeds padded {axis} extent {n + 2 * p}", axis=axis)
    return (n + 2 * p - k) // s + 1


_AXES = ("time", "height", "width")


def _corr3d(x: np.ndarray, w: np.ndarray, stride, padding) -> tuple[np.ndarray, np.ndarray]:
    """Batched cross-correlation; returns (output [N,O,...], padded input)."""
    n, c, t, h, wd = x.shape
    o, ci, kt, kh, kw = w.shape
    if ci != c:
        raise DimensionError(f"conv: input channels {c} vs kernel {ci}", axis="channel")
    outs = [_out_extent(e, k, s, p, a)
            for e, k, s, p, a in zip((t, h, wd), (kt, kh, kw), stride, padding, _AXES)]
    pt, ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw))) if any(padding) else x
    to, ho, wo = outs
    st, sh, sw = stride
    if c == 1 or kt * kh * kw == 1:
        # tiny channel count: gather all taps then a single matmul
        cols = np.empty((n, to, ho, wo, c, kt, kh, kw))
        for a, b, d in product(range(kt), range(kh), range(kw)):
            cols[..., a, b, d] = np.moveaxis(
                xp[:, :, a:a + st * (to - 1) + 1:st, b:b + sh * (ho - 1) + 1:sh, d:d + sw * (wo - 1) + 1:sw], 1, -1)
        y = cols.reshape(-1, c * kt * kh * kw) @ w.reshape(o, -1).T
        y = y.reshape(n, to, ho, wo, o)
        return np.ascontiguousarray(np.moveaxis(y, -1, 1)), xp
    y = np.zeros((o, n, to, ho, wo))
    for a, b, d in product(range(kt), range(kh), range(kw)):
        tap = xp[:, :, a:a + st * (to - 1) + 1:st, b:b + sh * (ho - 1) + 1:sh, d:d + sw * (wo - 1) + 1:sw]
        y += np.tensordot(w[:, :, a, b, d], tap, axes=([1], [1]))
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3, 4)), xp


def _corr3d_backward(g, x_shape, xp, w, stride, padding, need_x: bool):
    n, c, t, h, wd = x_shape
    o, _, kt, kh, kw = w.shape
    _, _, to, ho, wo = g.shape
    st, sh, sw = stride
    gw = np.empty_like(w)
    gxp = np.zeros(xp.shape) if need_x else None
    g_onw = np.ascontiguousarray(g.transpose(1, 0, 2, 3, 4))  # O,N,T,H,W
    for a, b, d in product(range(kt), range(kh), range(kw)):
        sl = (slice(None), slice(None), slice(a, a + st * (to - 1) + 1, st),
              slice(b, b + sh * (ho - 1) + 1, sh), slice(d, d + sw * (wo - 1) + 1, sw))
        tap = xp[sl]
        gw[:, :, a, b, d] = np.tensordot(g, tap, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        if need_x:
            gxp[sl] += np.tensordot(w[:, :, a, b, d], g_onw, axes=([0], [0])).transpose(1, 0, 2, 3, 4)
    gx = None
    if need_x:
        pt, ph, pw = padding
        gx = gxp[:, :, pt:pt + t, ph:ph + h, pw:pw + wd]
    return gx, gw


def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """3D cross-correlation.  ``x`` is [C,T,H,W] or [N,C,T,H,W]; ``weight`` [O,C,kt,kh,kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 5:
        raise DimensionError(f"conv3d kernel must be 5-D, got {weight.shape}", axis="kernel")
    batched = x.ndim == 5
    if x.ndim not in (4, 5):
        raise DimensionError(f"conv3d input must be 4-D or 5-D, got {x.shape}", axis="input")
    stride, padding = _triple(stride, "stride"), _triple(padding, "padding")
    xd = x.data if batched else x.data[None]
    y, xp = _corr3d(xd, weight.data, stride, padding)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"conv3d bias {bias.shape} vs {weight.shape[0]} outputs", axis="channel")
        y += bias.data[None, :, None, None, None]
        parents.append(bias)
    x_shape = xd.shape

    def bw(g):
        g5 = g if batched else g[None]
        gx, gw = _corr3d_backward(g5, x_shape, xp, weight.data, stride, padding, x.requires_grad)
        if gx is not None and not batched:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g5.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    return make_result(y if batched else y[0], parents, bw)


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """2D cross-correlation.  ``x`` is [C,H,W] or [N,C,H,W]; ``weight`` [O,C,kh,kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 4:
        raise DimensionError(f"conv2d kernel must be 4-D, got {weight.shape}", axis="kernel")
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be 3-D or 4-D, got {x.shape}", axis="input")
    s = stride if isinstance(stride, int) else tuple(stride)
    p = padding if isinstance(padding, int) else tuple(padding)
    s3 = (1, s, s) if isinstance(s, int) else (1, *s)
    p3 = (0, p, p) if isinstance(p, int) else (0, *p)
    axis = x.ndim - 2
    x3 = reshape(x, x.shape[:axis] + (1,) + x.shape[axis:])
    w3 = reshape(weight, weight.shape[:2] + (1,) + weight.shape[2:])
    y = conv3d(x3, w3, bias, s3, p3)
    return reshape(y, y.shape[:axis] + y.shape[axis + 1:])


def flip_kernel(weight):
    """Reverse every spatial/temporal axis of an [O, C, ...] kernel."""
    w = weight.data if isinstance(weight, Tensor) else np.asarray(weight, dtype=np.float64)
    return w[(slice(None), slice(None)) + (slice(None, None, -1),) * (w.ndim - 2)].copy()


def convolve2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """True 2D convolution ``sum x(i-m, j-n) w(m, n)`` (valid region, then stride/pad)."""
    w = weight if isinstance(weight, Tensor) and weight.requires_grad else None
    if w is not None:
        weight = _flip_tensor(w)
    else:
        weight = flip_kernel(weight)
    return conv2d(x, weight, bias, stride, padding)


def convolve3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """True 3D convolution ``sum x(i-m, j-n, t-k) w(m, n, k)``."""
    w = weight if isinstance(weight, Tensor) and weight.requires_grad else None
    if w is not None:
        weight = _flip_tensor(w)
    else:
        weight = flip_kernel(weight)
    return conv3d(x, weight, bias, stride, padding)


def _flip_tensor(w: Tensor) -> Tensor:
    return make_result(flip_kernel(w), (w,), lambda g: (flip_kernel(g),))


# -- pooling -------------------------------------------------------------

def maxpool3d(x, window, stride=None) -> Tensor:
    """Max over [t,h,w] windows; ties route the gradient to the first (lowest-index) max."""
    x = as_tensor(x)
    window = _triple(window, "window")
    stride = window if stride is None else _triple(stride, "stride")
    batched = x.ndim == 5
    if x.ndim not in (4, 5):
        raise DimensionError(f"maxpool3d input must be 4-D or 5-D, got {x.shape}", axis="input")
    xd = x.data if batched else x.data[None]
    n, c, t, h, wd = xd.shape
    to, ho, wo = (_out_extent(e, k, s, 0, a) for e, k, s, a in zip((t, h, wd), window, stride, _AXES))
    st, sh, sw = stride
    best = None
    arg = np.zeros((n, c, to, ho, wo), dtype=np.int64)
    taps = list(product(*(range(k) for k in window)))
    slices = []
    for idx, (a, b, d) in enumerate(taps):
        sl = (slice(None), slice(None), slice(a, a + st * (to - 1) + 1, st),
              slice(b, b + sh * (ho - 1) + 1, sh), slice(d, d + sw * (wo - 1) + 1, sw))
        slices.append(sl)
        v = xd[sl]
        if best is None:
            best = v.copy()
        else:
            better = v > best  # strict: earlier taps win ties
            best = np.where(better, v, best)
            arg[better] = idx
    shape = xd.shape

    def bw(g):
        g5 = g if batched else g[None]
        gx = np.zeros(shape)
        for idx, sl in enumerate(slices):
            gx[sl] += np.where(arg == idx, g5, 0.0)
        return (gx if batched else gx[0],)

    return make_result(best if batched else best[0], (x,), bw)


def global_avg_pool(x) -> Tensor:
    """Mean over the trailing (t, h, w) axes: [N,C,T,H,W] -> [N,C] or [C,T,H,W] -> [C]."""
    x = as_tensor(x)
    axes = (-3, -2, -1)
    count = x.shape[-1] * x.shape[-2] * x.shape[-3]
    y = x.data.mean(axis=axes)

    def bw(g):
        return (np.broadcast_to(g[..., None, None, None] / count, x.shape).copy(),)

    return make_result(y, (x,), bw)


# -- squeeze and excitation ------------------------------------------------------

def se_block(x, w1, w2, gate=None, b1=None, b2=None) -> Tensor:
    """Channel reweighting of [C,T,H,W] / [N,C,T,H,W] maps.

    squeeze: per-channel mean over (t,h,w); excitation: sigmoid(W2 relu(W1 s + b1) + b2).
    ``gate`` forces the excitation weights (e.g. all ones) for ablation checks.
    """
    x, w1, w2 = as_tensor(x), as_tensor(w1), as_tensor(w2)
    c = x.shape[-4]
    if w1.ndim != 2 or w1.shape[1] != c or w2.shape != (c, w1.shape[0]):
        raise DimensionError(f"se_block weights {w1.shape}/{w2.shape} vs channels {c}", axis="channel")
    if c % w1.shape[0]:
        raise ValueError(f"reduction ratio must divide channels: {c} vs {w1.shape[0]}")
    if gate is None:
        s = global_avg_pool(x)
        gate_t = sigmoid(dense(relu(dense(s, w1, b1)), w2, b2))
    else:
        gate_t = as_tensor(np.broadcast_to(np.asarray(gate, dtype=np.float64), x.shape[:-3]).copy())
    return mul(x, reshape(gate_t, gate_t.shape + (1, 1, 1)))


def squeeze(x) -> np.ndarray:
    """Per-channel mean of a [C,T,H,W] / [N,C,T,H,W] array (the SE squeeze vector)."""
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return x.mean(axis=(-3, -2, -1))
