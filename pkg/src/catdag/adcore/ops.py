"""Differentiable operations. Every op returns a new :class:`Tensor`."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def add_grad(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make(a.data + b.data, (a, b), add_grad)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape

    def sub_grad(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make(a.data - b.data, (a, b), sub_grad)


def mul(a, b) -> Tensor:
    """Hadamard product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def mul_grad(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make(ad * bd, (a, b), mul_grad)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def scale_grad(g):
        return (g * c,)

    return make(a.data * c, (a,), scale_grad)


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics, including a 2-D right operand against a batch."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}") from None

    def matmul_grad(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return make(out, (a, b), matmul_grad)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` for a 2-D weight and any batch of row vectors."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"linear: input {xd.shape} vs weight {wd.shape}")
    out = xd @ wd
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def linear_grad(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0).reshape(bias.shape)

    return make(out, parents, linear_grad)


def masked_linear(x, weight, mask, bias=None) -> Tensor:
    """``x @ (weight * mask) + bias`` as a single recorded op."""
    x, weight = as_tensor(x), as_tensor(weight)
    mask = np.asarray(mask, dtype=np.float64)
    if weight.shape != mask.shape:
        raise ShapeError(f"masked_linear: weight {weight.shape} vs mask {mask.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"masked_linear: input {x.shape} vs weight {weight.shape}")
    wm = weight.data * mask
    out = x.data @ wm
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)
    xd = x.data

    def masked_linear_grad(g):
        gx = g @ wm.T if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gw = (xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])) * mask
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0).reshape(bias.shape)

    return make(out, parents, masked_linear_grad)


def nodewise_linear(x, weight, bias=None) -> Tensor:
    """Independent linear map per node: ``(B, Z, C) x (Z, C, E) -> (B, Z, E)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3 or xd.shape[1] != wd.shape[0] or xd.shape[2] != wd.shape[1]:
        raise ShapeError(f"nodewise_linear: input {xd.shape} vs weight {wd.shape}")
    out = np.einsum("bzc,zce->bze", xd, wd)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def nodewise_linear_grad(g):
        gx = np.einsum("bze,zce->bzc", g, wd) if x.requires_grad else None
        gw = np.einsum("bzc,bze->zce", xd, g) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make(out, parents, nodewise_linear_grad)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def sigmoid_grad(g):
        return (g * s * (1.0 - s),)

    return make(s, (x,), sigmoid_grad)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def swish(x) -> Tensor:
    """``x * sigmoid(x)``."""
    x = as_tensor(x)
    xd = x.data
    s = _sigmoid(xd)
    out = xd * s

    def swish_grad(g):
        return (g * (s + out * (1.0 - s)),)

    return make(out, (x,), swish_grad)


def _softmax(xd: np.ndarray, m, mode: str) -> np.ndarray:
    if m is None:
        e = np.exp(xd - xd.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if mode == "hadamard":
        z = xd * m
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if mode == "exclude":
        keep = m > 0
        mx = np.where(keep, xd, -np.inf).max(axis=-1, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.where(keep, np.exp(np.where(keep, xd, 0.0) - mx), 0.0)
        s = e.sum(axis=-1, keepdims=True)
        return e / np.where(s > 0, s, 1.0)
    raise ValueError(f"unknown mask mode {mode!r}")


def _softmax_grad(y: np.ndarray, g: np.ndarray, m, mode: str) -> np.ndarray:
    gz = y * (g - (g * y).sum(axis=-1, keepdims=True))
    if m is not None and mode == "hadamard":
        gz = gz * m
    return gz


def _check_mask(mask, shape, who):
    if mask is None:
        return None
    m = np.asarray(mask, dtype=np.float64)
    try:
        np.broadcast_shapes(m.shape, shape)
    except ValueError:
        raise ShapeError(f"{who}: mask {m.shape} vs logits {shape}") from None
    return m


def rowsoftmax(x, mask=None, mode: str = "exclude", scale: float = 1.0) -> Tensor:
    """Softmax over the last axis of ``scale * x``, optionally restricted by a 0/1 ``mask``.

    ``mode="exclude"`` drops masked entries from the support (weight exactly
    0, all-masked rows give all zeros). ``mode="hadamard"`` multiplies the
    logits by the mask before a plain softmax, so masked entries still get
    weight ``exp(0)/Z``.
    """
    x = as_tensor(x)
    m = _check_mask(mask, x.shape, "rowsoftmax")
    y = _softmax(x.data * scale, m, mode)

    def rowsoftmax_grad(g):
        return (_softmax_grad(y, g, m, mode) * scale,)

    return make(y, (x,), rowsoftmax_grad)


def batchnorm(x, weight, bias, running_mean, running_var, training: bool,
              momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-feature normalisation over axis 0 only.

    Every trailing index (e.g. each (node, channel) pair) is its own
    feature. In training mode the running statistics arrays are updated in
    place.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    xd = x.data
    if weight.shape != xd.shape[1:] or bias.shape != xd.shape[1:]:
        raise ShapeError(f"batchnorm: features {xd.shape[1:]} vs affine {weight.shape}/{bias.shape}")
    wd = weight.data
    if training:
        n = xd.shape[0]
        mu = xd.mean(axis=0)
        xc = xd - mu
        var = (xc * xc).mean(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def batchnorm_grad(g):
            gx = None
            if x.requires_grad:
                gh = g * wd
                gx = inv / n * (n * gh - gh.sum(axis=0) - xhat * (gh * xhat).sum(axis=0))
            return gx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean) * inv

        def batchnorm_grad(g):
            gx = g * (wd * inv) if x.requires_grad else None
            return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make(xhat * wd + bias.data, (x, weight, bias), batchnorm_grad)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = 1.0 - rate
    m = (rng.random(x.shape) < keep) / keep

    def dropout_grad(g):
        return (g * m,)

    return make(x.data * m, (x,), dropout_grad)


def concat_lastdim(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[-1] for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=-1)
    except ValueError:
        raise ShapeError("concat_lastdim: leading shapes differ") from None
    bounds = np.cumsum([0] + sizes)

    def concat_grad(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return make(out, tuple(parts), concat_grad)


def slice_lastdim(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    if not 0 <= start <= stop <= x.shape[-1]:
        raise ShapeError(f"slice [{start}, {stop}) out of range for last dim {x.shape[-1]}")
    shape = x.shape

    def slice_grad(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return make(x.data[..., start:stop], (x,), slice_grad)


def take_lastdim(x, index) -> Tensor:
    """Gather columns of the last axis (duplicates allowed)."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def take_grad(g):
        full = np.zeros(shape)
        np.add.at(full, (..., index), g)
        return (full,)

    return make(x.data[..., index], (x,), take_grad)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}") from None

    def reshape_grad(g):
        return (g.reshape(old),)

    return make(out, (x,), reshape_grad)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def transpose_grad(g):
        return (g.transpose(inv),)

    return make(x.data.transpose(axes), (x,), transpose_grad)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape

    def broadcast_grad(g):
        return (_unbroadcast(g, old),)

    return make(np.broadcast_to(x.data, shape).copy(), (x,), broadcast_grad)


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def sum_grad(g):
        return (np.broadcast_to(g, shape),)

    return make(np.asarray(x.data.sum()), (x,), sum_grad)


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.data.size

    def mean_grad(g):
        return (np.broadcast_to(g / n, shape),)

    return make(np.asarray(x.data.mean()), (x,), mean_grad)


def column_loss(pred, target: np.ndarray, binary: np.ndarray, weights: np.ndarray) -> Tensor:
    """Sum over columns of ``weights[c] * mean_b loss(pred[b, c], target[b, c])``.

    Continuous columns use squared error, binary columns use binary
    cross-entropy on logits.
    """
    pred = as_tensor(pred)
    p = pred.data
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2:
        raise ShapeError(f"column_loss: prediction {p.shape} vs target {t.shape}")
    binary = np.asarray(binary, dtype=bool)
    w = np.asarray(weights, dtype=np.float64)
    n = p.shape[0]
    diff = p - t
    elem = diff * diff
    if binary.any():
        bce = np.maximum(p, 0.0) - p * t + np.log1p(np.exp(-np.abs(p)))
        elem = np.where(binary, bce, elem)
    value = np.asarray((elem.sum(axis=0) * w).sum() / n)

    def column_loss_grad(g):
        d = 2.0 * diff
        if binary.any():
            d = np.where(binary, _sigmoid(p) - t, d)
        return (g * d * (w / n),)

    return make(value, (pred,), column_loss_grad)
