"""Minimal reverse-mode tensor layer for the models in this package.

Exactly the operations the networks need, nothing more: conv2d, relu,
maxpool2, global average pooling, linear, sigmoid, channel concat, bilinear
sampling, cosine similarity, and a handful of plumbing ops (reshape, scalar
arithmetic, row repeat, paste) that the interaction variants require.

Tensors store float32 by default; reductions accumulate in float64 and cast
back. Gradients are verified against central finite differences in the test
suite, which runs the whole graph in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling graph construction (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class ShapeError(ValueError):
    pass


class Tensor:
    """A numpy array plus an optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed=None) -> None:
        """Reverse-mode sweep from this tensor; accumulates into .grad."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without seed needs a scalar, got shape {self.shape}")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Param:
    """A named, trainable tensor. Ids must be unique within one model."""

    tensor: Tensor
    id: str


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    """Wrap an op result; wires the graph only when grad is enabled and some
    parent needs it."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """Patches of a padded NHWC array as a (N*OH*OW, C*kh*kw) matrix."""
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    if stride > 1:
        view = view[:, ::stride, ::stride]
    n, oh, ow = view.shape[:3]
    c = xp.shape[3]
    return view.reshape(n * oh * ow, c * kh * kw), (n, oh, ow)


def _conv2d_raw(x: np.ndarray, w: np.ndarray, b, stride: int, pad: int):
    kh, kw, cin, cout = w.shape
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d: input channels {x.shape} vs weight {w.shape}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols, (n, oh, ow) = _im2col(xp, kh, kw, stride)
    wmat = w.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b
    return out.reshape(n, oh, ow, cout), cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution, NHWC input, (KH, KW, Cin, Cout) weight."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be (N, H, W, C), got {x.shape}")
    bias_t = _as_tensor(bias) if bias is not None else None
    out, cols = _conv2d_raw(x.data, weight.data, bias_t.data if bias_t else None, stride, pad)
    kh, kw, cin, cout = weight.shape

    def backward(dy: np.ndarray):
        dy_mat = dy.reshape(-1, cout)
        if weight.requires_grad:
            dw = (cols.T @ dy_mat).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
            weight._accumulate(dw)
        if bias_t is not None and bias_t.requires_grad:
            bias_t._accumulate(dy_mat.sum(axis=0))
        if x.requires_grad:
            x._accumulate(_conv2d_input_grad(dy, weight.data, x.shape, stride, pad))

    parents = [x, weight] + ([bias_t] if bias_t is not None else [])
    return _make(out, parents, backward)


def _conv2d_input_grad(dy: np.ndarray, w: np.ndarray, x_shape, stride: int, pad: int):
    kh, kw, cin, cout = w.shape
    n, h, wid, _ = x_shape
    if stride > 1:
        oh, ow = dy.shape[1], dy.shape[2]
        dil = np.zeros((n, (oh - 1) * stride + 1, (ow - 1) * stride + 1, cout), dtype=dy.dtype)
        dil[:, ::stride, ::stride] = dy
        dy = dil
    # pad so a stride-1 correlation with the flipped kernel covers the input,
    # including rows the strided forward never reached
    need_h = h + 2 * pad - kh + 1 - dy.shape[1]
    need_w = wid + 2 * pad - kw + 1 - dy.shape[2]
    p = kh - 1
    dyp = np.pad(dy, ((0, 0), (p, p + need_h), (p, p + need_w), (0, 0)))
    wflip = w[::-1, ::-1].transpose(0, 1, 3, 2)  # (KH, KW, Cout, Cin)
    dxp, _ = _conv2d_raw(dyp, wflip, None, 1, 0)
    if pad:
        return dxp[:, pad:pad + h, pad:pad + wid]
    return dxp


# ---------------------------------------------------------------------------
# Elementwise and pooling
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(dy):
        if x.requires_grad:
            x._accumulate(dy * mask)

    return _make(np.where(mask, x.data, 0), [x], backward)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)

    def backward(dy):
        if x.requires_grad:
            x._accumulate(dy * s * (1.0 - s))

    return _make(s, [x], backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; spatial dims must be even."""
    x = _as_tensor(x)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {x.shape}")
    win = x.data.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(n, h // 2, w // 2, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(dy):
        if not x.requires_grad:
            return
        dwin = np.zeros_like(win)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        x._accumulate(dx.reshape(n, h, w, c))

    return _make(out, [x], backward)


def gap(x: Tensor) -> Tensor:
    """Global average pooling over spatial dims: (N,H,W,C) -> (N,C) or
    (H,W,C) -> (C,). Accumulates in float64."""
    x = _as_tensor(x)
    if x.data.ndim == 4:
        axes, denom = (1, 2), x.shape[1] * x.shape[2]
    elif x.data.ndim == 3:
        axes, denom = (0, 1), x.shape[0] * x.shape[1]
    else:
        raise ShapeError(f"gap expects 3- or 4-d input, got {x.shape}")
    out = x.data.mean(axis=axes, dtype=np.float64).astype(x.dtype)

    def backward(dy):
        if x.requires_grad:
            if x.data.ndim == 4:
                g = np.broadcast_to(dy[:, None, None, :] / denom, x.shape)
            else:
                g = np.broadcast_to(dy[None, None, :] / denom, x.shape)
            x._accumulate(g.astype(x.dtype))

    return _make(out, [x], backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: {x.shape} @ {w.shape}")
    b_t = _as_tensor(b) if b is not None else None
    out = x.data @ w.data
    if b_t is not None:
        out = out + b_t.data

    def backward(dy):
        if x.requires_grad:
            x._accumulate(dy @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ dy)
        if b_t is not None and b_t.requires_grad:
            b_t._accumulate(dy.sum(axis=0))

    return _make(out, [x, w] + ([b_t] if b_t is not None else []), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the trailing (channel) axis."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_channels: leading dims differ, {a.shape} vs {b.shape}")
    ca = a.shape[-1]

    def backward(dy):
        if a.requires_grad:
            a._accumulate(dy[..., :ca])
        if b.requires_grad:
            b._accumulate(dy[..., ca:])

    return _make(np.concatenate([a.data, b.data], axis=-1), [a, b], backward)


# ---------------------------------------------------------------------------
# Sampling and similarity
# ---------------------------------------------------------------------------

def bilinear_sample(x: Tensor, points: np.ndarray) -> Tensor:
    """Sample an (H, W, C) map at float (y, x) pixel-index coordinates.

    Coordinates are clamped to [0, size-1]; integer points reproduce direct
    indexing exactly. Differentiable w.r.t. the map only.
    """
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"bilinear_sample expects (H, W, C), got {x.shape}")
    pts = np.asarray(points, dtype=np.float64)
    h, w = x.shape[:2]
    ys = np.clip(pts[:, 0], 0.0, h - 1.0)
    xs = np.clip(pts[:, 1], 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0)[:, None].astype(x.dtype)
    tx = (xs - x0)[:, None].astype(x.dtype)
    d = x.data
    out = (d[y0, x0] * (1 - ty) * (1 - tx) + d[y0, x1] * (1 - ty) * tx
           + d[y1, x0] * ty * (1 - tx) + d[y1, x1] * ty * tx)

    def backward(dy):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        np.add.at(dx, (y0, x0), dy * (1 - ty) * (1 - tx))
        np.add.at(dx, (y0, x1), dy * (1 - ty) * tx)
        np.add.at(dx, (y1, x0), dy * ty * (1 - tx))
        np.add.at(dx, (y1, x1), dy * ty * tx)
        x._accumulate(dx)

    return _make(out, [x], backward)


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity of two vectors. Zero-norm input is a hard error; a
    silent epsilon would mask dead-feature bugs upstream."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError(f"cosine_sim expects vectors, got {u.shape} and {v.shape}")
    _check_same_shape(u, v, "cosine_sim")
    ud = u.data.astype(np.float64)
    vd = v.data.astype(np.float64)
    nu = float(np.sqrt(ud @ ud))
    nv = float(np.sqrt(vd @ vd))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine_sim: zero-norm input")
    dot = float(ud @ vd)
    cos = dot / (nu * nv)

    def backward(dy):
        g = float(dy)
        if u.requires_grad:
            u._accumulate((g * (vd / (nu * nv) - cos * ud / (nu * nu))).astype(u.dtype))
        if v.requires_grad:
            v._accumulate((g * (ud / (nu * nv) - cos * vd / (nv * nv))).astype(v.dtype))

    return _make(np.asarray(cos, dtype=u.dtype), [u, v], backward)


# ---------------------------------------------------------------------------
# Plumbing
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")

    def backward(dy):
        if a.requires_grad:
            a._accumulate(dy)
        if b.requires_grad:
            b._accumulate(dy)

    return _make(a.data + b.data, [a, b], backward)


def scale(x: Tensor, s: float) -> Tensor:
    x = _as_tensor(x)

    def backward(dy):
        if x.requires_grad:
            x._accumulate(dy * s)

    return _make(x.data * s, [x], backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape

    def backward(dy):
        if x.requires_grad:
            x._accumulate(dy.reshape(old))

    return _make(x.data.reshape(shape), [x], backward)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    x = _as_tensor(x)
    n = x.shape[axis]
    out = x.data.mean(axis=axis, dtype=np.float64).astype(x.dtype)

    def backward(dy):
        if x.requires_grad:
            g = np.broadcast_to(np.expand_dims(dy / n, axis), x.shape)
            x._accumulate(g.astype(x.dtype))

    return _make(out, [x], backward)


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Tile a leading batch dim of 1 to n; gradient sums over the copies."""
    x = _as_tensor(x)
    if x.shape[0] != 1:
        raise ShapeError(f"repeat_rows expects leading dim 1, got {x.shape}")
    out = np.broadcast_to(x.data, (n,) + x.shape[1:]).copy()

    def backward(dy):
        if x.requires_grad:
            x._accumulate(dy.sum(axis=0, keepdims=True))

    return _make(out, [x], backward)


def paste(base: Tensor, patch: Tensor, y0: int, x0: int) -> Tensor:
    """Overwrite a spatial region of an (H, W, C) map with a patch."""
    base, patch = _as_tensor(base), _as_tensor(patch)
    ph, pw = patch.shape[:2]
    out = base.data.copy()
    out[y0:y0 + ph, x0:x0 + pw] = patch.data

    def backward(dy):
        if patch.requires_grad:
            patch._accumulate(dy[y0:y0 + ph, x0:x0 + pw])
        if base.requires_grad:
            db = dy.copy()
            db[y0:y0 + ph, x0:x0 + pw] = 0
            base._accumulate(db)

    return _make(out, [base, patch], backward)
