"""Neural-network operations built on the autodiff core.

Convolutions run as im2col + BLAS matmul; the window gather/scatter and
bilinear sampling go through `backend` (numba or pure numpy). Norms, softmax
and strip pooling are compositions of primitives, so their backward passes
come from the tape. Convolution output sizes use the floor convention
H' = (H + 2p - k) // s + 1; inputs smaller than the kernel are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .autodiff import (Tensor, add, as_tensor, broadcast_to, clamp, concat,
                       div, exp, log, make_op, matmul, mul, neg, permute,
                       relu, reshape, sigmoid, slice_axis, sqrt, sub, tmean,
                       tsum)
from .errors import ConfigError, ContractError, ShapeError


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


# -------------------------------------------------------------- convolutions

def im2col_op(x: Tensor, kh: int, kw: int, stride, padding):
    """Sliding windows of x as columns [N, C*kh*kw, ho*wo]; returns (cols, ho, wo)."""
    n, c, h, w = x.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ConfigError(
            f"conv input {h}x{w} (+pad {ph},{pw}) smaller than kernel {kh}x{kw}")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    xp = np.ascontiguousarray(
        np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))))
    cols = backend.im2col(xp, kh, kw, sh, sw, ho, wo)

    def fn(g):
        gp = backend.col2im(np.ascontiguousarray(g), n, c, h + 2 * ph,
                            w + 2 * pw, kh, kw, sh, sw, ho, wo)
        if ph or pw:
            gp = gp[:, :, ph:ph + h, pw:pw + w]
        return (gp,)

    return make_op(cols, "im2col", (x,), fn), ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """Dense 2-D convolution (cross-correlation). weight: [E, C, kh, kw]."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d needs 4-D x and weight, got {x.shape} / {weight.shape}")
    n, c, _, _ = x.shape
    e, cw, kh, kw = weight.shape
    if cw != c:
        raise ShapeError(f"conv2d channels differ: input {x.shape} vs weight {weight.shape}")
    cols, ho, wo = im2col_op(x, kh, kw, stride, padding)
    out = matmul(reshape(weight, (e, c * kh * kw)), cols)
    out = reshape(out, (n, e, ho, wo))
    if bias is not None:
        out = add(out, reshape(bias, (e, 1, 1)))
    return out


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride=1, padding=0) -> Tensor:
    """Per-channel convolution. weight: [C, 1, kh, kw]."""
    n, c, _, _ = x.shape
    cw, one, kh, kw = weight.shape
    if cw != c or one != 1:
        raise ShapeError(f"depthwise weight {weight.shape} does not match input {x.shape}")
    cols, ho, wo = im2col_op(x, kh, kw, stride, padding)
    cols4 = reshape(cols, (n, c, kh * kw, ho * wo))
    out = matmul(reshape(weight, (c, 1, kh * kw)), cols4)  # [N,C,1,L]
    out = reshape(out, (n, c, ho, wo))
    if bias is not None:
        out = add(out, reshape(bias, (c, 1, 1)))
    return out


def pointwise_conv2d(x: Tensor, weight: Tensor,
                     bias: Tensor | None = None) -> Tensor:
    """1x1 convolution as a channel matmul. weight: [E, C, 1, 1]."""
    n, c, h, w = x.shape
    e, cw, kh, kw = weight.shape
    if cw != c or kh != 1 or kw != 1:
        raise ShapeError(f"pointwise weight {weight.shape} does not match input {x.shape}")
    out = matmul(reshape(weight, (e, c)), reshape(x, (n, c, h * w)))
    out = reshape(out, (n, e, h, w))
    if bias is not None:
        out = add(out, reshape(bias, (e, 1, 1)))
    return out


@dataclass
class Conv2dParams:
    weight: Tensor                 # [E, C, k, k]
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0


# ------------------------------------------------------------- normalization

@dataclass
class BatchNormParams:
    gamma: Tensor                  # [C]
    beta: Tensor                   # [C]
    running_mean: np.ndarray       # [C], updated in training mode
    running_var: np.ndarray        # [C]
    eps: float = 1e-5
    momentum: float = 0.1


def batch_norm(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    """Per-channel normalization over (N, H, W); running stats follow the
    biased batch variance with momentum. Gradients flow through the batch
    statistics in training mode."""
    if x.ndim != 4:
        raise ShapeError(f"batch_norm needs [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    if p.gamma.shape != (c,):
        raise ShapeError(f"batch_norm gamma {p.gamma.shape} vs channels {c}")
    if training:
        if n * h * w == 0:
            raise ContractError("batch_norm on an empty batch")
        mu = tmean(x, (0, 2, 3), keepdims=True)
        xc = sub(x, mu)
        var = tmean(mul(xc, xc), (0, 2, 3), keepdims=True)
        m = p.momentum
        p.running_mean = (1.0 - m) * p.running_mean + m * mu.data.reshape(c)
        p.running_var = (1.0 - m) * p.running_var + m * var.data.reshape(c)
        y = div(xc, sqrt(add(var, p.eps)))
    else:
        mu = Tensor(p.running_mean.reshape(1, c, 1, 1))
        sd = Tensor(np.sqrt(p.running_var + p.eps).reshape(1, c, 1, 1))
        y = div(sub(x, mu), sd)
    return add(mul(y, reshape(p.gamma, (c, 1, 1))), reshape(p.beta, (c, 1, 1)))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalization over the last dim, then affine scale/shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine {gamma.shape} vs feature dim {d}")
    mu = tmean(x, -1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), -1, keepdims=True)
    y = div(xc, sqrt(add(var, eps)))
    return add(mul(y, gamma), beta)


# ------------------------------------------------------------- nonlinearities

def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind in ("identity", "none"):
        return x
    raise ConfigError(f"unknown activation {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis` (max subtracted as a constant)."""
    m = Tensor(x.data.max(axis=axis, keepdims=True))
    e = exp(sub(x, m))
    return div(e, tsum(e, axis, keepdims=True))


# ------------------------------------------------------------------- sampling

def bilinear_sample(feat: Tensor, pts: Tensor) -> Tensor:
    """Sample feat [N,C,H,W] at pts [N,Q,2] = (x, y) pixel coords -> [N,Q,C].

    Integer coordinates hit pixel centers exactly; out-of-bounds corners
    contribute zero. Differentiable in both the features and the points.
    """
    if feat.ndim != 4 or pts.ndim != 3 or pts.shape[-1] != 2:
        raise ShapeError(f"bilinear_sample feat {feat.shape}, pts {pts.shape}")
    if feat.shape[0] != pts.shape[0]:
        raise ShapeError(f"batch mismatch: feat {feat.shape} vs pts {pts.shape}")
    fd = np.ascontiguousarray(feat.data)
    pd = np.ascontiguousarray(pts.data)
    out = backend.bilinear_fwd(fd, pd)

    def fn(g):
        gf, gp = backend.bilinear_bwd(fd, pd, np.ascontiguousarray(g))
        return (gf if feat.requires_grad else None,
                gp if pts.requires_grad else None)

    return make_op(out, "bilinear_sample", (feat, pts), fn)


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    i0f = np.floor(src)
    frac = src - i0f
    i0 = np.clip(i0f.astype(np.int64), 0, n_in - 1)
    i1 = np.clip(i0f.astype(np.int64) + 1, 0, n_in - 1)
    return i0, i1, frac


def _scatter_last(g: np.ndarray, i0, i1, frac, n_in: int) -> np.ndarray:
    gt = np.moveaxis(g, -1, 0)
    out = np.zeros((n_in,) + gt.shape[1:], dtype=g.dtype)
    wshape = (-1,) + (1,) * (gt.ndim - 1)
    np.add.at(out, i0, gt * (1.0 - frac).reshape(wshape))
    np.add.at(out, i1, gt * frac.reshape(wshape))
    return np.moveaxis(out, 0, -1)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with half-pixel alignment and edge clamping.

    Uses the lerp form a + f*(b - a), so constants and replicated samples
    pass through exactly.
    """
    n, c, h, w = x.shape
    if out_h == h and out_w == w:
        return x
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize target {out_h}x{out_w} invalid")
    ri0, ri1, rf = _axis_weights(h, out_h)
    ci0, ci1, cf = _axis_weights(w, out_w)
    xd = x.data
    a = xd[:, :, ri0, :]
    y = a + rf[None, None, :, None] * (xd[:, :, ri1, :] - a)
    b = y[:, :, :, ci0]
    z = b + cf * (y[:, :, :, ci1] - b)

    def fn(g):
        gy = _scatter_last(g, ci0, ci1, cf, w)
        gyt = np.moveaxis(gy, 2, -1)
        gxt = _scatter_last(gyt, ri0, ri1, rf, h)
        return (np.moveaxis(gxt, -1, 2),)

    return make_op(z, "resize_bilinear", (x,), fn)


def upsample2x(x: Tensor) -> Tensor:
    """Double H and W bilinearly."""
    _, _, h, w = x.shape
    return resize_bilinear(x, 2 * h, 2 * w)


# ---------------------------------------------------------------- strip pool

@dataclass
class StripPoolParams:
    conv_h: Tensor      # [C, 1, 3, 1] depthwise conv along the row axis
    conv_w: Tensor      # [C, 1, 1, 3] depthwise conv along the column axis
    proj: Tensor        # [C, C, 1, 1]
    proj_bias: Tensor   # [C]


def strip_pool(x: Tensor, p: StripPoolParams) -> Tensor:
    """Row/column mean pooling -> 1-D convs -> broadcast sum -> 1x1 conv ->
    sigmoid gate multiplied onto the input. Shape preserving."""
    rows = tmean(x, axis=3, keepdims=True)                    # [N,C,H,1]
    cols = tmean(x, axis=2, keepdims=True)                    # [N,C,1,W]
    rows = depthwise_conv2d(rows, p.conv_h, padding=(1, 0))
    cols = depthwise_conv2d(cols, p.conv_w, padding=(0, 1))
    s = add(broadcast_to(rows, x.shape), broadcast_to(cols, x.shape))
    gate = sigmoid(pointwise_conv2d(s, p.proj, p.proj_bias))
    return mul(x, gate)


# -------------------------------------------------------------------- linear

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x [..., d_in] -> [..., d_out] with weight [d_out, d_in]."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: x {x.shape} vs weight {weight.shape}")
    y = matmul(x, permute(weight, (1, 0)))
    if bias is not None:
        y = add(y, bias)
    return y
