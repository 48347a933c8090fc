"""Bottleneck conv blocks, low-rank linear layers, and their cost arithmetic.

The block factors a k x k convolution c -> C_d through a narrow mid width:
reduce 1x1 (c -> C_m), depthwise k x k, pointwise 1x1, expand 1x1 (C_m -> C_d),
with BatchNorm + activation after reduce and after expand only. The linear
counterpart factors a dense [d_out, d_in] map through rank m.

`make_conv_realization` builds one conv site in any of the four variants used
by the cost comparison: dense, depthwise-separable, low-rank pair, or the
full bottleneck block.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops as O
from .autodiff import Tensor
from .errors import BottleneckWarning, ConfigError, ContractError
from .params import (conv_weight, depthwise_weight, linear_weight, ones_param,
                     zeros_param)


def default_mid(c_out: int) -> int:
    return max(4, c_out // 4)


def make_batch_norm(c: int) -> O.BatchNormParams:
    return O.BatchNormParams(
        gamma=ones_param(c), beta=zeros_param(c),
        running_mean=np.zeros(c), running_var=np.ones(c))


# ----------------------------------------------------------- structure sites

@dataclass(frozen=True)
class LayerSite:
    """Structural record of one primitive layer, for analytical costing.

    dims carries kind-specific numbers:
      conv:      c, e, kh, kw, h, w (output dims), bias (0/1)
      depthwise: c, kh, kw, h, w, bias
      linear:    d_in, d_out, tokens, bias
      norm:      c, h, w  (or d, tokens for token-wise norm)
      act:       n (element count)
      msdeform:  queries, heads, samples, d_head
    """
    path: str
    kind: str
    dims: dict


def conv_site(path, weight, h, w, bias=False, depthwise=False) -> LayerSite:
    e, c, kh, kw = weight.shape
    if depthwise:
        return LayerSite(path, "depthwise",
                         {"c": e, "kh": kh, "kw": kw, "h": h, "w": w,
                          "bias": int(bias)})
    return LayerSite(path, "conv",
                     {"c": c, "e": e, "kh": kh, "kw": kw, "h": h, "w": w,
                      "bias": int(bias)})


def linear_site(path, d_in, d_out, tokens, bias=True) -> LayerSite:
    return LayerSite(path, "linear",
                     {"d_in": d_in, "d_out": d_out, "tokens": tokens,
                      "bias": int(bias)})


def norm_site(path, c, h, w) -> LayerSite:
    return LayerSite(path, "norm", {"c": c, "h": h, "w": w})


# ----------------------------------------------------------------- the block

@dataclass
class LRDSParams:
    reduce: O.Conv2dParams
    norm_r: Optional[O.BatchNormParams]
    depthwise: O.Conv2dParams
    pointwise: O.Conv2dParams
    expand: O.Conv2dParams
    norm_e: Optional[O.BatchNormParams]
    act: str = "relu"


def make_lrds(rng, c_in: int, c_out: int, k: int = 3, stride: int = 1,
              c_mid: Optional[int] = None, norm: bool = True,
              act: str = "relu") -> LRDSParams:
    cm = default_mid(c_out) if c_mid is None else c_mid
    if cm >= c_in:
        warnings.warn(
            f"mid width {cm} >= input width {c_in}; block is no longer a "
            "bottleneck", BottleneckWarning, stacklevel=2)
    return LRDSParams(
        reduce=O.Conv2dParams(weight=conv_weight(rng, cm, c_in, 1)),
        norm_r=make_batch_norm(cm) if norm else None,
        depthwise=O.Conv2dParams(weight=depthwise_weight(rng, cm, k),
                                 stride=stride, padding=k // 2),
        # a bias here would be erased by the expand -> norm mean subtraction
        pointwise=O.Conv2dParams(weight=conv_weight(rng, cm, cm, 1),
                                 bias=None if norm else zeros_param(cm)),
        expand=O.Conv2dParams(weight=conv_weight(rng, c_out, cm, 1)),
        norm_e=make_batch_norm(c_out) if norm else None,
        act=act)


def lrds_forward(x: Tensor, p: LRDSParams, training: bool = False) -> Tensor:
    y = O.pointwise_conv2d(x, p.reduce.weight, p.reduce.bias)
    if p.norm_r is not None:
        y = O.batch_norm(y, p.norm_r, training)
    y = O.activation(y, p.act)
    y = O.depthwise_conv2d(y, p.depthwise.weight, stride=p.depthwise.stride,
                           padding=p.depthwise.padding)
    y = O.pointwise_conv2d(y, p.pointwise.weight, p.pointwise.bias)
    y = O.pointwise_conv2d(y, p.expand.weight, p.expand.bias)
    if p.norm_e is not None:
        y = O.batch_norm(y, p.norm_e, training)
    return O.activation(y, p.act)


def lrds_sites(path: str, p: LRDSParams, h: int, w: int) -> list:
    """h, w are the block's output spatial dims; reduce runs pre-stride."""
    s = p.depthwise.stride
    sh, sw = (s, s) if isinstance(s, int) else s
    hin, win = h * sh, w * sw
    out = [conv_site(f"{path}.reduce", p.reduce.weight.data, hin, win)]
    if p.norm_r is not None:
        out.append(norm_site(f"{path}.norm_r", p.reduce.weight.shape[0], hin, win))
    out.append(conv_site(f"{path}.depthwise", p.depthwise.weight.data, h, w,
                         depthwise=True))
    out.append(conv_site(f"{path}.pointwise", p.pointwise.weight.data, h, w,
                         bias=p.pointwise.bias is not None))
    out.append(conv_site(f"{path}.expand", p.expand.weight.data, h, w))
    if p.norm_e is not None:
        out.append(norm_site(f"{path}.norm_e", p.expand.weight.shape[0], h, w))
    return out


# ----------------------------------------------------------- low-rank linear

@dataclass
class LRLinearParams:
    reduce: Tensor  # [m, d_in]
    expand: Tensor  # [d_out, m]
    bias: Tensor    # [d_out]


def make_lr_linear(rng, d_in: int, d_out: int, m: int = 4,
                   zero_expand: bool = False,
                   bias_values=None) -> LRLinearParams:
    """Both factors random by default; predictors that must start as a fixed
    map get zero expand weights plus the reference bias."""
    expand = zeros_param(d_out, m) if zero_expand else linear_weight(rng, d_out, m)
    if bias_values is None:
        bias = zeros_param(d_out)
    else:
        bias = Tensor(np.asarray(bias_values, dtype=np.float64).reshape(d_out),
                      requires_grad=True)
    return LRLinearParams(reduce=linear_weight(rng, m, d_in), expand=expand,
                          bias=bias)


def lr_linear(x: Tensor, p: LRLinearParams) -> Tensor:
    return O.linear(O.linear(x, p.reduce), p.expand, p.bias)


def lr_linear_sites(path: str, p: LRLinearParams, tokens: int) -> list:
    m, d_in = p.reduce.shape
    d_out = p.expand.shape[0]
    return [linear_site(f"{path}.reduce", d_in, m, tokens, bias=False),
            linear_site(f"{path}.expand", m, d_out, tokens, bias=True)]


# --------------------------------------------------- response factorization

@dataclass(frozen=True)
class LowRankFactorization:
    J: np.ndarray   # [e, e0]
    W1: np.ndarray  # [e0, d]
    b: np.ndarray   # [e]
    e0: int


def factorize_response(W: np.ndarray, samples: np.ndarray,
                       e0: int) -> LowRankFactorization:
    """Factor the filter bank W through the top-e0 principal directions of
    the observed responses.

    samples: [P, e], one response row per probe. Rank-deficient sample sets
    are allowed; directions beyond the sample rank are whatever the
    eigensolver returns for the (defective) zero eigenvalues.
    """
    W = np.asarray(W, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    e = W.shape[0]
    if samples.ndim != 2 or samples.shape[1] != e:
        raise ContractError(
            f"samples {samples.shape} do not match {e} filters")
    if not 1 <= e0 <= e:
        raise ContractError(f"rank {e0} outside [1, {e}]")
    y1 = samples.mean(axis=0)
    centered = samples - y1
    cov = centered.T @ centered / max(len(samples), 1)
    _, vecs = np.linalg.eigh(cov)  # ascending eigenvalues
    J = vecs[:, ::-1][:, :e0]      # top-e0 principal directions
    U = J @ J.T
    return LowRankFactorization(J=J, W1=J.T @ W, b=y1 - U @ y1, e0=e0)


def reconstruct_response(f: LowRankFactorization, t: np.ndarray) -> np.ndarray:
    """t: [d] or [d, P] probe columns; returns reconstructed responses."""
    return f.J @ (f.W1 @ t) + (f.b if np.ndim(t) == 1 else f.b[:, None])


# ------------------------------------------------------------------- costs

@dataclass(frozen=True)
class CostReport:
    macs: int
    dense_macs: int
    ratio: float
    per_position: int
    dense_per_position: int


def lrds_cost(c: int, c_mid: int, c_out: int, k: int, h_out: int,
              w_out: int) -> CostReport:
    """Closed-form MAC count for the block vs a dense k x k conv of the same
    geometry. Bias, norm and activation costs excluded."""
    if min(c, c_mid, c_out, k, h_out, w_out) <= 0:
        raise ContractError("dimensions must be positive")
    per = c * c_mid + k * k * c_mid + c_mid * c_mid + c_mid * c_out
    dense_per = c * k * k * c_out
    n = h_out * w_out
    return CostReport(macs=per * n, dense_macs=dense_per * n,
                      ratio=per / dense_per, per_position=per,
                      dense_per_position=dense_per)


def lr_cost(e: int, e0: int, k: int, c: int) -> tuple:
    """(low-rank MACs, full MACs) per position for a k x k conv c -> e
    factored through rank e0."""
    if min(e, e0, k, c) <= 0:
        raise ContractError("dimensions must be positive")
    full = e * k * k * c
    lr = e0 * k * k * c + e * e0
    return lr, full


# ------------------------------------------------------- conv realizations

VARIANTS = ("original", "ds", "lr", "lrds")


@dataclass
class ConvRealization:
    """One conv site, realized per variant. Optional trailing norm + act."""
    kind: str
    dense: Optional[O.Conv2dParams] = None
    depthwise: Optional[O.Conv2dParams] = None
    pointwise: Optional[O.Conv2dParams] = None
    lr_first: Optional[O.Conv2dParams] = None
    lr_second: Optional[O.Conv2dParams] = None
    lrds: Optional[LRDSParams] = None
    norm: Optional[O.BatchNormParams] = None
    act: str = "identity"


def make_conv_realization(rng, kind: str, c_in: int, c_out: int, k: int,
                          stride: int = 1, norm: bool = True,
                          act: str = "relu") -> ConvRealization:
    if kind not in VARIANTS:
        raise ConfigError(f"unknown conv variant {kind!r}")
    bias = zeros_param(c_out) if not norm else None
    bn = make_batch_norm(c_out) if norm else None
    pad = k // 2
    if kind == "lrds":
        return ConvRealization(
            kind=kind,
            lrds=make_lrds(rng, c_in, c_out, k=k, stride=stride, norm=norm,
                           act=act))
    if kind == "original":
        return ConvRealization(
            kind=kind,
            dense=O.Conv2dParams(weight=conv_weight(rng, c_out, c_in, k),
                                 bias=bias, stride=stride, padding=pad),
            norm=bn, act=act)
    if kind == "ds":
        if k == 1 and stride == 1:
            # separating an unstrided 1x1 conv is just the pointwise part
            return ConvRealization(
                kind=kind,
                pointwise=O.Conv2dParams(weight=conv_weight(rng, c_out, c_in, 1),
                                         bias=bias),
                norm=bn, act=act)
        return ConvRealization(
            kind=kind,
            depthwise=O.Conv2dParams(weight=depthwise_weight(rng, c_in, k),
                                     stride=stride, padding=pad),
            pointwise=O.Conv2dParams(weight=conv_weight(rng, c_out, c_in, 1),
                                     bias=bias),
            norm=bn, act=act)
    e0 = max(1, c_out // 4)
    return ConvRealization(
        kind=kind,
        lr_first=O.Conv2dParams(weight=conv_weight(rng, e0, c_in, k),
                                stride=stride, padding=pad),
        lr_second=O.Conv2dParams(weight=conv_weight(rng, c_out, e0, 1),
                                 bias=bias),
        norm=bn, act=act)


def conv_realization_forward(x: Tensor, r: ConvRealization,
                             training: bool = False) -> Tensor:
    if r.kind == "lrds":
        return lrds_forward(x, r.lrds, training)
    if r.kind == "original":
        p = r.dense
        y = O.conv2d(x, p.weight, p.bias, stride=p.stride, padding=p.padding)
    elif r.kind == "ds":
        y = x
        if r.depthwise is not None:
            y = O.depthwise_conv2d(y, r.depthwise.weight,
                                   stride=r.depthwise.stride,
                                   padding=r.depthwise.padding)
        y = O.pointwise_conv2d(y, r.pointwise.weight, r.pointwise.bias)
    else:
        p = r.lr_first
        y = O.conv2d(x, p.weight, p.bias, stride=p.stride, padding=p.padding)
        y = O.pointwise_conv2d(y, r.lr_second.weight, r.lr_second.bias)
    if r.norm is not None:
        y = O.batch_norm(y, r.norm, training)
    return O.activation(y, r.act)


def conv_realization_sites(path: str, r: ConvRealization, h: int,
                           w: int) -> list:
    """h, w: output spatial dims of the site."""
    if r.kind == "lrds":
        return lrds_sites(path, r.lrds, h, w)
    out = []
    if r.kind == "original":
        out.append(conv_site(f"{path}.dense", r.dense.weight.data, h, w,
                             bias=r.dense.bias is not None))
    elif r.kind == "ds":
        if r.depthwise is not None:
            out.append(conv_site(f"{path}.depthwise", r.depthwise.weight.data,
                                 h, w, depthwise=True))
        out.append(conv_site(f"{path}.pointwise", r.pointwise.weight.data,
                             h, w, bias=r.pointwise.bias is not None))
    else:
        out.append(conv_site(f"{path}.lr_first", r.lr_first.weight.data, h, w))
        out.append(conv_site(f"{path}.lr_second", r.lr_second.weight.data,
                             h, w, bias=r.lr_second.bias is not None))
    if r.norm is not None:
        out.append(norm_site(f"{path}.norm", len(r.norm.gamma.data), h, w))
    return out


# ----------------------------------------------------- linear realizations

@dataclass
class LinearRealization:
    kind: str  # "dense" | "lr"
    weight: Optional[Tensor] = None
    bias: Optional[Tensor] = None
    lr: Optional[LRLinearParams] = None


def linear_kind(variant: str) -> str:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    return "lr" if variant in ("lr", "lrds") else "dense"


def make_linear_realization(rng, variant: str, d_in: int, d_out: int,
                            m: int = 4, zero_out: bool = False,
                            bias_values=None) -> LinearRealization:
    kind = linear_kind(variant)
    if kind == "lr":
        return LinearRealization(
            kind=kind, lr=make_lr_linear(rng, d_in, d_out, m=m,
                                         zero_expand=zero_out,
                                         bias_values=bias_values))
    weight = zeros_param(d_out, d_in) if zero_out else linear_weight(rng, d_out, d_in)
    if bias_values is None:
        bias = zeros_param(d_out)
    else:
        bias = Tensor(np.asarray(bias_values, dtype=np.float64).reshape(d_out),
                      requires_grad=True)
    return LinearRealization(kind=kind, weight=weight, bias=bias)


def linear_realization_forward(x: Tensor, r: LinearRealization) -> Tensor:
    if r.kind == "lr":
        return lr_linear(x, r.lr)
    return O.linear(x, r.weight, r.bias)


def linear_realization_sites(path: str, r: LinearRealization,
                             tokens: int) -> list:
    if r.kind == "lr":
        return lr_linear_sites(path, r.lr, tokens)
    d_out, d_in = r.weight.shape
    return [linear_site(path, d_in, d_out, tokens)]
