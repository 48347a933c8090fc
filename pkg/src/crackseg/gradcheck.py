"""Finite-difference audit of every differentiable op and composite block.

Each named check builds a tiny fixed-seed instance, runs gradient_check
(analytic tape gradients vs central differences in f64), and reports the
max relative error. The CLI groups checks into modules so a single layer
family can be re-audited in isolation.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import ops as O
from .autodiff import (Tensor, clamp, concat, gradient_check, log, sigmoid,
                       tmean, tsum)
from .backbone import BackboneConfig, make_strip
from .blocks import make_lrds, lrds_forward, make_linear_realization, \
    linear_realization_forward
from .encoder import flatten_pyramid, lde_encode, make_deform_attn, \
    make_lde, msdeform_attn
from .errors import BottleneckWarning, ConfigError
from .fusion import build_scfm, make_paf, make_sefu, paf_fuse, scfm_forward, \
    sefu
from .losses import combined_loss
from .params import iter_params, linear_weight, ones_param, zeros_param

TOLERANCE = 1e-4
MODULES = ("tensor", "nn", "lrds", "lde", "scfm", "loss")


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    err: float
    tol: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.err < self.tol


def _rng():
    return np.random.default_rng(20240611)


# ------------------------------------------------------------ tensor core

def _check_arithmetic():
    rng = _rng()
    a = Tensor(rng.normal(size=(2, 3)))
    b = Tensor(rng.uniform(0.8, 1.5, size=(2, 3)))  # inside the clamp window

    def f(*_):
        return tsum(sigmoid(a * b) + (a / clamp(b, 0.5, 2.0)) * 2.0 - b) \
            + tmean(-a)

    return gradient_check(f, [a, b])


def _check_matmul_shapes():
    rng = _rng()
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 5)))
    proj = Tensor(rng.normal(size=(2, 2)))

    def f(*_):
        z = (a @ b).permute((1, 0)).reshape((3, 5))
        return tsum(z[1:, :2] * proj) + tmean(a @ b)

    return gradient_check(f, [a, b])


def _check_concat_broadcast():
    rng = _rng()
    a = Tensor(rng.uniform(0.2, 1.0, size=(2, 4)))
    w = Tensor(rng.uniform(0.5, 1.5, size=(1, 4)))

    def f(*_):
        return tsum(log(concat([a, a * w], axis=1) + 0.5))

    return gradient_check(f, [a, w])


# ------------------------------------------------------------- neural ops

def _check_conv2d():
    rng = _rng()
    x = Tensor(rng.normal(size=(1, 3, 6, 6)))
    w = Tensor(rng.normal(size=(4, 3, 3, 3)) * 0.5)
    b = Tensor(rng.normal(size=(4,)))
    proj = Tensor(rng.normal(size=(1, 4, 3, 3)))

    def f(*_):
        return tsum(O.conv2d(x, w, b, stride=2, padding=1) * proj)

    return gradient_check(f, [x, w, b])


def _check_separable_conv():
    rng = _rng()
    x = Tensor(rng.normal(size=(1, 4, 5, 5)))
    dw = Tensor(rng.normal(size=(4, 1, 3, 3)) * 0.5)
    pw = Tensor(rng.normal(size=(5, 4, 1, 1)) * 0.5)
    proj = Tensor(rng.normal(size=(1, 5, 5, 5)))

    def f(*_):
        mid = O.depthwise_conv2d(x, dw, padding=1)
        return tsum(O.pointwise_conv2d(mid, pw) * proj)

    return gradient_check(f, [x, dw, pw])


def _check_batch_norm():
    rng = _rng()
    x = Tensor(rng.normal(size=(2, 3, 4, 4)))
    p = O.BatchNormParams(gamma=ones_param(3), beta=zeros_param(3),
                          running_mean=np.zeros(3), running_var=np.ones(3))
    # projecting onto a fixed direction keeps the objective sensitive to
    # the normalized directions the plain sum would cancel out
    proj = Tensor(rng.normal(size=(2, 3, 4, 4)))

    def f(*_):
        return tsum(O.batch_norm(x, p, training=True) * proj)

    return gradient_check(f, [x, p.gamma, p.beta])


def _check_token_ops():
    rng = _rng()
    x = Tensor(rng.normal(size=(2, 7, 6)))
    g = Tensor(rng.uniform(0.5, 1.5, size=(6,)))
    b = Tensor(rng.normal(size=(6,)) * 0.1)
    w = linear_weight(_rng(), 5, 6)
    proj = Tensor(rng.normal(size=(2, 7, 5)))

    def f(*_):
        z = O.linear(O.layer_norm(x, g, b), w)
        return tsum(O.softmax(z, axis=-1) * proj)

    return gradient_check(f, [x, g, b, w])


def _check_bilinear_sample():
    rng = _rng()
    feat = Tensor(rng.normal(size=(1, 3, 5, 5)))
    # fractional coordinates stay away from the kernel's corner kinks
    pts = Tensor(rng.uniform(0.3, 3.6, size=(1, 6, 2)) + 0.07)
    proj = Tensor(rng.normal(size=(1, 6, 3)))

    def f(*_):
        return tsum(O.bilinear_sample(feat, pts) * proj)

    return gradient_check(f, [feat, pts])


def _check_resize_and_strip():
    rng = _rng()
    x = Tensor(rng.normal(size=(1, 4, 4, 4)))
    p = make_strip(_rng(), 4)
    p.proj_bias.data[:] = rng.normal(size=4) * 0.1
    proj = Tensor(rng.normal(size=(1, 4, 6, 7)))

    def f(*_):
        return tsum(O.resize_bilinear(strip := O.strip_pool(x, p), 6, 7)
                    * proj) + tmean(O.upsample2x(strip))

    return gradient_check(f, [x, p.conv_h, p.proj, p.proj_bias])


# ------------------------------------------------------------- lrds block

def _check_lrds_block():
    rng = _rng()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BottleneckWarning)
        p = make_lrds(_rng(), 6, 8, k=3, stride=1)
    x = Tensor(rng.normal(size=(1, 6, 5, 5)))
    proj = Tensor(rng.normal(size=(1, 8, 5, 5)))

    def f(*_):
        return tsum(lrds_forward(x, p, training=True) * proj)

    return gradient_check(f, [x, p.reduce.weight, p.depthwise.weight,
                              p.expand.weight, p.norm_e.gamma])


def _check_low_rank_linear():
    rng = _rng()
    p = make_linear_realization(_rng(), "lr", 8, 6)
    x = Tensor(rng.normal(size=(2, 5, 8)))
    proj = Tensor(rng.normal(size=(2, 5, 6)))

    def f(*_):
        return tsum(linear_realization_forward(x, p) * proj)

    return gradient_check(f, [x, p.lr.reduce, p.lr.expand, p.lr.bias])


# -------------------------------------------------------- long-range attn

def _check_deform_attention():
    rng = _rng()
    lv = Tensor(rng.normal(size=(1, 4, 3, 3)))
    p = make_deform_attn(_rng(), d=4, levels=1, heads=2, points=2,
                         variant="lr")
    p.offset_pred.lr.bias.data[:] = rng.uniform(
        -0.37, 0.37, size=p.offset_pred.lr.bias.shape)
    p.weight_pred.lr.bias.data[:] = rng.uniform(
        -2.0, 2.0, size=p.weight_pred.lr.bias.shape)
    proj = Tensor(rng.normal(size=(1, 9, 4)))

    def f(*_):
        return tsum(msdeform_attn(flatten_pyramid([lv]), [lv], p) * proj)

    return gradient_check(f, [lv, p.offset_pred.lr.bias,
                              p.weight_pred.lr.expand,
                              p.value_proj.lr.reduce])


def _check_encoder_layer():
    rng = _rng()
    lv0 = Tensor(rng.normal(size=(1, 4, 3, 3)))
    lv1 = Tensor(rng.normal(size=(1, 4, 2, 2)))
    p = make_lde(_rng(), d=4, levels=2, depth=1, heads=2, points=2,
                 variant="lr")
    attn = p.layers[0].attn
    attn.offset_pred.lr.bias.data[:] = \
        rng.uniform(-0.3, 0.3, size=attn.offset_pred.lr.bias.shape)
    proj = Tensor(rng.normal(size=(1, 13, 4)))

    def f(*_):
        out = lde_encode(flatten_pyramid([lv0, lv1]), p)
        return tsum(out.tokens * proj)

    return gradient_check(f, [lv0, p.level_embed,
                              attn.offset_pred.lr.bias,
                              p.layers[0].ffn_in.lr.expand])


# --------------------------------------------------------------- fusion

def _check_paf_gate():
    rng = _rng()
    p = make_paf(_rng(), 4)
    p.gate.weight.data[:] = rng.normal(size=p.gate.weight.shape)
    v_c = Tensor(rng.normal(size=(1, 4, 3, 3)))
    v_d = Tensor(rng.normal(size=(1, 4, 3, 3)))
    proj = Tensor(rng.normal(size=(1, 4, 3, 3)))

    def f(*_):
        return tsum(paf_fuse(v_c, v_d, p, training=True) * proj)

    return gradient_check(f, [v_c, v_d, p.gate.weight, p.f_c.weight])


def _check_sefu_select():
    rng = _rng()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BottleneckWarning)
        p = make_sefu(_rng(), 4, 2)
    for s in p.scores:
        s.weight.data[:] = rng.normal(size=s.weight.shape) * 0.5
        s.bias.data[:] = rng.normal(size=s.bias.shape) * 0.5
    a = Tensor(rng.normal(size=(1, 4, 3, 3)))
    b = Tensor(rng.normal(size=(1, 4, 3, 3)))
    proj = Tensor(rng.normal(size=(1, 4, 3, 3)))

    def f(*_):
        return tsum(sefu([a, b], p, training=True) * proj)

    return gradient_check(f, [a, b, p.scores[0].weight, p.scores[1].bias])


def _check_staircase_stage():
    rng = _rng()
    cfg = BackboneConfig(stage_blocks=(1, 1, 1, 1),
                         stage_channels=(16, 32, 64, 128), stem_channels=8,
                         unified_channels=32, input_size=(64, 64))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BottleneckWarning)
        p, _ = build_scfm(_rng(), cfg)
    levels = [Tensor(rng.normal(size=(1, 32, s, s)))
              for s in (16, 8, 4, 2, 1)]
    maps = [Tensor(rng.normal(size=(1, c, 64 >> (i + 2), 64 >> (i + 2))))
            for i, c in enumerate((16, 32, 64, 128))]
    seq = flatten_pyramid(levels)
    proj = Tensor(rng.normal(size=(1, 1, 64, 64)))
    # a handful of small tensors spread across the module keeps the
    # finite-difference sweep affordable
    small = [t for _, t in iter_params(p) if t.data.size <= 8][:6]

    def f(*_):
        return tsum(scfm_forward(seq, maps, p, training=True) * proj)

    return gradient_check(f, [levels[1], *small])


# ----------------------------------------------------------------- losses

def _check_combined_loss():
    rng = _rng()
    probs = Tensor(rng.uniform(0.2, 0.8, size=(2, 1, 8, 8)))
    labels = (rng.random((2, 1, 8, 8)) < 0.3).astype(np.float64)

    def f(*_):
        return combined_loss(probs, labels)

    return gradient_check(f, [probs])


CHECKS = (
    ("tensor", "arithmetic-chain", _check_arithmetic),
    ("tensor", "matmul-reshape-slice", _check_matmul_shapes),
    ("tensor", "concat-broadcast-log", _check_concat_broadcast),
    ("nn", "conv2d-strided", _check_conv2d),
    ("nn", "separable-conv", _check_separable_conv),
    ("nn", "batch-norm", _check_batch_norm),
    ("nn", "layernorm-softmax-linear", _check_token_ops),
    ("nn", "bilinear-sample", _check_bilinear_sample),
    ("nn", "strip-pool-resize", _check_resize_and_strip),
    ("lrds", "lrds-block", _check_lrds_block),
    ("lrds", "low-rank-linear", _check_low_rank_linear),
    ("lde", "deformable-attention", _check_deform_attention),
    ("lde", "encoder-layer", _check_encoder_layer),
    ("scfm", "paf-gate", _check_paf_gate),
    ("scfm", "sefu-select", _check_sefu_select),
    ("scfm", "staircase-stage", _check_staircase_stage),
    ("loss", "combined-loss", _check_combined_loss),
)


def run_gradchecks(module: str = "all") -> list:
    if module != "all" and module not in MODULES:
        raise ConfigError(f"unknown gradcheck module {module!r}; "
                          f"pick one of {('all',) + MODULES}")
    results = []
    for mod, name, fn in CHECKS:
        if module in ("all", mod):
            results.append(CheckResult(module=mod, name=name, err=fn()))
    return results
