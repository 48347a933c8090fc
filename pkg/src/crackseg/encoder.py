"""Long-range dependency extraction over the flattened feature pyramid.

The five pyramid levels are flattened row-major, shallow to deep, into one
token sequence. Encoder layers run multi-scale deformable attention: each
query predicts, per head and level, T sampling offsets and a weight logit;
weights are softmaxed over the level x point axis so they sum to 1 per head.
Layers are pre-norm residual blocks, and every dense linear inside follows
the configured realization (low-rank by default).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops as O
from .autodiff import Tensor, concat, reshape
from .blocks import (LayerSite, LinearRealization, linear_realization_forward,
                     linear_realization_sites, make_linear_realization,
                     norm_site)
from .errors import ConfigError, ContractError, ShapeError
from .params import ones_param, zeros_param


@dataclass
class TokenSequence:
    tokens: Tensor            # [N, Q, d]
    level_index: np.ndarray   # [Q] int level id per token
    ref_points: np.ndarray    # [N, Q, 2] normalized (x, y) pixel centers
    level_shapes: list        # [(h, w)] per level


def _ref_grid(h: int, w: int) -> np.ndarray:
    """Row-major pixel-center reference points, normalized to (0,1)."""
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)  # (x, y)


def flatten_pyramid(levels: list) -> TokenSequence:
    if not levels:
        raise ContractError("empty pyramid")
    n = levels[0].shape[0]
    d = levels[0].shape[1]
    toks, idx, refs, shapes = [], [], [], []
    for li, lv in enumerate(levels):
        if lv.shape[0] != n or lv.shape[1] != d:
            raise ShapeError(f"level {li} shape {lv.shape} inconsistent")
        _, _, h, w = lv.shape
        toks.append(reshape(lv, (n, d, h * w)).permute(0, 2, 1))
        idx.append(np.full(h * w, li, dtype=np.int64))
        refs.append(_ref_grid(h, w))
        shapes.append((h, w))
    return TokenSequence(
        tokens=concat(toks, axis=1),
        level_index=np.concatenate(idx),
        ref_points=np.tile(np.concatenate(refs, axis=0)[None], (n, 1, 1)),
        level_shapes=shapes)


def unflatten_tokens(seq: TokenSequence) -> list:
    n, q, d = seq.tokens.shape
    out = []
    start = 0
    for h, w in seq.level_shapes:
        lv = seq.tokens[:, start:start + h * w, :]
        out.append(reshape(lv.permute(0, 2, 1), (n, d, h, w)))
        start += h * w
    if start != q:
        raise ContractError(f"level shapes cover {start} of {q} tokens")
    return out


# ------------------------------------------------------------- attention

@dataclass
class DeformAttnParams:
    heads: int
    levels: int
    points: int
    d: int
    value_proj: LinearRealization    # d -> d, split into heads by rows
    output_proj: LinearRealization   # d -> d (concat-of-heads form)
    offset_pred: LinearRealization   # d -> heads*levels*points*2, zero start
    weight_pred: LinearRealization   # d -> heads*levels*points, zero start


def make_deform_attn(rng, d: int, levels: int, heads: int = 4,
                     points: int = 4, variant: str = "lrds",
                     offset_bias=None) -> DeformAttnParams:
    if d % heads:
        raise ConfigError(f"model dim {d} not divisible by {heads} heads")
    hct = heads * levels * points
    return DeformAttnParams(
        heads=heads, levels=levels, points=points, d=d,
        value_proj=make_linear_realization(rng, variant, d, d),
        output_proj=make_linear_realization(rng, variant, d, d),
        offset_pred=make_linear_realization(rng, variant, d, hct * 2,
                                            zero_out=True,
                                            bias_values=offset_bias),
        weight_pred=make_linear_realization(rng, variant, d, hct,
                                            zero_out=True))


def _scale_refs(ref: np.ndarray, h: int, w: int) -> np.ndarray:
    """Normalized (x, y) -> pixel coordinates on an h x w grid."""
    out = np.empty_like(ref)
    out[..., 0] = ref[..., 0] * w - 0.5
    out[..., 1] = ref[..., 1] * h - 0.5
    return out


def deform_attention_weights(seq: TokenSequence,
                             p: DeformAttnParams) -> Tensor:
    """Sampling weights [n, q, heads, levels, points]; the softmax runs
    over the joint (level, point) axis, so they sum to one per head."""
    n, q, _ = seq.tokens.shape
    logits = linear_realization_forward(seq.tokens, p.weight_pred)
    logits = reshape(logits, (n, q, p.heads, p.levels * p.points))
    return reshape(O.softmax(logits, axis=-1),
                   (n, q, p.heads, p.levels, p.points))


def msdeform_attn(seq: TokenSequence, value_maps: list,
                  p: DeformAttnParams) -> Tensor:
    """Per query: sample T points per (head, level) from projected value
    maps at ref + predicted offset, blend with softmaxed weights, project."""
    n, q, d = seq.tokens.shape
    if d != p.d:
        raise ShapeError(f"token dim {d} vs attention dim {p.d}")
    if len(value_maps) != p.levels:
        raise ContractError(
            f"{len(value_maps)} value maps for {p.levels} levels")
    for li, ((h, w), vm) in enumerate(zip(seq.level_shapes, value_maps)):
        if vm.shape[2] != h or vm.shape[3] != w:
            raise ShapeError(f"value map {li} is {vm.shape}, expected "
                             f"{h}x{w}")
    hn, cn, tn = p.heads, p.levels, p.points
    dh = d // hn

    off = linear_realization_forward(seq.tokens, p.offset_pred)
    off = reshape(off, (n, q, hn, cn, tn, 2))
    attn = deform_attention_weights(seq, p)

    # value tokens, projected once, then viewed per head and per level
    vtoks = [reshape(vm, (n, d, vm.shape[2] * vm.shape[3])).permute(0, 2, 1)
             for vm in value_maps]
    vproj = linear_realization_forward(concat(vtoks, axis=1), p.value_proj)

    starts = np.cumsum([0] + [h * w for h, w in seq.level_shapes])
    head_outs = []
    for h_i in range(hn):
        vh = vproj[:, :, h_i * dh:(h_i + 1) * dh]
        acc = None
        for c_i in range(cn):
            hc, wc = seq.level_shapes[c_i]
            vmap = reshape(vh[:, starts[c_i]:starts[c_i + 1], :]
                           .permute(0, 2, 1), (n, dh, hc, wc))
            base = _scale_refs(seq.ref_points, hc, wc)  # [n, q, 2]
            pts = Tensor(base[:, :, None, :]) + off[:, :, h_i, c_i, :, :]
            samp = O.bilinear_sample(vmap, reshape(pts, (n, q * tn, 2)))
            samp = reshape(samp, (n, q, tn, dh))
            wgt = reshape(attn[:, :, h_i, c_i, :], (n, q, tn, 1))
            term = (samp * wgt).sum(axis=2)
            acc = term if acc is None else acc + term
        head_outs.append(acc)
    merged = concat(head_outs, axis=2)
    return linear_realization_forward(merged, p.output_proj)


# --------------------------------------------------------------- encoder

@dataclass
class EncoderLayerParams:
    attn: DeformAttnParams
    norm1_g: Tensor
    norm1_b: Tensor
    ffn_in: LinearRealization   # d -> 2d
    ffn_out: LinearRealization  # 2d -> d
    norm2_g: Tensor
    norm2_b: Tensor


@dataclass
class LDEParams:
    layers: list
    level_embed: Tensor  # [levels, d], zero-init


def make_lde(rng, d: int, levels: int, depth: int = 2, heads: int = 4,
             points: int = 4, variant: str = "lrds") -> LDEParams:
    if depth < 0:
        raise ConfigError(f"negative encoder depth {depth}")
    layers = []
    for _ in range(depth):
        layers.append(EncoderLayerParams(
            attn=make_deform_attn(rng, d, levels, heads, points, variant),
            norm1_g=ones_param(d), norm1_b=zeros_param(d),
            ffn_in=make_linear_realization(rng, variant, d, 2 * d),
            ffn_out=make_linear_realization(rng, variant, 2 * d, d),
            norm2_g=ones_param(d), norm2_b=zeros_param(d)))
    return LDEParams(layers=layers, level_embed=zeros_param(levels, d))


def _level_selector(level_index: np.ndarray, levels: int) -> np.ndarray:
    sel = np.zeros((len(level_index), levels))
    sel[np.arange(len(level_index)), level_index] = 1.0
    return sel


def encoder_layer_forward(x: Tensor, seq_meta: TokenSequence,
                          layer: EncoderLayerParams,
                          level_embed: Tensor) -> Tensor:
    """Pre-norm residual: x + attn(norm(x)), then x + ffn(norm(x)).
    The level embedding is added to attention queries only, so zero-init
    residual branches leave the sequence untouched."""
    normed = O.layer_norm(x, layer.norm1_g, layer.norm1_b)
    sel = Tensor(_level_selector(seq_meta.level_index, level_embed.shape[0]))
    queries = normed + (sel @ level_embed)
    inner = TokenSequence(tokens=queries, level_index=seq_meta.level_index,
                          ref_points=seq_meta.ref_points,
                          level_shapes=seq_meta.level_shapes)
    values = unflatten_tokens(TokenSequence(
        tokens=normed, level_index=seq_meta.level_index,
        ref_points=seq_meta.ref_points, level_shapes=seq_meta.level_shapes))
    x = x + msdeform_attn(inner, values, layer.attn)
    normed2 = O.layer_norm(x, layer.norm2_g, layer.norm2_b)
    y = linear_realization_forward(normed2, layer.ffn_in)
    y = O.activation(y, "relu")
    return x + linear_realization_forward(y, layer.ffn_out)


def lde_encode(seq: TokenSequence, p: LDEParams) -> TokenSequence:
    x = seq.tokens
    for layer in p.layers:
        x = encoder_layer_forward(x, seq, layer, p.level_embed)
    return TokenSequence(tokens=x, level_index=seq.level_index,
                         ref_points=seq.ref_points,
                         level_shapes=seq.level_shapes)


# ----------------------------------------------------------------- sites

def deform_attn_sites(path: str, p: DeformAttnParams, tokens: int) -> list:
    out = []
    out += linear_realization_sites(f"{path}.value_proj", p.value_proj, tokens)
    out += linear_realization_sites(f"{path}.output_proj", p.output_proj,
                                    tokens)
    out += linear_realization_sites(f"{path}.offset_pred", p.offset_pred,
                                    tokens)
    out += linear_realization_sites(f"{path}.weight_pred", p.weight_pred,
                                    tokens)
    out.append(LayerSite(f"{path}.sampling", "msdeform",
                         {"queries": tokens, "heads": p.heads,
                          "samples": p.levels * p.points,
                          "d_head": p.d // p.heads}))
    return out


def lde_sites(path: str, p: LDEParams, tokens: int) -> list:
    out = []
    d = p.level_embed.shape[1]
    out.append(LayerSite(f"{path}.level_embed", "embed",
                         {"rows": p.level_embed.shape[0], "d": d}))
    for li, layer in enumerate(p.layers):
        prefix = f"{path}.layer{li}"
        out.append(norm_site(f"{prefix}.norm1", d, tokens, 1))
        out += deform_attn_sites(f"{prefix}.attn", layer.attn, tokens)
        out.append(norm_site(f"{prefix}.norm2", d, tokens, 1))
        out += linear_realization_sites(f"{prefix}.ffn_in", layer.ffn_in,
                                        tokens)
        out += linear_realization_sites(f"{prefix}.ffn_out", layer.ffn_out,
                                        tokens)
    return out
