"""Multi-scale feature extraction backbone and channel-unified pyramid.

A stem downsamples the image once, then four residual stages each halve the
spatial dims (strides 4, 8, 16, 32). Every stage block runs its conv through
the configured realization variant, applies strip pooling, and adds a
shortcut. feature_enhance projects the four stage maps to a shared channel
width and appends a fifth, stride-64 level.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops as O
from .autodiff import Tensor
from .blocks import (ConvRealization, conv_realization_forward,
                     conv_realization_sites, conv_site,
                     make_conv_realization)
from .errors import ConfigError
from .params import depthwise_weight, conv_weight, zeros_param


@dataclass(frozen=True)
class BackboneConfig:
    stage_blocks: tuple = (2, 2, 2, 2)
    stage_channels: tuple = (16, 32, 64, 128)
    stem_channels: int = 8
    unified_channels: int = 32
    input_size: tuple = (64, 64)


def validate_backbone_config(cfg: BackboneConfig) -> None:
    if len(cfg.stage_blocks) != 4 or len(cfg.stage_channels) != 4:
        raise ConfigError("backbone needs exactly 4 stages")
    if any(b < 1 for b in cfg.stage_blocks):
        raise ConfigError(f"stage_blocks must be >= 1, got {cfg.stage_blocks}")
    ch = cfg.stage_channels
    if any(a >= b for a, b in zip(ch, ch[1:])):
        raise ConfigError(f"stage_channels must strictly increase, got {ch}")
    if cfg.stem_channels < 1 or cfg.unified_channels < 1:
        raise ConfigError("stem and unified channels must be positive")
    h, w = cfg.input_size
    if h % 32 or w % 32 or h < 32 or w < 32:
        raise ConfigError(f"input size {cfg.input_size} not divisible by 32")


def make_strip(rng, c: int) -> O.StripPoolParams:
    return O.StripPoolParams(
        conv_h=depthwise_weight(rng, c, 3, 1),
        conv_w=depthwise_weight(rng, c, 1, 3),
        proj=conv_weight(rng, c, c, 1),
        proj_bias=zeros_param(c))


def strip_sites(path: str, p: O.StripPoolParams, h: int, w: int) -> list:
    return [
        conv_site(f"{path}.conv_h", p.conv_h.data, h, 1, depthwise=True),
        conv_site(f"{path}.conv_w", p.conv_w.data, 1, w, depthwise=True),
        conv_site(f"{path}.proj", p.proj.data, h, w, bias=True),
    ]


@dataclass
class ResidualBlock:
    main: ConvRealization
    strip: O.StripPoolParams
    shortcut: Optional[ConvRealization]


@dataclass
class BackboneParams:
    stem: ConvRealization
    stages: list  # 4 lists of ResidualBlock


@dataclass
class EnhanceParams:
    projections: list  # 4 x ConvRealization, k=1, stage width -> unified
    downsample: ConvRealization  # k=3 stride 2, deepest stage -> unified


def build_mfe(rng, cfg: BackboneConfig, variant: str = "lrds"):
    """Returns (BackboneParams, sites). Sites carry output spatial dims for
    the analytical profiler and are computed from cfg.input_size."""
    validate_backbone_config(cfg)
    h, w = cfg.input_size
    sites = []
    stem = make_conv_realization(rng, variant, 3, cfg.stem_channels, k=3,
                                 stride=2)
    h, w = h // 2, w // 2
    sites += conv_realization_sites("mfe.stem", stem, h, w)

    stages = []
    c_in = cfg.stem_channels
    for si, (n_blocks, c_out) in enumerate(
            zip(cfg.stage_blocks, cfg.stage_channels)):
        blocks = []
        h, w = h // 2, w // 2
        for bi in range(n_blocks):
            stride = 2 if bi == 0 else 1
            prefix = f"mfe.stage{si + 1}.block{bi}"
            main = make_conv_realization(rng, variant, c_in, c_out, k=3,
                                         stride=stride)
            strip = make_strip(rng, c_out)
            if stride != 1 or c_in != c_out:
                shortcut = make_conv_realization(rng, variant, c_in, c_out,
                                                 k=1, stride=stride,
                                                 act="identity")
                sites += conv_realization_sites(f"{prefix}.shortcut",
                                                shortcut, h, w)
            else:
                shortcut = None
            sites += conv_realization_sites(f"{prefix}.main", main, h, w)
            sites += strip_sites(f"{prefix}.strip", strip, h, w)
            blocks.append(ResidualBlock(main=main, strip=strip,
                                        shortcut=shortcut))
            c_in = c_out
        stages.append(blocks)
    return BackboneParams(stem=stem, stages=stages), sites


def build_enhance(rng, cfg: BackboneConfig, variant: str = "lrds"):
    validate_backbone_config(cfg)
    u = cfg.unified_channels
    h, w = cfg.input_size
    sites = []
    projections = []
    for si, c in enumerate(cfg.stage_channels):
        hs, ws = h >> (si + 2), w >> (si + 2)
        # plain channel unification; kept norm-free so a width-matching
        # config with identity weights passes stage maps through untouched
        proj = make_conv_realization(rng, variant, c, u, k=1, norm=False,
                                     act="identity")
        sites += conv_realization_sites(f"enhance.proj{si + 1}", proj, hs, ws)
        projections.append(proj)
    # norm-free: at desk-scale inputs this lands on a 1x1 map, where a batch
    # norm would collapse to its beta and cut the gradient path entirely
    down = make_conv_realization(rng, variant, cfg.stage_channels[3], u, k=3,
                                 stride=2, norm=False, act="identity")
    h5 = (h // 32 + 2 - 3) // 2 + 1
    w5 = (w // 32 + 2 - 3) // 2 + 1
    sites += conv_realization_sites("enhance.down", down, h5, w5)
    return EnhanceParams(projections=projections, downsample=down), sites


def block_forward(x: Tensor, blk: ResidualBlock, training: bool) -> Tensor:
    y = conv_realization_forward(x, blk.main, training)
    y = O.strip_pool(y, blk.strip)
    s = x if blk.shortcut is None else conv_realization_forward(
        x, blk.shortcut, training)
    return O.activation(y + s, "relu")


def mfe_forward(image: Tensor, p: BackboneParams,
                training: bool = False) -> list:
    """image [N,3,H,W] with H, W divisible by 32 -> 4 stage maps."""
    if image.ndim != 4:
        raise ConfigError(f"expected [N,3,H,W], got {image.shape}")
    n, c, h, w = image.shape
    if h % 32 or w % 32 or h < 32 or w < 32:
        raise ConfigError(f"input {h}x{w} not divisible by 32")
    x = conv_realization_forward(image, p.stem, training)
    maps = []
    for blocks in p.stages:
        for blk in blocks:
            x = block_forward(x, blk, training)
        maps.append(x)
    return maps


def feature_enhance(stage_maps: list, p: EnhanceParams,
                    training: bool = False) -> list:
    """4 stage maps -> 5 unified-channel levels at strides 4..64."""
    if len(stage_maps) != 4:
        raise ConfigError(f"expected 4 stage maps, got {len(stage_maps)}")
    levels = [conv_realization_forward(m, proj, training)
              for m, proj in zip(stage_maps, p.projections)]
    levels.append(conv_realization_forward(stage_maps[3], p.downsample,
                                           training))
    return levels
