"""Whole-network assembly: backbone -> pyramid -> encoder -> fusion."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .backbone import (BackboneConfig, BackboneParams, EnhanceParams,
                       build_enhance, build_mfe, feature_enhance, mfe_forward)
from .encoder import (LDEParams, flatten_pyramid, lde_encode, lde_sites,
                      make_lde)
from .errors import ConfigError
from .fusion import SCFMParams, build_scfm, scfm_forward
from .blocks import VARIANTS


@dataclass(frozen=True)
class ModelConfig:
    stage_blocks: tuple = (2, 2, 2, 2)
    stage_channels: tuple = (16, 32, 64, 128)
    stem_channels: int = 8
    unified_channels: int = 32
    input_size: tuple = (64, 64)
    encoder_layers: int = 2
    heads: int = 4
    points: int = 4
    variant: str = "lrds"


PAPER_LIKE = ModelConfig(
    stage_blocks=(3, 4, 6, 3),
    stage_channels=(256, 512, 1024, 2048),
    stem_channels=64,
    unified_channels=256,
    input_size=(512, 512),
    encoder_layers=2,
    heads=4,
    points=4,
    variant="lrds")


def backbone_config(cfg: ModelConfig) -> BackboneConfig:
    return BackboneConfig(
        stage_blocks=tuple(cfg.stage_blocks),
        stage_channels=tuple(cfg.stage_channels),
        stem_channels=cfg.stem_channels,
        unified_channels=cfg.unified_channels,
        input_size=tuple(cfg.input_size))


def pyramid_shapes(cfg: ModelConfig) -> list:
    """Spatial dims of the five unified levels (strides 4..32, then the
    floor-conv stride-2 downsample of the deepest map)."""
    h, w = cfg.input_size
    shapes = [(h >> s, w >> s) for s in (2, 3, 4, 5)]
    h5 = (shapes[3][0] + 2 - 3) // 2 + 1
    w5 = (shapes[3][1] + 2 - 3) // 2 + 1
    return shapes + [(h5, w5)]


@dataclass
class ModelParams:
    mfe: BackboneParams
    enhance: EnhanceParams
    lde: LDEParams
    scfm: SCFMParams


def build_model(cfg: ModelConfig, seed: int = 0):
    """Deterministic build; returns (params, layer sites for the profiler)."""
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    if cfg.encoder_layers < 0:
        raise ConfigError("encoder_layers must be >= 0")
    rng = np.random.default_rng(seed)
    bcfg = backbone_config(cfg)
    mfe, s1 = build_mfe(rng, bcfg, cfg.variant)
    enhance, s2 = build_enhance(rng, bcfg, cfg.variant)
    lde = make_lde(rng, cfg.unified_channels, levels=5,
                   depth=cfg.encoder_layers, heads=cfg.heads,
                   points=cfg.points, variant=cfg.variant)
    tokens = sum(h * w for h, w in pyramid_shapes(cfg))
    s3 = lde_sites("lde", lde, tokens)
    scfm, s4 = build_scfm(rng, bcfg, cfg.variant)
    params = ModelParams(mfe=mfe, enhance=enhance, lde=lde, scfm=scfm)
    return params, s1 + s2 + s3 + s4


def model_forward(image: Tensor, p: ModelParams,
                  training: bool = False) -> Tensor:
    """[N,3,H,W] image -> [N,1,H,W] crack logits."""
    maps = mfe_forward(image, p.mfe, training)
    levels = feature_enhance(maps, p.enhance, training)
    seq = lde_encode(flatten_pyramid(levels), p.lde)
    return scfm_forward(seq, maps, p.scfm, training)
