"""Backbone stage ladder and the five-level feature pyramid."""

import numpy as np
import pytest

import crackseg.ops as O
from crackseg.autodiff import Tensor, backward, gradient_check, tsum
from crackseg.backbone import (BackboneConfig, build_enhance, build_mfe,
                               block_forward, feature_enhance, mfe_forward,
                               validate_backbone_config)
from crackseg.blocks import conv_realization_forward
from crackseg.errors import ConfigError
from crackseg.params import iter_params

pytestmark = pytest.mark.filterwarnings("ignore::crackseg.errors.BottleneckWarning")

TOY = BackboneConfig(stage_blocks=(1, 1, 1, 1), stage_channels=(16, 32, 64, 128),
                     stem_channels=8, unified_channels=32, input_size=(64, 64))


def _image(rng, n=2, hw=(64, 64)):
    return Tensor(rng.normal(size=(n, 3, *hw)))


# ------------------------------------------------------------------ shapes

def test_stage_shape_ladder(rng):
    p, _ = build_mfe(rng, TOY)
    maps = mfe_forward(_image(rng), p, training=True)
    assert [m.shape for m in maps] == [
        (2, 16, 16, 16), (2, 32, 8, 8), (2, 64, 4, 4), (2, 128, 2, 2)]


def test_enhance_level_shapes(rng):
    p, _ = build_mfe(rng, TOY)
    e, _ = build_enhance(rng, TOY)
    maps = mfe_forward(_image(rng), p, training=True)
    levels = feature_enhance(maps, e, training=True)
    assert [lv.shape for lv in levels] == [
        (2, 32, 16, 16), (2, 32, 8, 8), (2, 32, 4, 4), (2, 32, 2, 2),
        (2, 32, 1, 1)]


def test_deeper_config_keeps_widths(rng):
    cfg = BackboneConfig(stage_blocks=(2, 2, 2, 2),
                         stage_channels=(16, 32, 64, 128),
                         stem_channels=8, unified_channels=32,
                         input_size=(64, 64))
    p, _ = build_mfe(rng, cfg)
    maps = mfe_forward(_image(rng, n=1), p, training=True)
    assert [m.shape for m in maps] == [
        (1, 16, 16, 16), (1, 32, 8, 8), (1, 64, 4, 4), (1, 128, 2, 2)]
    assert all(len(blocks) == 2 for blocks in p.stages)
    # only the first block of a stage strides or changes width
    for blocks in p.stages:
        assert blocks[0].shortcut is not None
        assert blocks[1].shortcut is None


def test_zero_input_stays_zero(rng):
    p, _ = build_mfe(rng, TOY)
    e, _ = build_enhance(rng, TOY)
    maps = mfe_forward(Tensor(np.zeros((1, 3, 64, 64))), p, training=True)
    for m in maps:
        assert np.array_equal(m.data, np.zeros(m.shape))
    for lv in feature_enhance(maps, e, training=True):
        assert np.array_equal(lv.data, np.zeros(lv.shape))


# ----------------------------------------------------------------- enhance

def test_enhance_identity_when_widths_match(rng):
    # stage 2 width equals the unified width; identity weights on its
    # norm-free projection must pass the stage map through untouched
    p, _ = build_mfe(rng, TOY, variant="original")
    e, _ = build_enhance(rng, TOY, variant="original")
    proj = e.projections[1]
    proj.dense.weight.data[:] = np.eye(32)[:, :, None, None]
    proj.dense.bias.data[:] = 0.0
    maps = mfe_forward(_image(rng, n=1), p, training=True)
    levels = feature_enhance(maps, e, training=True)
    assert np.array_equal(levels[1].data, maps[1].data)


def test_enhance_wiring_matches_per_level_projection(rng):
    p, _ = build_mfe(rng, TOY)
    e, _ = build_enhance(rng, TOY)
    maps = mfe_forward(_image(rng, n=1), p, training=False)
    levels = feature_enhance(maps, e, training=False)
    for i in range(4):
        solo = conv_realization_forward(maps[i], e.projections[i])
        assert np.array_equal(levels[i].data, solo.data)
    down = conv_realization_forward(maps[3], e.downsample)
    assert np.array_equal(levels[4].data, down.data)


# ------------------------------------------------------------- validation

def test_rejects_indivisible_input(rng):
    p, _ = build_mfe(rng, TOY)
    with pytest.raises(ConfigError):
        mfe_forward(Tensor(np.zeros((1, 3, 48, 64))), p)
    with pytest.raises(ConfigError):
        mfe_forward(Tensor(np.zeros((3, 64, 64))), p)


@pytest.mark.parametrize("bad", [
    dict(stage_channels=(16, 32, 32, 128)),   # not strictly increasing
    dict(stage_blocks=(0, 1, 1, 1)),          # empty stage
    dict(stage_blocks=(1, 1, 1)),             # wrong stage count
    dict(input_size=(48, 64)),                # not divisible by 32
    dict(input_size=(16, 16)),                # too small
    dict(stem_channels=0),
])
def test_config_validation(bad):
    from dataclasses import replace
    with pytest.raises(ConfigError):
        validate_backbone_config(replace(TOY, **bad))


# ---------------------------------------------------------------- variants

@pytest.mark.parametrize("variant", ["original", "ds", "lr", "lrds"])
def test_variant_drop_in_shapes(rng, variant):
    cfg = BackboneConfig(stage_blocks=(1, 1, 1, 1),
                         stage_channels=(4, 8, 16, 32), stem_channels=4,
                         unified_channels=8, input_size=(64, 64))
    p, _ = build_mfe(rng, cfg, variant=variant)
    maps = mfe_forward(_image(rng, n=1), p, training=True)
    assert [m.shape for m in maps] == [
        (1, 4, 16, 16), (1, 8, 8, 8), (1, 16, 4, 4), (1, 32, 2, 2)]


# ---------------------------------------------------------------- residual

def test_block_reduces_to_relu_identity_when_main_is_zeroed(rng):
    cfg = BackboneConfig(stage_blocks=(2, 1, 1, 1),
                         stage_channels=(8, 16, 32, 64), stem_channels=4,
                         unified_channels=8, input_size=(64, 64))
    p, _ = build_mfe(rng, cfg)
    blk = p.stages[0][1]           # stride 1, same width: shortcut is None
    assert blk.shortcut is None
    for _, t in iter_params(blk.main):
        t.data[:] = 0.0
    x = Tensor(rng.normal(size=(2, 8, 16, 16)))
    y = block_forward(x, blk, training=True)
    assert np.array_equal(y.data, np.maximum(x.data, 0.0))


# --------------------------------------------------------------- gradients

def test_gradients_reach_the_stem(rng):
    cfg = BackboneConfig(stage_blocks=(1, 1, 1, 1),
                         stage_channels=(4, 8, 16, 32), stem_channels=4,
                         unified_channels=8, input_size=(64, 64))
    p, _ = build_mfe(rng, cfg)
    x = Tensor(rng.normal(size=(1, 3, 64, 64)))
    proj = rng.normal(size=(1, 32, 2, 2))  # fixed head direction

    def head(*_):
        out = mfe_forward(x, p, training=True)[3]
        return tsum(out * Tensor(proj))

    inputs = [p.stem.lrds.reduce.weight,
              p.stages[3][0].main.lrds.norm_e.beta]
    assert gradient_check(head, inputs) < 1e-4


def test_every_backbone_parameter_gets_gradient(rng):
    p, _ = build_mfe(rng, TOY)
    x = _image(rng, n=1)
    out = mfe_forward(x, p, training=True)
    loss = sum((tsum(m * m) for m in out[1:]), tsum(out[0] * out[0]))
    backward(loss)
    dead = [path for path, t in iter_params(p)
            if t.grad is None or not np.any(t.grad)]
    assert dead == []
