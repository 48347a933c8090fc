"""NN ops against independent loop-nest / hand-computed oracles."""

import numpy as np
import pytest

import crackseg.ops as O
from crackseg.autodiff import Tensor, backward, gradient_check
from crackseg.errors import ConfigError, ContractError, ShapeError

from conftest import leaf


# ------------------------------------------------------------------- oracles

def conv_loop_oracle(x, w, b=None, stride=1, padding=0):
    """Naive nested-loop convolution, no im2col."""
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    n, c, h, wd = x.shape
    e, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, e, ho, wo))
    for ni in range(n):
        for ei in range(e):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[ni, ci, oy * sh + i, ox * sw + j] * w[ei, ci, i, j]
                    out[ni, ei, oy, ox] = acc + (b[ei] if b is not None else 0.0)
    return out


def bilinear_oracle(feat, pts):
    """Direct per-point interpolation with zero out-of-bounds."""
    n, c, h, w = feat.shape
    q = pts.shape[1]
    out = np.zeros((n, q, c))
    for ni in range(n):
        for qi in range(q):
            x, y = pts[ni, qi]
            x0, y0 = int(np.floor(x)), int(np.floor(y))
            fx, fy = x - x0, y - y0
            for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
                yy, xx = y0 + dy, x0 + dx
                if 0 <= yy < h and 0 <= xx < w:
                    wgt = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
                    out[ni, qi] += wgt * feat[ni, :, yy, xx]
    return out


def resize_oracle(x, oh, ow):
    """Direct w0*a + w1*b half-pixel resize with edge clamping."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, oh, ow))
    for oy in range(oh):
        sy = (oy + 0.5) * h / oh - 0.5
        y0 = int(np.floor(sy))
        fy = sy - y0
        y0c, y1c = min(max(y0, 0), h - 1), min(max(y0 + 1, 0), h - 1)
        for ox in range(ow):
            sx = (ox + 0.5) * w / ow - 0.5
            x0 = int(np.floor(sx))
            fx = sx - x0
            x0c, x1c = min(max(x0, 0), w - 1), min(max(x0 + 1, 0), w - 1)
            out[:, :, oy, ox] = (
                (1 - fy) * (1 - fx) * x[:, :, y0c, x0c]
                + (1 - fy) * fx * x[:, :, y0c, x1c]
                + fy * (1 - fx) * x[:, :, y1c, x0c]
                + fy * fx * x[:, :, y1c, x1c])
    return out


# ---------------------------------------------------------------------- conv

def test_conv_all_ones_3x3_gives_9():
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    y = O.conv2d(x, w)
    assert y.shape == (1, 1, 1, 1)
    assert y.data[0, 0, 0, 0] == 9.0


def test_conv_1x1_identity_passthrough(rng):
    x = leaf(rng, 2, 1, 4, 5)
    w = Tensor(np.ones((1, 1, 1, 1)))
    assert np.array_equal(O.conv2d(x, w).data, x.data)


def test_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 3, 6, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = O.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
    want = conv_loop_oracle(x, w, b, stride=2, padding=1)
    assert got.shape == want.shape
    assert np.max(np.abs(got.data - want)) < 1e-12


def test_conv_floor_output_size():
    # (6 + 2 - 3) // 2 + 1 = 3, the usual convnet convention
    x = Tensor(np.zeros((1, 1, 6, 6)))
    w = Tensor(np.zeros((1, 1, 3, 3)))
    assert O.conv2d(x, w, stride=2, padding=1).shape == (1, 1, 3, 3)


def test_conv_gradients(rng):
    x = leaf(rng, 1, 2, 4, 4)
    w = leaf(rng, 3, 2, 3, 3, scale=0.5)
    b = leaf(rng, 3)

    def f(x, w, b):
        y = O.conv2d(x, w, b, stride=1, padding=1)
        return (y * y).mean()

    assert gradient_check(f, [x, w, b]) < 1e-6


def test_conv_rejects_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        O.conv2d(leaf(rng, 1, 3, 4, 4), leaf(rng, 2, 4, 3, 3))


def test_conv_rejects_too_small_input(rng):
    with pytest.raises(ConfigError):
        O.conv2d(leaf(rng, 1, 1, 2, 2), leaf(rng, 1, 1, 5, 5))


# ----------------------------------------------------------------- depthwise

def test_depthwise_center_one_is_identity(rng):
    c = 3
    x = leaf(rng, 2, c, 5, 5)
    w = np.zeros((c, 1, 3, 3))
    w[:, 0, 1, 1] = 1.0
    y = O.depthwise_conv2d(x, Tensor(w), padding=1)
    assert np.array_equal(y.data, x.data)


def test_depthwise_ones_kernel_on_constant():
    x = Tensor(np.full((1, 2, 5, 5), 0.5))
    w = Tensor(np.ones((2, 1, 3, 3)))
    y = O.depthwise_conv2d(x, w)  # no padding: every output sums 9 cells
    assert np.allclose(y.data, 4.5, atol=1e-12)


def test_depthwise_equals_block_diagonal_dense(rng):
    c = 4
    x = rng.standard_normal((2, c, 6, 6))
    wd = rng.standard_normal((c, 1, 3, 3))
    dense = np.zeros((c, c, 3, 3))
    for ci in range(c):
        dense[ci, ci] = wd[ci, 0]
    got = O.depthwise_conv2d(Tensor(x), Tensor(wd), stride=2, padding=1)
    want = O.conv2d(Tensor(x), Tensor(dense), stride=2, padding=1)
    assert np.max(np.abs(got.data - want.data)) < 1e-12


def test_depthwise_rectangular_kernel(rng):
    x = leaf(rng, 1, 2, 4, 1)
    w = leaf(rng, 2, 1, 3, 1)
    y = O.depthwise_conv2d(x, w, padding=(1, 0))
    assert y.shape == (1, 2, 4, 1)


def test_depthwise_gradients(rng):
    x = leaf(rng, 1, 3, 4, 4)
    w = leaf(rng, 3, 1, 3, 3, scale=0.5)

    def f(x, w):
        y = O.depthwise_conv2d(x, w, padding=1)
        return (y * y).mean()

    assert gradient_check(f, [x, w]) < 1e-6


# ----------------------------------------------------------------- pointwise

def test_pointwise_identity(rng):
    c = 3
    x = leaf(rng, 2, c, 4, 4)
    w = Tensor(np.eye(c).reshape(c, c, 1, 1))
    assert np.array_equal(O.pointwise_conv2d(x, w).data, x.data)


def test_pointwise_equals_conv2d_k1(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 1, 1))
    b = rng.standard_normal(4)
    a = O.pointwise_conv2d(Tensor(x), Tensor(w), Tensor(b))
    c = O.conv2d(Tensor(x), Tensor(w), Tensor(b))
    assert np.array_equal(a.data, c.data)


def test_pointwise_ones_weight_sums_channels(rng):
    x = rng.standard_normal((1, 3, 2, 2))
    w = Tensor(np.ones((1, 3, 1, 1)))
    y = O.pointwise_conv2d(Tensor(x), w)
    assert np.allclose(y.data[:, 0], x.sum(axis=1), atol=1e-12)


# ---------------------------------------------------------------- batch norm

def _bn_params(c, eps=1e-5):
    return O.BatchNormParams(
        gamma=Tensor(np.ones(c), requires_grad=True),
        beta=Tensor(np.zeros(c), requires_grad=True),
        running_mean=np.zeros(c), running_var=np.ones(c), eps=eps)


def test_batch_norm_training_normalizes(rng):
    x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 2.0 + 1.0)
    y = O.batch_norm(x, _bn_params(3, eps=1e-10), training=True).data
    assert np.all(np.abs(y.mean(axis=(0, 2, 3))) < 1e-9)
    assert np.all(np.abs(y.var(axis=(0, 2, 3)) - 1.0) < 1e-6)


def test_batch_norm_eval_with_unit_stats_is_identity(rng):
    x = leaf(rng, 2, 3, 4, 4)
    y = O.batch_norm(x, _bn_params(3), training=False)
    assert np.allclose(y.data, x.data, rtol=1e-5, atol=1e-7)


def test_batch_norm_zero_gamma_gives_beta(rng):
    p = _bn_params(3)
    p.gamma = Tensor(np.zeros(3))
    p.beta = Tensor(np.array([1.0, -2.0, 0.5]))
    y = O.batch_norm(leaf(rng, 2, 3, 4, 4), p, training=True)
    assert np.array_equal(y.data, np.broadcast_to(
        p.beta.data.reshape(1, 3, 1, 1), (2, 3, 4, 4)))


def test_batch_norm_updates_running_stats(rng):
    x = rng.standard_normal((4, 2, 3, 3)) + 5.0
    p = _bn_params(2)
    O.batch_norm(Tensor(x), p, training=True)
    mu = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    assert np.allclose(p.running_mean, 0.1 * mu, atol=1e-12)
    assert np.allclose(p.running_var, 0.9 + 0.1 * var, atol=1e-12)


def test_batch_norm_empty_batch_rejected():
    with pytest.raises(ContractError):
        O.batch_norm(Tensor(np.zeros((0, 2, 3, 3))), _bn_params(2), training=True)


def test_batch_norm_gradients(rng):
    x = leaf(rng, 2, 2, 3, 3)
    p = _bn_params(2)
    # project onto a fixed direction: mean(bn(x)^2) is nearly constant in x,
    # which starves the finite-difference check of signal
    proj = Tensor(rng.standard_normal((2, 2, 3, 3)))

    def f(x, g, b):
        p.gamma, p.beta = g, b
        y = O.batch_norm(x, p, training=True)
        return (y * proj).sum()

    assert gradient_check(f, [x, p.gamma, p.beta]) < 1e-6


# ---------------------------------------------------------------- layer norm

def test_layer_norm_stats_and_affine(rng):
    x = Tensor(rng.standard_normal((2, 5, 8)) * 3.0)
    g = Tensor(np.ones(8))
    b = Tensor(np.zeros(8))
    y = O.layer_norm(x, g, b, eps=1e-10).data
    assert np.all(np.abs(y.mean(axis=-1)) < 1e-9)
    assert np.all(np.abs(y.var(axis=-1) - 1.0) < 1e-6)
    y2 = O.layer_norm(x, Tensor(np.full(8, 2.0)), Tensor(np.full(8, 1.0))).data
    assert np.allclose(y2, 2.0 * O.layer_norm(x, g, b).data + 1.0, atol=1e-12)


def test_layer_norm_gradients(rng):
    x = leaf(rng, 2, 3, 4)
    g = leaf(rng, 4, shift=1.0, scale=0.2)
    b = leaf(rng, 4, scale=0.2)
    proj = Tensor(rng.standard_normal((2, 3, 4)))

    def f(x, g, b):
        y = O.layer_norm(x, g, b)
        return (y * proj).sum()

    assert gradient_check(f, [x, g, b]) < 1e-6


# ------------------------------------------------------------ nonlinearities

def test_sigmoid_values():
    x = Tensor(np.array([0.0, 20.0, -20.0]))
    y = O.activation(x, "sigmoid").data
    assert y[0] == 0.5
    assert abs(y[1] - 1.0) < 1e-8
    assert abs(y[2]) < 1e-8


def test_relu_values():
    y = O.activation(Tensor(np.array([-1.0, 0.0, 2.5])), "relu").data
    assert np.array_equal(y, [0.0, 0.0, 2.5])


def test_unknown_activation_rejected(rng):
    with pytest.raises(ConfigError):
        O.activation(leaf(rng, 2), "tanhh")


def test_softmax_rows_sum_to_one(rng):
    x = leaf(rng, 3, 7, scale=4.0)
    y = O.softmax(x, axis=-1).data
    assert np.all(np.abs(y.sum(axis=-1) - 1.0) < 1e-14)
    z = O.softmax(Tensor(np.array([[0.0, 0.0]])), axis=-1).data
    assert np.array_equal(z, [[0.5, 0.5]])


def test_softmax_shift_invariant(rng):
    x = rng.standard_normal((2, 5))
    a = O.softmax(Tensor(x), axis=1).data
    b = O.softmax(Tensor(x + 3.0), axis=1).data
    assert np.allclose(a, b, atol=1e-14)


def test_softmax_gradients(rng):
    x = leaf(rng, 2, 4)
    w = Tensor(rng.standard_normal((2, 4)))

    def f(x):
        return (O.softmax(x, axis=1) * w).sum()

    assert gradient_check(f, [x]) < 1e-6


# ------------------------------------------------------------------ sampling

def test_bilinear_integer_coords_exact(rng):
    feat = rng.standard_normal((1, 3, 4, 5))
    pts = np.array([[[2.0, 3.0], [0.0, 0.0], [4.0, 3.0]]])
    out = O.bilinear_sample(Tensor(feat), Tensor(pts)).data
    assert np.array_equal(out[0, 0], feat[0, :, 3, 2])
    assert np.array_equal(out[0, 1], feat[0, :, 0, 0])
    assert np.array_equal(out[0, 2], feat[0, :, 3, 4])


def test_bilinear_midpoint_averages(rng):
    feat = rng.standard_normal((1, 2, 3, 3))
    out = O.bilinear_sample(Tensor(feat), Tensor([[[0.5, 0.0]]])).data
    want = 0.5 * (feat[0, :, 0, 0] + feat[0, :, 0, 1])
    assert np.allclose(out[0, 0], want, atol=1e-15)


def test_bilinear_outside_is_zero(rng):
    feat = rng.standard_normal((2, 2, 3, 3))
    pts = np.array([[[-5.0, 1.0], [1.0, 30.0]], [[-1.0, -1.0], [3.0, 3.0]]])
    out = O.bilinear_sample(Tensor(feat), Tensor(pts)).data
    assert np.array_equal(out, np.zeros_like(out))


def test_bilinear_half_off_edge(rng):
    feat = rng.standard_normal((1, 1, 3, 3))
    out = O.bilinear_sample(Tensor(feat), Tensor([[[-0.5, 1.0]]])).data
    assert np.allclose(out[0, 0, 0], 0.5 * feat[0, 0, 1, 0], atol=1e-15)


def test_bilinear_matches_oracle(rng):
    feat = rng.standard_normal((2, 3, 5, 6))
    pts = rng.uniform(-1.5, 6.5, size=(2, 11, 2))
    got = O.bilinear_sample(Tensor(feat), Tensor(pts)).data
    assert np.max(np.abs(got - bilinear_oracle(feat, pts))) < 1e-13


def test_bilinear_gradients(rng):
    feat = leaf(rng, 1, 2, 4, 4)
    pts = Tensor(rng.uniform(0.2, 2.8, size=(1, 5, 2)), requires_grad=True)

    def f(feat, pts):
        y = O.bilinear_sample(feat, pts)
        return (y * y).mean()

    assert gradient_check(f, [feat, pts]) < 1e-6


def test_bilinear_batch_mismatch_rejected(rng):
    with pytest.raises(ShapeError):
        O.bilinear_sample(leaf(rng, 2, 1, 3, 3), leaf(rng, 1, 4, 2))


# -------------------------------------------------------------------- resize

def test_resize_constant_is_exact():
    x = Tensor(np.full((1, 2, 3, 3), 0.7))
    y = O.resize_bilinear(x, 7, 5).data
    assert np.array_equal(y, np.full((1, 2, 7, 5), 0.7))


def test_upsample_1x1_replicates():
    x = Tensor(np.array([[[[3.25]]]]))
    y = O.upsample2x(x).data
    assert np.array_equal(y, np.full((1, 1, 2, 2), 3.25))


def test_resize_matches_oracle(rng):
    x = rng.standard_normal((2, 2, 3, 4))
    for oh, ow in [(6, 8), (5, 7), (2, 3)]:
        got = O.resize_bilinear(Tensor(x), oh, ow).data
        assert np.max(np.abs(got - resize_oracle(x, oh, ow))) < 1e-12


def test_upsample2x_matches_oracle(rng):
    x = rng.standard_normal((1, 3, 3, 3))
    got = O.upsample2x(Tensor(x)).data
    assert np.max(np.abs(got - resize_oracle(x, 6, 6))) < 1e-12


def test_resize_same_size_passthrough(rng):
    x = leaf(rng, 1, 2, 4, 4)
    assert O.resize_bilinear(x, 4, 4) is x


def test_resize_gradients(rng):
    x = leaf(rng, 1, 2, 3, 3)

    def f(x):
        y = O.resize_bilinear(x, 5, 4)
        return (y * y).mean()

    assert gradient_check(f, [x]) < 1e-6


# ---------------------------------------------------------------- strip pool

def _identity_strip_params(c):
    ch = np.zeros((c, 1, 3, 1))
    ch[:, 0, 1, 0] = 1.0
    cw = np.zeros((c, 1, 1, 3))
    cw[:, 0, 0, 1] = 1.0
    return O.StripPoolParams(
        conv_h=Tensor(ch), conv_w=Tensor(cw),
        proj=Tensor(np.eye(c).reshape(c, c, 1, 1)),
        proj_bias=Tensor(np.zeros(c)))


def test_strip_pool_constant_input_gate():
    v = 0.5
    x = Tensor(np.full((2, 3, 4, 5), v))
    y = O.strip_pool(x, _identity_strip_params(3)).data
    want = v / (1.0 + np.exp(-2.0 * v))
    assert np.allclose(y, want, atol=1e-12)


def test_strip_pool_2x2_worked_example():
    x = np.array([[[[1.0, 3.0], [5.0, 7.0]]]])
    y = O.strip_pool(Tensor(x), _identity_strip_params(1)).data
    # row means [2, 6], col means [3, 5]; gate = sigmoid(row + col)
    pre = np.array([[[[5.0, 7.0], [9.0, 11.0]]]])
    assert np.allclose(y, x / (1.0 + np.exp(-pre)), atol=1e-12)


def test_strip_pool_zero_input_zero_init():
    c = 2
    p = O.StripPoolParams(
        conv_h=Tensor(np.zeros((c, 1, 3, 1))), conv_w=Tensor(np.zeros((c, 1, 1, 3))),
        proj=Tensor(np.zeros((c, c, 1, 1))), proj_bias=Tensor(np.zeros(c)))
    x = Tensor(np.zeros((1, c, 3, 3)))
    assert np.array_equal(O.strip_pool(x, p).data, np.zeros((1, c, 3, 3)))


def test_strip_pool_preserves_shape_and_gates(rng):
    x = leaf(rng, 2, 3, 5, 6)
    p = _identity_strip_params(3)
    y = O.strip_pool(x, p)
    assert y.shape == x.shape
    ratio = y.data / x.data
    assert np.all(ratio > 0.0) and np.all(ratio < 1.0)


def test_strip_pool_gradients(rng):
    c = 2
    x = leaf(rng, 1, c, 3, 3)
    p = O.StripPoolParams(
        conv_h=leaf(rng, c, 1, 3, 1, scale=0.5),
        conv_w=leaf(rng, c, 1, 1, 3, scale=0.5),
        proj=leaf(rng, c, c, 1, 1, scale=0.5),
        proj_bias=leaf(rng, c, scale=0.2))

    def f(x, ch, cw, pj, pb):
        y = O.strip_pool(x, O.StripPoolParams(ch, cw, pj, pb))
        return (y * y).mean()

    assert gradient_check(f, [x, p.conv_h, p.conv_w, p.proj, p.proj_bias]) < 1e-5


# -------------------------------------------------------------------- linear

def test_linear_identity_and_bias(rng):
    x = leaf(rng, 3, 4)
    w = Tensor(np.eye(4))
    assert np.array_equal(O.linear(x, w).data, x.data)
    b = Tensor(np.array([1.0, 2.0, 3.0, 4.0]))
    z = O.linear(Tensor(np.zeros((2, 4))), w, b)
    assert np.array_equal(z.data, np.broadcast_to(b.data, (2, 4)))


def test_linear_matches_manual_matmul(rng):
    x = rng.standard_normal((2, 5, 3))
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(4)
    got = O.linear(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.allclose(got, x @ w.T + b, atol=1e-13)


def test_linear_gradients(rng):
    x = leaf(rng, 2, 3)
    w = leaf(rng, 4, 3)
    b = leaf(rng, 4)

    def f(x, w, b):
        y = O.linear(x, w, b)
        return (y * y).mean()

    assert gradient_check(f, [x, w, b]) < 1e-6
