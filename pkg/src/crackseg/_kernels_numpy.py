"""Pure-numpy implementations of the hot kernels.

Fallback path used when numba is unavailable or CRACKSEG_BACKEND=numpy.
Each function mirrors its numba twin in `_kernels_numba`, including the
corner accumulation order, so both backends agree on the same inputs.
"""

from __future__ import annotations

import numpy as np


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int,
           ho: int, wo: int) -> np.ndarray:
    """Gather sliding windows of a padded input into columns.

    xp: [N, C, Hp, Wp] already zero-padded. Returns [N, C*kh*kw, ho*wo].
    """
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols: np.ndarray, n: int, c: int, hp: int, wp: int,
           kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add columns back onto the padded input grid (im2col adjoint)."""
    gx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            # window origins never collide within one (i, j) slice
            gx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += cols6[:, :, i, j]
    return gx


def _corners(feat, pts):
    _, _, h, w = feat.shape
    x = pts[:, :, 0]
    y = pts[:, :, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    for dy in (0, 1):
        yy = y0 + dy
        wy = fy if dy == 1 else 1.0 - fy
        iny = (yy >= 0) & (yy < h)
        for dx in (0, 1):
            xx = x0 + dx
            wx = fx if dx == 1 else 1.0 - fx
            valid = iny & (xx >= 0) & (xx < w)
            yield yy, xx, wy, wx, valid, dy, dx


def _gather(feat, yy, xx, valid):
    n, _, h, w = feat.shape
    nidx = np.arange(n)[:, None]
    v = feat[nidx, :, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]  # [N,Q,C]
    return np.where(valid[..., None], v, 0.0)


def bilinear_fwd(feat: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Sample feat [N,C,H,W] at pts [N,Q,2] (x, y pixel coords) -> [N,Q,C].

    Integer coordinates land exactly on pixel centers; corners that fall
    outside the image contribute zero.
    """
    n, c, _, _ = feat.shape
    q = pts.shape[1]
    out = np.zeros((n, q, c), dtype=feat.dtype)
    for yy, xx, wy, wx, valid, _, _ in _corners(feat, pts):
        out += (wy * wx)[..., None] * _gather(feat, yy, xx, valid)
    return out


def bilinear_bwd(feat: np.ndarray, pts: np.ndarray,
                 gout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjoint of bilinear_fwd: grads for feat and for the point coordinates."""
    n, c, h, w = feat.shape
    gfeat = np.zeros_like(feat)
    gpts = np.zeros_like(pts)
    gf2 = gfeat.reshape(n, c, h * w)
    carange = np.arange(c)
    for yy, xx, wy, wx, valid, dy, dx in _corners(feat, pts):
        v = _gather(feat, yy, xx, valid)
        gdot = (gout * v).sum(axis=2)  # [N,Q]
        gpts[:, :, 0] += (1.0 if dx == 1 else -1.0) * wy * gdot
        gpts[:, :, 1] += (1.0 if dy == 1 else -1.0) * wx * gdot
        npt, qpt = np.nonzero(valid)
        if npt.size:
            sp = yy[npt, qpt] * w + xx[npt, qpt]
            np.add.at(gf2, (npt[:, None], carange[None, :], sp[:, None]),
                      ((wy * wx)[npt, qpt])[:, None] * gout[npt, qpt])
    return gfeat, gpts
