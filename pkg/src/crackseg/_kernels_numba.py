"""Numba-jitted hot kernels: conv window gather/scatter and bilinear sampling.

Importing this module requires numba; `backend` falls back to the pure-numpy
twin (`_kernels_numpy`) when the import fails or when CRACKSEG_BACKEND=numpy.
Loops accumulate in the same order as the numpy path.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, kh, kw, sh, sw, ho, wo):
    n, c, _, _ = xp.shape
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * sh + i
                        for ox in range(wo):
                            cols[b, row, oy * wo + ox] = xp[b, ch, iy, ox * sw + j]
    return cols


@njit(cache=True)
def col2im(cols, n, c, hp, wp, kh, kw, sh, sw, ho, wo):
    gx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * sh + i
                        for ox in range(wo):
                            gx[b, ch, iy, ox * sw + j] += cols[b, row, oy * wo + ox]
    return gx


@njit(cache=True)
def bilinear_fwd(feat, pts):
    n, c, h, w = feat.shape
    q = pts.shape[1]
    out = np.zeros((n, q, c), dtype=feat.dtype)
    for b in range(n):
        for k in range(q):
            x = pts[b, k, 0]
            y = pts[b, k, 1]
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            fx = x - x0
            fy = y - y0
            for dy in range(2):
                yy = y0 + dy
                if yy < 0 or yy >= h:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xx = x0 + dx
                    if xx < 0 or xx >= w:
                        continue
                    wgt = wy * (fx if dx == 1 else 1.0 - fx)
                    for ch in range(c):
                        out[b, k, ch] += wgt * feat[b, ch, yy, xx]
    return out


@njit(cache=True)
def bilinear_bwd(feat, pts, gout):
    n, c, h, w = feat.shape
    q = pts.shape[1]
    gfeat = np.zeros_like(feat)
    gpts = np.zeros_like(pts)
    for b in range(n):
        for k in range(q):
            x = pts[b, k, 0]
            y = pts[b, k, 1]
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            fx = x - x0
            fy = y - y0
            gx = 0.0
            gy = 0.0
            for dy in range(2):
                yy = y0 + dy
                if yy < 0 or yy >= h:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                sy = 1.0 if dy == 1 else -1.0
                for dx in range(2):
                    xx = x0 + dx
                    if xx < 0 or xx >= w:
                        continue
                    wx = fx if dx == 1 else 1.0 - fx
                    sx = 1.0 if dx == 1 else -1.0
                    gdot = 0.0
                    for ch in range(c):
                        g = gout[b, k, ch]
                        gdot += g * feat[b, ch, yy, xx]
                        gfeat[b, ch, yy, xx] += wy * wx * g
                    gx += sx * wy * gdot
                    gy += sy * wx * gdot
            gpts[b, k, 0] = gx
            gpts[b, k, 1] = gy
    return gfeat, gpts
