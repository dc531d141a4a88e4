"""Compiled ray-driven projector loops.

All coordinates are in pixel-index units: pixel (i, j) has its center at
``(j - c, i - c)`` with ``c = (n - 1) / 2``.  Samples along a ray are taken
at ``t_m = (m - (n_samples - 1) / 2) * step`` and interpolated bilinearly
with zero extension outside the grid.  ``back_project`` visits exactly the
same (ray, sample, corner) triples as ``forward_project`` and is therefore
its exact transpose.
"""

import math

import numpy as np
from numba import njit

# Fixed number of partial images in the adjoint; keeps summation order
# independent of the machine.
ADJOINT_CHUNKS = 8


@njit(cache=True)
def _t_window(s, c, sn, half, step, n_samples):
    # range of sample indices whose bilinear stencil can touch the grid
    tc = (n_samples - 1) / 2.0
    lo = -1e300
    hi = 1e300
    # x(t) = s*c - t*sn, y(t) = s*sn + t*c
    for a, b in ((s * c, -sn), (s * sn, c)):
        if abs(b) < 1e-14:
            if a <= -half or a >= half:
                return 0, -1
        else:
            t1 = (-half - a) / b
            t2 = (half - a) / b
            if t1 > t2:
                t1, t2 = t2, t1
            lo = max(lo, t1)
            hi = min(hi, t2)
    if lo > hi:
        return 0, -1
    m0 = max(0, int(math.floor(lo / step + tc)))
    m1 = min(n_samples - 1, int(math.ceil(hi / step + tc)))
    return m0, m1


@njit(cache=True)
def forward_project(img, cos_t, sin_t, offsets, step, n_samples):
    n = img.shape[0]
    cen = (n - 1) / 2.0
    half = cen + 1.0
    tc = (n_samples - 1) / 2.0
    na = cos_t.shape[0]
    no = offsets.shape[0]
    out = np.zeros((na, no))
    for a in range(na):
        c = cos_t[a]
        sn = sin_t[a]
        for k in range(no):
            s = offsets[k]
            m0, m1 = _t_window(s, c, sn, half, step, n_samples)
            acc = 0.0
            for m in range(m0, m1 + 1):
                t = (m - tc) * step
                fx = s * c - t * sn + cen
                fy = s * sn + t * c + cen
                j0 = int(math.floor(fx))
                i0 = int(math.floor(fy))
                wx = fx - j0
                wy = fy - i0
                if 0 <= i0 < n:
                    if 0 <= j0 < n:
                        acc += (1.0 - wy) * (1.0 - wx) * img[i0, j0]
                    if 0 <= j0 + 1 < n:
                        acc += (1.0 - wy) * wx * img[i0, j0 + 1]
                if 0 <= i0 + 1 < n:
                    if 0 <= j0 < n:
                        acc += wy * (1.0 - wx) * img[i0 + 1, j0]
                    if 0 <= j0 + 1 < n:
                        acc += wy * wx * img[i0 + 1, j0 + 1]
            out[a, k] = acc * step
    return out


@njit(cache=True)
def back_project(sino, n, cos_t, sin_t, offsets, step, n_samples):
    cen = (n - 1) / 2.0
    half = cen + 1.0
    tc = (n_samples - 1) / 2.0
    na = cos_t.shape[0]
    no = offsets.shape[0]
    chunks = min(ADJOINT_CHUNKS, na)
    parts = np.zeros((chunks, n, n))
    for a in range(na):
        buf = parts[a * chunks // na]
        c = cos_t[a]
        sn = sin_t[a]
        for k in range(no):
            v = sino[a, k] * step
            if v == 0.0:
                continue
            s = offsets[k]
            m0, m1 = _t_window(s, c, sn, half, step, n_samples)
            for m in range(m0, m1 + 1):
                t = (m - tc) * step
                fx = s * c - t * sn + cen
                fy = s * sn + t * c + cen
                j0 = int(math.floor(fx))
                i0 = int(math.floor(fy))
                wx = fx - j0
                wy = fy - i0
                if 0 <= i0 < n:
                    if 0 <= j0 < n:
                        buf[i0, j0] += (1.0 - wy) * (1.0 - wx) * v
                    if 0 <= j0 + 1 < n:
                        buf[i0, j0 + 1] += (1.0 - wy) * wx * v
                if 0 <= i0 + 1 < n:
                    if 0 <= j0 < n:
                        buf[i0 + 1, j0] += wy * (1.0 - wx) * v
                    if 0 <= j0 + 1 < n:
                        buf[i0 + 1, j0 + 1] += wy * wx * v
    out = np.zeros((n, n))
    for p in range(chunks):
        out += parts[p]
    return out
