"""Sequential numba kernels for splat compositing.

Pixels own depth-sorted pair lists built by counting sort: gaussians are
visited in front-to-back order while counting/filling, so each pixel's
slice of the pair array is already sorted.  Every kernel iterates pixels
and pairs in a fixed order, which makes forward and backward results
bit-identical across runs regardless of thread settings.

The only hard gates are the 3-sigma kernel truncation (applied identically
when counting, filling and compositing) and the transmittance cutoff; the
backward pass replays exactly the pairs the forward pass processed.
"""

from __future__ import annotations

import numpy as np
from numba import njit

T_CUTOFF = 1e-4
MAHA_MAX = 9.0


@njit(cache=True)
def count_pairs(bbox, mean2d, conic, width, counts):
    """First counting-sort pass: per-pixel pair counts inside 3 sigma."""
    total = 0
    for i in range(bbox.shape[0]):
        mx = mean2d[i, 0]
        my = mean2d[i, 1]
        a = conic[i, 0]
        b = conic[i, 1]
        c = conic[i, 2]
        for y in range(bbox[i, 2], bbox[i, 3] + 1):
            dy = y - my
            row = y * width
            for x in range(bbox[i, 0], bbox[i, 1] + 1):
                dx = x - mx
                if a * dx * dx + 2.0 * b * dx * dy + c * dy * dy <= MAHA_MAX:
                    counts[row + x] += 1
                    total += 1
    return total


@njit(cache=True)
def fill_pairs(bbox, mean2d, conic, width, offsets, cursor, pair_gauss):
    """Second counting-sort pass: write gaussian indices into pixel slices."""
    for i in range(bbox.shape[0]):
        mx = mean2d[i, 0]
        my = mean2d[i, 1]
        a = conic[i, 0]
        b = conic[i, 1]
        c = conic[i, 2]
        for y in range(bbox[i, 2], bbox[i, 3] + 1):
            dy = y - my
            row = y * width
            for x in range(bbox[i, 0], bbox[i, 1] + 1):
                dx = x - mx
                if a * dx * dx + 2.0 * b * dx * dy + c * dy * dy <= MAHA_MAX:
                    pix = row + x
                    pair_gauss[offsets[pix] + cursor[pix]] = i
                    cursor[pix] += 1


@njit(cache=True)
def composite_forward(
    offsets, pair_gauss, mean2d, conic, color, alpha, z,
    width, height, rgb, depth, alphamap, n_proc,
):
    """Front-to-back alpha compositing; records pairs processed per pixel."""
    for pix in range(width * height):
        x = pix % width
        y = pix // width
        T = 1.0
        r = 0.0
        g = 0.0
        b = 0.0
        d = 0.0
        acc = 0.0
        k = 0
        for s in range(offsets[pix], offsets[pix + 1]):
            i = pair_gauss[s]
            dx = x - mean2d[i, 0]
            dy = y - mean2d[i, 1]
            maha = (
                conic[i, 0] * dx * dx
                + 2.0 * conic[i, 1] * dx * dy
                + conic[i, 2] * dy * dy
            )
            gauss = np.exp(-0.5 * maha)
            w = alpha[i] * gauss
            contrib = T * w
            r += contrib * color[i, 0]
            g += contrib * color[i, 1]
            b += contrib * color[i, 2]
            d += contrib * z[i]
            acc += contrib
            T *= 1.0 - w
            k += 1
            if T < T_CUTOFF:
                break
        rgb[pix, 0] = r
        rgb[pix, 1] = g
        rgb[pix, 2] = b
        depth[pix] = d
        alphamap[pix] = acc
        n_proc[pix] = k


@njit(cache=True)
def composite_backward(
    offsets, pair_gauss, n_proc, mean2d, conic, color, alpha, z,
    d_rgb, d_depth, d_alpha, width,
    g_mean2d, g_conic, g_color, g_alpha, g_z,
    scratch_T, scratch_w, scratch_g,
):
    """Gradients of the composite w.r.t. 2D splat quantities.

    For pair i of a pixel with transmittance T_i and weight w_i, each output
    O = sum_i T_i w_i q_i gives dO/dw_i = T_i q_i - S_i / (1 - w_i) where
    S_i is the suffix sum of contributions after i; computed by a forward
    replay (storing T_i, w_i) then a reverse walk accumulating S_i.
    """
    n_pix = d_depth.shape[0]
    for pix in range(n_pix):
        k = n_proc[pix]
        if k == 0:
            continue
        gr = d_rgb[pix, 0]
        gg = d_rgb[pix, 1]
        gb = d_rgb[pix, 2]
        gd = d_depth[pix]
        ga = d_alpha[pix]
        if gr == 0.0 and gg == 0.0 and gb == 0.0 and gd == 0.0 and ga == 0.0:
            continue
        x = pix % width
        y = pix // width
        start = offsets[pix]
        T = 1.0
        for s in range(start, start + k):
            i = pair_gauss[s]
            dx = x - mean2d[i, 0]
            dy = y - mean2d[i, 1]
            maha = (
                conic[i, 0] * dx * dx
                + 2.0 * conic[i, 1] * dx * dy
                + conic[i, 2] * dy * dy
            )
            gauss = np.exp(-0.5 * maha)
            w = alpha[i] * gauss
            scratch_T[s] = T
            scratch_w[s] = w
            scratch_g[s] = gauss
            T *= 1.0 - w
        S_r = 0.0
        S_g = 0.0
        S_b = 0.0
        S_d = 0.0
        S_a = 0.0
        for s in range(start + k - 1, start - 1, -1):
            i = pair_gauss[s]
            Ti = scratch_T[s]
            w = scratch_w[s]
            gauss = scratch_g[s]
            contrib = Ti * w
            g_color[i, 0] += contrib * gr
            g_color[i, 1] += contrib * gg
            g_color[i, 2] += contrib * gb
            g_z[i] += contrib * gd
            dLdw = Ti * (
                color[i, 0] * gr + color[i, 1] * gg + color[i, 2] * gb
                + z[i] * gd + ga
            ) - (S_r * gr + S_g * gg + S_b * gb + S_d * gd + S_a * ga) / (1.0 - w)
            S_r += contrib * color[i, 0]
            S_g += contrib * color[i, 1]
            S_b += contrib * color[i, 2]
            S_d += contrib * z[i]
            S_a += contrib
            g_alpha[i] += gauss * dLdw
            gp = alpha[i] * dLdw * gauss
            dx_ = x - mean2d[i, 0]
            dy_ = y - mean2d[i, 1]
            a = conic[i, 0]
            b = conic[i, 1]
            c = conic[i, 2]
            g_mean2d[i, 0] += gp * (a * dx_ + b * dy_)
            g_mean2d[i, 1] += gp * (b * dx_ + c * dy_)
            g_conic[i, 0] += -0.5 * gp * dx_ * dx_
            g_conic[i, 1] += -gp * dx_ * dy_
            g_conic[i, 2] += -0.5 * gp * dy_ * dy_


@njit(cache=True)
def zscatter(us, vs, zs, colors, width, height, zbuf, img):
    """Nearest-pixel z-buffer scatter.

    A candidate replaces the current winner only when strictly closer by
    more than 1e-6; callers feed views in ascending index order, so within
    the tolerance the earliest (lowest-index) writer survives.
    """
    for n in range(us.shape[0]):
        x = int(np.floor(us[n] + 0.5))
        y = int(np.floor(vs[n] + 0.5))
        if 0 <= x < width and 0 <= y < height:
            pix = y * width + x
            if zs[n] < zbuf[pix] - 1e-6:
                zbuf[pix] = zs[n]
                img[pix, 0] = colors[n, 0]
                img[pix, 1] = colors[n, 1]
                img[pix, 2] = colors[n, 2]
