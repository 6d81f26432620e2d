"""Independent reference implementations used only by the tests.

Everything here is written as plain loops over Python scalars so it shares no
code path with the vectorized library functions it checks.
"""

from __future__ import annotations

import itertools
import math
import numpy as np


def conv3d_loops(x, w, b, stride, padding):
    """Six-plus-nested-loop cross-correlation on [C,T,H,W] input."""
    c_in, t, h, wd = x.shape
    c_out, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    to = (t + 2 * pt - kt) // st + 1
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((c_out, to, ho, wo))
    for o in range(c_out):
        for i in range(to):
            for j in range(ho):
                for k in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(c_in):
                        for a in range(kt):
                            ti = i * st + a - pt
                            if not 0 <= ti < t:
                                continue
                            for bb in range(kh):
                                hi = j * sh + bb - ph
                                if not 0 <= hi < h:
                                    continue
                                for d in range(kw):
                                    wi = k * sw + d - pw
                                    if 0 <= wi < wd:
                                        acc += x[c, ti, hi, wi] * w[o, c, a, bb, d]
                    out[o, i, j, k] = acc
    return out


def conv2d_true_loops(x, w):
    """Valid-region true convolution sum_{m,n} x(i-m, j-n) w(m, n) on [C,H,W] input.

    Output index (i, j) runs over i in [kh-1, H-1], j in [kw-1, W-1] and is
    reported shifted to start at zero.
    """
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    out = np.zeros((c_out, h - kh + 1, wd - kw + 1))
    for o in range(c_out):
        for i in range(kh - 1, h):
            for j in range(kw - 1, wd):
                acc = 0.0
                for c in range(c_in):
                    for m in range(kh):
                        for n in range(kw):
                            acc += x[c, i - m, j - n] * w[o, c, m, n]
                out[o, i - kh + 1, j - kw + 1] = acc
    return out


def conv3d_true_loops(x, w):
    c_in, t, h, wd = x.shape
    c_out, _, kt, kh, kw = w.shape
    out = np.zeros((c_out, t - kt + 1, h - kh + 1, wd - kw + 1))
    for o in range(c_out):
        for s in range(kt - 1, t):
            for i in range(kh - 1, h):
                for j in range(kw - 1, wd):
                    acc = 0.0
                    for c in range(c_in):
                        for k in range(kt):
                            for m in range(kh):
                                for n in range(kw):
                                    acc += x[c, s - k, i - m, j - n] * w[o, c, k, m, n]
                    out[o, s - kt + 1, i - kh + 1, j - kw + 1] = acc
    return out


def finite_difference(f, arrays: dict, step: float = 1e-5) -> dict:
    """Central differences of scalar f() with respect to every entry of every array (mutated in place)."""
    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + step
            fp = f()
            a[idx] = orig - step
            fm = f()
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * step)
        out[name] = g
    return out


# -- CLAHE -----------------------------------------------------------------------

def clahe_scalar(img, tiles_x, tiles_y, clip_limit):
    """Per-pixel CLAHE reference built from lists and Python floats."""
    h, w = len(img), len(img[0])
    ey = [(i * h) // tiles_y for i in range(tiles_y + 1)]
    ex = [(j * w) // tiles_x for j in range(tiles_x + 1)]
    luts = {}
    for i in range(tiles_y):
        for j in range(tiles_x):
            hist = [0.0] * 256
            n = 0
            for r in range(ey[i], ey[i + 1]):
                for c in range(ex[j], ex[j + 1]):
                    hist[int(img[r][c])] += 1.0
                    n += 1
            if math.isfinite(clip_limit):
                limit = clip_limit * n / 256
                excess = math.fsum(v - limit for v in hist if v > limit)
                if excess != 0.0:
                    hist = [min(v, limit) + excess / 256 for v in hist]
            cdf, run = [], 0.0
            for v in hist:
                run += v
                cdf.append(run)
            first = next(k for k, v in enumerate(hist) if v > 0)
            cmin = cdf[first]
            if n - cmin <= 0:
                lut = [float(v) for v in range(256)]
            else:
                lut = [min(max(math.floor(255.0 * (cv - cmin) / (n - cmin) + 0.5), 0.0), 255.0) for cv in cdf]
            luts[i, j] = lut
    cy = [(ey[i] + ey[i + 1] - 1) / 2.0 for i in range(tiles_y)]
    cx = [(ex[j] + ex[j + 1] - 1) / 2.0 for j in range(tiles_x)]

    def locate(p, centers):
        if p <= centers[0]:
            return 0, 0, 0.0
        if p >= centers[-1]:
            k = len(centers) - 1
            return k, k, 0.0
        k = max(i for i in range(len(centers)) if centers[i] <= p)
        return k, k + 1, (p - centers[k]) / (centers[k + 1] - centers[k])

    out = [[0] * w for _ in range(h)]
    for r in range(h):
        r0, r1, dr = locate(float(r), cy)
        for c in range(w):
            c0, c1, dc = locate(float(c), cx)
            d = int(img[r][c])
            f_ul, f_bl = luts[r0, c0][d], luts[r1, c0][d]
            f_ur, f_br = luts[r0, c1][d], luts[r1, c1][d]
            f = (1.0 - dc) * ((1.0 - dr) * f_ul + dr * f_bl) + dc * ((1.0 - dr) * f_ur + dr * f_br)
            out[r][c] = int(min(max(math.floor(f + 0.5), 0), 255))
    return out


def equalize_scalar(img):
    """Textbook global histogram equalization."""
    flat = [int(v) for row in img for v in row]
    n = len(flat)
    counts = [0] * 256
    for v in flat:
        counts[v] += 1
    cdf, run = [], 0
    for c in counts:
        run += c
        cdf.append(run)
    cmin = next(cdf[v] for v in range(256) if counts[v])
    if n == cmin:
        return [list(map(int, row)) for row in img]
    return [[math.floor(255.0 * (cdf[int(v)] - cmin) / (n - cmin) + 0.5) for v in row] for row in img]


# -- NMS -------------------------------------------------------------------------

def box_iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def nms_exhaustive(boxes, scores, thr):
    """Enumerate all subsets; return the unique one that is a fixed point of greedy suppression.

    The priority order is score descending, then lower index first; a box
    survives iff no higher-priority survivor overlaps it by IoU >= thr.
    """
    n = len(boxes)
    prio = sorted(range(n), key=lambda i: (-scores[i], i))
    rank = {i: r for r, i in enumerate(prio)}
    found = []
    for mask in itertools.product((False, True), repeat=n):
        keep = [i for i in range(n) if mask[i]]
        ok = True
        for i in range(n):
            blocked = any(rank[j] < rank[i] and box_iou(boxes[i], boxes[j]) >= thr for j in keep)
            if mask[i] == blocked:
                ok = False
                break
        if ok:
            found.append(sorted(keep, key=lambda i: rank[i]))
    assert len(found) == 1, found
    return found[0]


# -- flow ------------------------------------------------------------------------

def smooth_texture(seed, h=64, w=64, dx=0.0, dy=0.0, waves=6):
    """Sum of low-frequency sinusoids sampled at (x - dx, y - dy), 0-255 scale."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xx, yy = xx - dx, yy - dy
    f = np.full((h, w), 128.0)
    for _ in range(waves):
        kx, ky = rng.uniform(-0.25, 0.25, size=2)
        f += rng.uniform(8, 20) * np.sin(kx * xx + ky * yy + rng.uniform(0, 2 * np.pi))
    return f


def stencil_gradients(a, b):
    """Loop version: central differences inside, one-sided at borders, averaged over a and b."""
    h, w = len(a), len(a[0])

    def d(img, r, c, axis):
        if axis == 1:
            if w == 1:
                return 0.0
            if c == 0:
                return img[r][1] - img[r][0]
            if c == w - 1:
                return img[r][w - 1] - img[r][w - 2]
            return (img[r][c + 1] - img[r][c - 1]) / 2.0
        if h == 1:
            return 0.0
        if r == 0:
            return img[1][c] - img[0][c]
        if r == h - 1:
            return img[h - 1][c] - img[h - 2][c]
        return (img[r + 1][c] - img[r - 1][c]) / 2.0

    ix = [[(d(a, r, c, 1) + d(b, r, c, 1)) / 2.0 for c in range(w)] for r in range(h)]
    iy = [[(d(a, r, c, 0) + d(b, r, c, 0)) / 2.0 for c in range(w)] for r in range(h)]
    it = [[b[r][c] - a[r][c] for c in range(w)] for r in range(h)]
    return np.array(ix), np.array(iy), np.array(it)
