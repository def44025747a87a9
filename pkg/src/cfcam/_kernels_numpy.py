"""Pure-numpy implementations of the hot kernels.

These are the reference/fallback path; `_kernels_numba` mirrors every
function with an @njit version. Both must agree numerically (same formula,
possibly different summation order). Dispatch lives in `backend`.
"""

import numpy as np


def gaussian_filter_axis0(x, kernel):
    """Truncated-kernel convolution along axis 0, renormalized per row.

    At positions where the kernel sticks out of bounds, the weights of the
    in-bounds taps are rescaled to sum to 1. Columns are independent.
    """
    n, _ = x.shape
    r = (kernel.shape[0] - 1) // 2
    out = np.zeros_like(x)
    wsum = np.zeros(n, dtype=x.dtype)
    for u in range(-r, r + 1):
        w = kernel[u + r]
        lo = max(0, -u)
        hi = min(n, n - u)
        if lo >= hi:
            continue
        out[lo:hi] += w * x[lo + u:hi + u]
        wsum[lo:hi] += w
    return out / wsum[:, None]


def pairwise_euclidean(x):
    """Exact pairwise Euclidean distances between rows (no Gram trick)."""
    n = x.shape[0]
    d = np.zeros((n, n), dtype=x.dtype)
    for i in range(n):
        diff = x[i + 1:] - x[i]
        di = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        d[i, i + 1:] = di
        d[i + 1:, i] = di
    return d


def dbscan_labels(dist, eps, minpts):
    """Label points by DBSCAN over a precomputed distance matrix.

    Returns int64 labels, -1 for noise. Clusters are seeded in ascending
    index order and expanded breadth-first with neighbors visited in
    ascending index order, so border points always join the cluster whose
    expansion reaches them first.
    """
    n = dist.shape[0]
    neighbor = dist <= eps
    core = neighbor.sum(axis=1) >= minpts
    labels = np.full(n, -1, dtype=np.int64)
    cid = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cid
        queue = [i]
        while queue:
            p = queue.pop(0)
            if not core[p]:
                continue
            for q in np.nonzero(neighbor[p])[0]:
                if labels[q] == -1:
                    labels[q] = cid
                    queue.append(q)
        cid += 1
    return labels


def bilinear_resize(a, out_h, out_w):
    """Bilinear resampling with half-pixel centers (align_corners=False)."""
    h, w = a.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = ys - y0
    fx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    a00 = a[np.ix_(y0c, x0c)]
    a01 = a[np.ix_(y0c, x1c)]
    a10 = a[np.ix_(y1c, x0c)]
    a11 = a[np.ix_(y1c, x1c)]
    top = a00 * (1.0 - fx) + a01 * fx
    bot = a10 * (1.0 - fx) + a11 * fx
    return top * (1.0 - fy)[:, None] + bot * fy[:, None]


def conv2d(x, w, b, sh, sw, pt, pl, pb, pr):
    """Grouped=1, dilation=1 2-D convolution (NCHW) via im2col + matmul."""
    n, c, h, wid = x.shape
    m, _, kh, kw = w.shape
    oh = (h + pt + pb - kh) // sh + 1
    ow = (wid + pl + pr - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = np.empty((n, c * kh * kw, oh * ow), dtype=x.dtype)
    idx = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, ci, i:i + (oh - 1) * sh + 1:sh, j:j + (ow - 1) * sw + 1:sw]
                cols[:, idx] = patch.reshape(n, -1)
                idx += 1
    out = np.matmul(w.reshape(m, -1), cols) + b[:, None]
    return out.reshape(n, m, oh, ow)


def maxpool2d(x, kh, kw, sh, sw, pt, pl, pb, pr):
    """2-D max pooling (NCHW); padded cells never win (filled with -inf)."""
    n, c, h, w = x.shape
    oh = (h + pt + pb - kh) // sh + 1
    ow = (w + pl + pr - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)),
                constant_values=-np.inf)
    out = np.full((n, c, oh, ow), -np.inf, dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + (oh - 1) * sh + 1:sh, j:j + (ow - 1) * sw + 1:sw]
            np.maximum(out, patch, out=out)
    return out
