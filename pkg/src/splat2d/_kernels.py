"""Numba kernels for the accumulated-sum rasterizer.

Determinism contract: the forward pass accumulates each pixel's sum over
primitives in ascending index order inside a single thread, and the
backward pass gathers each primitive's gradient over its own bounding box
in row-major order inside a single thread.  Results are therefore
bit-identical for any worker count, not just for one worker.
"""

import os

import numpy as np

# prefer OpenMP over the mis-versioned TBB this image ships (avoids a
# NumbaWarning at first parallel launch); users can still override
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from numba import njit, prange


@njit(cache=True, parallel=True)
def forward_kernel(mu, inv3, color, bbox, height, width):
    """Accumulate color[i] * exp(-0.5 * d^T A_i d) over bounding boxes.

    mu: (N, 2) centers as (x, y); inv3: (N, 3) inverse filtered covariance
    entries (A11, A12, A22); bbox: (N, 4) inclusive (r0, r1, c0, c1) with
    r0 > r1 marking skipped primitives.
    """
    n = mu.shape[0]
    out = np.zeros((height, width, 3))

    counts = np.zeros(height, np.int64)
    for i in range(n):
        r0, r1 = bbox[i, 0], bbox[i, 1]
        for r in range(r0, r1 + 1):
            counts[r] += 1
    offsets = np.zeros(height + 1, np.int64)
    for r in range(height):
        offsets[r + 1] = offsets[r] + counts[r]
    bins = np.empty(offsets[height], np.int64)
    cursor = offsets[:height].copy()
    for i in range(n):
        r0, r1 = bbox[i, 0], bbox[i, 1]
        for r in range(r0, r1 + 1):
            bins[cursor[r]] = i
            cursor[r] += 1

    for r in prange(height):
        row = out[r]
        py = r + 0.5
        for k in range(offsets[r], offsets[r + 1]):
            i = bins[k]
            mx = mu[i, 0]
            a11 = inv3[i, 0]
            a12 = inv3[i, 1]
            c0v = color[i, 0]
            c1v = color[i, 1]
            c2v = color[i, 2]
            dy = py - mu[i, 1]
            b_dy = 2.0 * a12 * dy
            e_dy = inv3[i, 2] * dy * dy
            for c in range(bbox[i, 2], bbox[i, 3] + 1):
                dx = c + 0.5 - mx
                g = np.exp(-0.5 * (a11 * dx * dx + b_dy * dx + e_dy))
                row[c, 0] += c0v * g
                row[c, 1] += c1v * g
                row[c, 2] += c2v * g
    return out


@njit(cache=True, parallel=True)
def backward_kernel(mu, inv3, color, bbox, d_pixels):
    """Gradients of the forward pass contracted with d_pixels.

    Returns (d_mu, d_cov, d_color) where d_cov holds derivatives w.r.t.
    the filtered covariance entries as (S11, S12, S22) with the S12 slot
    being the derivative w.r.t. the single symmetric off-diagonal
    parameter (both mirror entries summed).
    """
    n = mu.shape[0]
    d_mu = np.zeros((n, 2))
    d_cov = np.zeros((n, 3))
    d_color = np.zeros((n, 3))
    for i in prange(n):
        r0, r1 = bbox[i, 0], bbox[i, 1]
        if r0 > r1:
            continue
        mx = mu[i, 0]
        my = mu[i, 1]
        a11 = inv3[i, 0]
        a12 = inv3[i, 1]
        a22 = inv3[i, 2]
        c0v = color[i, 0]
        c1v = color[i, 1]
        c2v = color[i, 2]
        s_col0 = 0.0
        s_col1 = 0.0
        s_col2 = 0.0
        s_mu0 = 0.0
        s_mu1 = 0.0
        s_c0 = 0.0
        s_c1 = 0.0
        s_c2 = 0.0
        for r in range(r0, r1 + 1):
            dy = r + 0.5 - my
            drow = d_pixels[r]
            for c in range(bbox[i, 2], bbox[i, 3] + 1):
                dx = c + 0.5 - mx
                g = np.exp(-0.5 * (a11 * dx * dx + 2.0 * a12 * dx * dy + a22 * dy * dy))
                p0 = drow[c, 0]
                p1 = drow[c, 1]
                p2 = drow[c, 2]
                s_col0 += p0 * g
                s_col1 += p1 * g
                s_col2 += p2 * g
                t = (p0 * c0v + p1 * c1v + p2 * c2v) * g
                u0 = a11 * dx + a12 * dy
                u1 = a12 * dx + a22 * dy
                s_mu0 += t * u0
                s_mu1 += t * u1
                s_c0 += t * u0 * u0
                s_c1 += t * u0 * u1
                s_c2 += t * u1 * u1
        d_color[i, 0] = s_col0
        d_color[i, 1] = s_col1
        d_color[i, 2] = s_col2
        d_mu[i, 0] = s_mu0
        d_mu[i, 1] = s_mu1
        d_cov[i, 0] = 0.5 * s_c0
        d_cov[i, 1] = s_c1
        d_cov[i, 2] = 0.5 * s_c2
    return d_mu, d_cov, d_color
