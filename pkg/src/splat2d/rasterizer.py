"""Differentiable accumulated-sum rendering of a Gaussian cloud.

Each primitive contributes ``c_i * exp(-0.5 * d^T A_i d)`` at every pixel
center, with ``A_i`` the inverse of the filtered covariance
``Sigma_i + s_i * I`` and ``d`` the offset from the primitive center.
There is no opacity, depth ordering, or normalization; output is not
clamped.  Primitives whose filtered covariance is not PSD or is singular
contribute exactly zero in both passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import GaussianCloud, renderable_mask


@dataclass
class RenderGradients:
    """Gradients of a rendered image contracted with a per-pixel loss gradient.

    ``d_covariance`` is taken w.r.t. the materialized *filtered* covariance
    entries (S'11, S'12, S'22); the S'12 component already sums both mirror
    slots of the symmetric matrix.  Chain-ruling into each parameterization
    is the caller's job (see :func:`splat2d.model.covariance_param_grads`).
    """

    d_position: np.ndarray    # (N, 2)
    d_covariance: np.ndarray  # (N, 3)
    d_color: np.ndarray       # (N, 3)


def _prepare(cloud: GaussianCloud, plane_dims: tuple[int, int], cutoff_sigmas: float):
    """Inverse filtered covariances and inclusive pixel bounding boxes.

    Skipped primitives (non-renderable, or empty box after clipping) get
    the empty box (0, -1, 0, -1).
    """
    height, width = int(plane_dims[0]), int(plane_dims[1])
    if height < 1 or width < 1:
        raise ValueError("plane dimensions must be positive")
    if not cutoff_sigmas > 0.0:
        raise ValueError("cutoff_sigmas must be positive (use inf to disable)")
    e11, e12, e22 = cloud.filtered_entries()
    det = e11 * e22 - e12 * e12
    ok = renderable_mask(e11, e12, e22)
    ok &= np.isfinite(cloud.positions).all(axis=1) & np.isfinite(det)

    inv3 = np.zeros((cloud.n, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        inv3[:, 0] = np.where(ok, e22 / det, 0.0)
        inv3[:, 1] = np.where(ok, -e12 / det, 0.0)
        inv3[:, 2] = np.where(ok, e11 / det, 0.0)

    bbox = np.zeros((cloud.n, 4), dtype=np.int64)
    bbox[:, 1] = -1
    bbox[:, 3] = -1
    if np.isfinite(cutoff_sigmas):
        with np.errstate(invalid="ignore"):
            hx = cutoff_sigmas * np.sqrt(np.where(ok, e11, 0.0))
            hy = cutoff_sigmas * np.sqrt(np.where(ok, e22, 0.0))
        x, y = cloud.positions[:, 0], cloud.positions[:, 1]
        # pixel (r, c) is inside iff |c + 0.5 - x| <= hx and |r + 0.5 - y| <= hy
        r0 = np.maximum(np.ceil(np.where(ok, y - hy, 0.0) - 0.5), 0.0)
        r1 = np.minimum(np.floor(np.where(ok, y + hy, -1.0) - 0.5), height - 1.0)
        c0 = np.maximum(np.ceil(np.where(ok, x - hx, 0.0) - 0.5), 0.0)
        c1 = np.minimum(np.floor(np.where(ok, x + hx, -1.0) - 0.5), width - 1.0)
        inside = ok & (r0 <= r1) & (c0 <= c1)
        bbox[inside, 0] = r0[inside].astype(np.int64)
        bbox[inside, 1] = r1[inside].astype(np.int64)
        bbox[inside, 2] = c0[inside].astype(np.int64)
        bbox[inside, 3] = c1[inside].astype(np.int64)
    else:
        bbox[ok, 0] = 0
        bbox[ok, 1] = height - 1
        bbox[ok, 2] = 0
        bbox[ok, 3] = width - 1
    return inv3, bbox, height, width


def render(
    cloud: GaussianCloud,
    plane_dims: tuple[int, int],
    cutoff_sigmas: float = 6.0,
) -> np.ndarray:
    """Render the cloud to an (H, W, 3) float64 image (not clamped).

    ``cutoff_sigmas`` bounds each primitive's evaluation to an axis-aligned
    box of that many per-axis standard deviations; pass ``np.inf`` to
    evaluate everywhere.
    """
    inv3, bbox, height, width = _prepare(cloud, plane_dims, cutoff_sigmas)
    if cloud.n == 0:
        return np.zeros((height, width, 3))
    return _kernels.forward_kernel(
        cloud.positions, inv3, cloud.colors, bbox, height, width
    )


def render_backward(
    cloud: GaussianCloud,
    plane_dims: tuple[int, int],
    d_loss_d_pixels: np.ndarray,
    cutoff_sigmas: float = 6.0,
) -> RenderGradients:
    """Analytic gradients of :func:`render` contracted with ``d_loss_d_pixels``.

    Must be called with the same plane dimensions and cutoff as the
    matching forward pass.  Skipped primitives get zero gradients.
    """
    inv3, bbox, height, width = _prepare(cloud, plane_dims, cutoff_sigmas)
    d_pixels = np.ascontiguousarray(d_loss_d_pixels, dtype=np.float64)
    if d_pixels.shape != (height, width, 3):
        raise ValueError(
            f"d_loss_d_pixels shape {d_pixels.shape} does not match plane {(height, width, 3)}"
        )
    if cloud.n == 0:
        return RenderGradients(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 3)))
    d_mu, d_cov, d_color = _kernels.backward_kernel(
        cloud.positions, inv3, cloud.colors, bbox, d_pixels
    )
    return RenderGradients(d_position=d_mu, d_covariance=d_cov, d_color=d_color)


def render_naive(cloud: GaussianCloud, plane_dims: tuple[int, int]) -> np.ndarray:
    """Brute-force reference renderer: every primitive at every pixel, no cutoff.

    The testing oracle for :func:`render`; accumulation runs in primitive
    index order like the fast path.
    """
    height, width = int(plane_dims[0]), int(plane_dims[1])
    e11, e12, e22 = cloud.filtered_entries()
    ok = renderable_mask(e11, e12, e22)
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    out = np.zeros((height, width, 3))
    for i in range(cloud.n):
        if not ok[i]:
            continue
        det = e11[i] * e22[i] - e12[i] * e12[i]
        a11, a12, a22 = e22[i] / det, -e12[i] / det, e11[i] / det
        dx = xs[None, :] - cloud.positions[i, 0]
        dy = ys[:, None] - cloud.positions[i, 1]
        q = a11 * dx * dx + 2.0 * a12 * dx * dy + a22 * dy * dy
        g = np.exp(-0.5 * q)
        out += g[:, :, None] * cloud.colors[i]
    return out


def accumulated_weight(
    cloud: GaussianCloud,
    plane_dims: tuple[int, int],
    cutoff_sigmas: float = np.inf,
) -> np.ndarray:
    """Per-pixel sum of footprint values ``sum_i g_i(x)`` as an (H, W) array.

    Useful for coverage diagnostics (hole detection at sparse counts).
    """
    ones = cloud.copy()
    ones.colors = np.ones_like(ones.colors)
    return render(ones, plane_dims, cutoff_sigmas)[:, :, 0]
