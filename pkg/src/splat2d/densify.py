"""Distortion-driven densification: sparse init, top-k growing, PSD pruning.

The cloud starts at half its budget, then each growth event spends half of
the remaining allowance on new primitives placed at the pixels where the
reconstruction is currently worst.  Pruning removes primitives whose
filtered covariance is not PSD or is singular; the renderer already skips
exactly those, so pruning never changes the rendered image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import caf
from .model import GaussianCloud, renderable_mask


@dataclass
class DistortionMap:
    """Per-pixel scalar reconstruction error with top-k extraction."""

    values: np.ndarray  # (H, W) float64, >= 0

    @classmethod
    def from_images(cls, gt: np.ndarray, rendered: np.ndarray) -> "DistortionMap":
        """Mean absolute error over the three channels (L1 per pixel)."""
        gt = np.asarray(gt, dtype=np.float64)
        rendered = np.asarray(rendered, dtype=np.float64)
        if gt.shape != rendered.shape:
            raise ValueError(f"image shapes differ: {gt.shape} vs {rendered.shape}")
        return cls(values=np.abs(gt - rendered).mean(axis=2))

    def top_k(self, k: int) -> np.ndarray:
        """(k, 2) array of (row, col) pixel coordinates in non-increasing
        distortion order; ties broken by ascending row-major index."""
        height, width = self.values.shape
        if k < 0 or k > height * width:
            raise ValueError(f"k={k} outside [0, {height * width}]")
        flat = self.values.ravel()
        # stable sort keeps ascending row-major order among equal values
        idx = np.argsort(-flat, kind="stable")[:k]
        return np.column_stack(np.divmod(idx, width)).astype(np.int64)


def _sample_cov_params(rng: np.random.Generator, k: int, variant: str) -> np.ndarray:
    """Creation-time covariance draws, mirrored across parameterizations.

    Direct samples the matrix entries (diagonal in [0.5, 1), off-diagonal
    in [0, 1), possibly indefinite); the factored variants apply the same
    ranges to their factor entries.
    """
    u = rng.random((k, 3))
    out = np.empty((k, 3))
    if variant in ("direct", "cholesky"):
        out[:, 0] = 0.5 + 0.5 * u[:, 0]
        out[:, 1] = u[:, 1]
        out[:, 2] = 0.5 + 0.5 * u[:, 2]
    elif variant == "rs":
        out[:, 0] = 2.0 * np.pi * u[:, 0]
        out[:, 1] = 0.5 + 0.5 * u[:, 1]
        out[:, 2] = 0.5 + 0.5 * u[:, 2]
    else:
        raise ValueError(f"unknown covariance variant: {variant!r}")
    return out


def sparse_init(
    max_budget: int,
    height: int,
    width: int,
    rng: np.random.Generator,
    variant: str = "direct",
    count: int | None = None,
    caf_enabled: bool = True,
    caf_alpha: float = caf.DEFAULT_ALPHA,
    constant_filter_variance: float = caf.CONSTANT_BASELINE_VARIANCE,
) -> GaussianCloud:
    """Random initial cloud of ``count`` primitives (default: half the budget).

    Positions are uniform over the image plane, colors start at zero, and
    covariances are sampled per :func:`_sample_cov_params`.  Deterministic
    given the generator state.
    """
    if max_budget < 2:
        raise ValueError("max_budget must be at least 2")
    n = max_budget // 2 if count is None else count
    if not 1 <= n <= max_budget:
        raise ValueError(f"initial count {n} outside [1, {max_budget}]")
    positions = rng.random((n, 2)) * np.array([width, height], dtype=np.float64)
    cov_params = _sample_cov_params(rng, n, variant)
    if caf_enabled:
        s = caf.filter_variance_for_new(height, width, n, caf_alpha)
    else:
        s = constant_filter_variance
    return GaussianCloud(
        variant=variant,
        positions=positions,
        cov_params=cov_params,
        colors=np.zeros((n, 3)),
        filter_variances=np.full(n, s),
        max_budget=max_budget,
    )


def growth_count(n_current: int, max_budget: int) -> int:
    """Scheduler: floor of half the remaining allowance."""
    if n_current > max_budget:
        raise ValueError("cloud exceeds its budget")
    return (max_budget - n_current) // 2


def grow(
    cloud: GaussianCloud,
    gt: np.ndarray,
    rendered: np.ndarray,
    rng: np.random.Generator,
    caf_enabled: bool = True,
    caf_alpha: float = caf.DEFAULT_ALPHA,
    constant_filter_variance: float = caf.CONSTANT_BASELINE_VARIANCE,
) -> GaussianCloud:
    """One growth event: place new primitives at the worst-reconstructed pixels.

    New primitives sit at the top-k distortion pixel centers, inherit the
    ground-truth color there, and draw covariances like at init time.
    Returns the grown cloud (the input is not modified); a zero allowance
    is a no-op.
    """
    height, width = gt.shape[0], gt.shape[1]
    k = min(growth_count(cloud.n, cloud.max_budget), height * width)
    if k == 0:
        return cloud
    coords = DistortionMap.from_images(gt, rendered).top_k(k)
    positions = coords[:, ::-1].astype(np.float64) + 0.5  # (x, y) pixel centers
    colors = np.asarray(gt, dtype=np.float64)[coords[:, 0], coords[:, 1]]
    cov_params = _sample_cov_params(rng, k, cloud.variant)
    if caf_enabled:
        s = caf.filter_variance_for_new(height, width, cloud.n + k, caf_alpha)
    else:
        s = constant_filter_variance
    return cloud.extend(positions, cov_params, colors, np.full(k, s))


def keep_mask(cloud: GaussianCloud) -> np.ndarray:
    """Mask of primitives that survive pruning.

    A primitive is kept iff its materialized *filtered* covariance passes
    the PSD test with strictly positive determinant; everything else
    already contributes zero to rendering.
    """
    e11, e12, e22 = cloud.filtered_entries()
    return renderable_mask(e11, e12, e22)


def prune(cloud: GaussianCloud) -> tuple[GaussianCloud, int]:
    """Drop invalid primitives, preserving relative order.

    Returns the compacted cloud and the number of removed primitives.
    """
    mask = keep_mask(cloud)
    removed = int(cloud.n - mask.sum())
    if removed == 0:
        return cloud, 0
    return cloud.take(mask), removed
