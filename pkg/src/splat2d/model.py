"""Core domain types: Gaussian clouds, covariance parameterizations, run config.

Conventions used throughout the package:

* Images are ``(H, W, 3)`` float arrays, channels nominally in ``[0, 1]``.
  Training math runs in float64.
* Positions are continuous pixel coordinates ``(x, y)`` with ``x`` along
  image columns in ``[0, W)`` and ``y`` along rows in ``[0, H)``.  The
  center of pixel ``(row, col)`` is ``(col + 0.5, row + 0.5)``.
* Covariances are 2x2 symmetric matrices in pixel^2 units, stored as a
  3-vector whose meaning depends on the parameterization variant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Iterator

import numpy as np

VARIANTS = ("direct", "cholesky", "rs")


def materialize_covariance(params: np.ndarray, variant: str) -> np.ndarray:
    """Materialize 2x2 symmetric covariance matrices from stored parameters.

    Args:
        params: ``(3,)`` or ``(N, 3)`` array.  Meaning per variant:
            ``direct``   -> (S11, S12, S22), the matrix entries themselves;
            ``cholesky`` -> (L11, L21, L22), lower-triangular factor;
            ``rs``       -> (theta, s1, s2), rotation angle plus axis scales.
        variant: one of :data:`VARIANTS`.

    Returns:
        ``(2, 2)`` or ``(N, 2, 2)`` symmetric matrices.  ``cholesky`` and
        ``rs`` are positive semi-definite by construction; ``direct`` may
        not be (pruning removes such primitives).
    """
    e11, e12, e22 = covariance_entries(params, variant)
    out = np.empty(np.shape(e11) + (2, 2), dtype=np.float64)
    out[..., 0, 0] = e11
    out[..., 0, 1] = e12
    out[..., 1, 0] = e12
    out[..., 1, 1] = e22
    return out


def covariance_entries(params: np.ndarray, variant: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Like :func:`materialize_covariance` but returns (S11, S12, S22) arrays."""
    p = np.asarray(params, dtype=np.float64)
    a, b, c = p[..., 0], p[..., 1], p[..., 2]
    if variant == "direct":
        return a.copy(), b.copy(), c.copy()
    if variant == "cholesky":
        # Sigma = L L^T with L = [[a, 0], [b, c]]
        return a * a, a * b, b * b + c * c
    if variant == "rs":
        # Sigma = R diag(s1^2, s2^2) R^T with R the rotation by theta
        ct, st = np.cos(a), np.sin(a)
        s1sq, s2sq = b * b, c * c
        e11 = s1sq * ct * ct + s2sq * st * st
        e12 = (s1sq - s2sq) * st * ct
        e22 = s1sq * st * st + s2sq * ct * ct
        return e11, e12, e22
    raise ValueError(f"unknown covariance variant: {variant!r}")


def covariance_param_grads(params: np.ndarray, variant: str, d_entries: np.ndarray) -> np.ndarray:
    """Chain gradients w.r.t. covariance entries back to stored parameters.

    Args:
        params: ``(N, 3)`` stored parameters (see :func:`covariance_entries`).
        variant: one of :data:`VARIANTS`.
        d_entries: ``(N, 3)`` gradients w.r.t. (S11, S12, S22) where the S12
            component is the derivative w.r.t. the single off-diagonal
            parameter of the symmetric matrix (i.e. both mirror slots
            already summed).

    Returns:
        ``(N, 3)`` gradients w.r.t. the stored parameters.
    """
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(d_entries, dtype=np.float64)
    if variant == "direct":
        return g.copy()
    a, b, c = p[..., 0], p[..., 1], p[..., 2]
    g11, g12, g22 = g[..., 0], g[..., 1], g[..., 2]
    out = np.empty_like(p)
    if variant == "cholesky":
        out[..., 0] = 2.0 * a * g11 + b * g12
        out[..., 1] = a * g12 + 2.0 * b * g22
        out[..., 2] = 2.0 * c * g22
        return out
    if variant == "rs":
        ct, st = np.cos(a), np.sin(a)
        sin2, cos2 = 2.0 * st * ct, ct * ct - st * st
        diff = b * b - c * c
        out[..., 0] = diff * (-g11 * sin2 + g12 * cos2 + g22 * sin2)
        out[..., 1] = 2.0 * b * (g11 * ct * ct + g12 * st * ct + g22 * st * st)
        out[..., 2] = 2.0 * c * (g11 * st * st - g12 * st * ct + g22 * ct * ct)
        return out
    raise ValueError(f"unknown covariance variant: {variant!r}")


def is_psd(sigma: np.ndarray) -> bool:
    """Positive semi-definiteness test for one symmetric 2x2 matrix.

    True iff ``det(sigma) >= 0`` and both diagonal entries are >= 0.
    NaN entries fail every comparison, so matrices with NaNs are not PSD.
    """
    m = np.asarray(sigma, dtype=np.float64)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return bool((det >= 0.0) & (m[0, 0] >= 0.0) & (m[1, 1] >= 0.0))


def psd_mask(e11: np.ndarray, e12: np.ndarray, e22: np.ndarray) -> np.ndarray:
    """Vectorized :func:`is_psd` over entry arrays."""
    det = e11 * e22 - e12 * e12
    return (det >= 0.0) & (e11 >= 0.0) & (e22 >= 0.0)


def renderable_mask(e11: np.ndarray, e12: np.ndarray, e22: np.ndarray) -> np.ndarray:
    """Mask of primitives that contribute to rendering: PSD with det > 0.

    Singular (det == 0) and non-PSD covariances contribute exactly zero,
    which is also the pruning rule.
    """
    det = e11 * e22 - e12 * e12
    return (det > 0.0) & (e11 >= 0.0) & (e22 >= 0.0)


@dataclass
class GaussianCloud:
    """Structure-of-arrays store for N 2D Gaussian primitives.

    Attribute arrays always share the same leading length and the count
    never exceeds ``max_budget``.  ``filter_variances`` holds the
    per-primitive isotropic low-pass variance s_i added to the covariance
    at render time (``Sigma + s_i * I``); it is not trainable.
    """

    variant: str
    positions: np.ndarray         # (N, 2) float64, (x, y) pixel coords
    cov_params: np.ndarray        # (N, 3) float64
    colors: np.ndarray            # (N, 3) float64, unbounded during training
    filter_variances: np.ndarray  # (N,) float64, >= 0
    max_budget: int

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown covariance variant: {self.variant!r}")
        if self.max_budget < 1:
            raise ValueError("max_budget must be positive")
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.cov_params = np.ascontiguousarray(self.cov_params, dtype=np.float64).reshape(-1, 3)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.filter_variances = np.ascontiguousarray(
            self.filter_variances, dtype=np.float64
        ).reshape(-1)
        n = self.positions.shape[0]
        if not (self.cov_params.shape[0] == self.colors.shape[0] == self.filter_variances.shape[0] == n):
            raise ValueError("attribute arrays must share the same length")
        if n > self.max_budget:
            raise ValueError(f"cloud holds {n} primitives, budget is {self.max_budget}")
        if self.filter_variances.size and np.nanmin(self.filter_variances) < 0.0:
            raise ValueError("filter variances must be non-negative")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls, variant: str, max_budget: int) -> "GaussianCloud":
        return cls(
            variant=variant,
            positions=np.zeros((0, 2)),
            cov_params=np.zeros((0, 3)),
            colors=np.zeros((0, 3)),
            filter_variances=np.zeros(0),
            max_budget=max_budget,
        )

    def filtered_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Materialized covariance entries with the filter applied on the diagonal."""
        e11, e12, e22 = covariance_entries(self.cov_params, self.variant)
        return e11 + self.filter_variances, e12, e22 + self.filter_variances

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            variant=self.variant,
            positions=self.positions.copy(),
            cov_params=self.cov_params.copy(),
            colors=self.colors.copy(),
            filter_variances=self.filter_variances.copy(),
            max_budget=self.max_budget,
        )

    def take(self, mask: np.ndarray) -> "GaussianCloud":
        """New cloud keeping rows where ``mask`` is True, relative order preserved."""
        mask = np.asarray(mask, dtype=bool)
        return GaussianCloud(
            variant=self.variant,
            positions=self.positions[mask],
            cov_params=self.cov_params[mask],
            colors=self.colors[mask],
            filter_variances=self.filter_variances[mask],
            max_budget=self.max_budget,
        )

    def extend(
        self,
        positions: np.ndarray,
        cov_params: np.ndarray,
        colors: np.ndarray,
        filter_variances: np.ndarray,
    ) -> "GaussianCloud":
        """New cloud with rows appended; rejects growth past the budget."""
        return GaussianCloud(
            variant=self.variant,
            positions=np.concatenate([self.positions, np.reshape(positions, (-1, 2))]),
            cov_params=np.concatenate([self.cov_params, np.reshape(cov_params, (-1, 3))]),
            colors=np.concatenate([self.colors, np.reshape(colors, (-1, 3))]),
            filter_variances=np.concatenate(
                [self.filter_variances, np.reshape(filter_variances, (-1,))]
            ),
            max_budget=self.max_budget,
        )

    def allclose(self, other: "GaussianCloud") -> bool:
        return (
            self.variant == other.variant
            and self.max_budget == other.max_budget
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.cov_params, other.cov_params)
            and np.array_equal(self.colors, other.colors)
            and np.array_equal(self.filter_variances, other.filter_variances)
        )


@dataclass
class TrainConfig:
    """Hyperparameters for representation fitting and quantization-aware training."""

    max_gaussians: int = 5000
    iterations: int = 50_000
    grow_interval: int = 5000
    prune_interval: int = 100
    grow_start: int = 5000
    grow_stop: int = 45_000
    learning_rate: float = 0.18
    lr_decay_factor: float = 0.5
    lr_decay_at: int = 20_000
    quantizer_learning_rate: float = 0.001
    quantizer_lr_decay_factor: float = 0.5
    quantizer_lr_decay_at: int = 20_000
    warmup_iterations: int = 6000
    caf_alpha: float = 32.0
    seed: int = 0
    variant: str = "direct"
    enable_densification: bool = True
    enable_caf: bool = True
    constant_filter_variance: float = 0.5
    cutoff_sigmas: float = 6.0
    log_interval: int = 500
    lsq_grad_scale: bool = True
    # optional per-group learning-rate overrides; None falls back to learning_rate
    lr_position: float | None = None
    lr_covariance: float | None = None
    lr_color: float | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown covariance variant: {self.variant!r}")
        if self.max_gaussians < 2:
            raise ValueError("max_gaussians must be at least 2")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if min(self.grow_interval, self.prune_interval, self.log_interval) <= 0:
            raise ValueError("intervals must be positive")
        if self.grow_start > self.grow_stop:
            raise ValueError("grow_start must not exceed grow_stop")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be non-negative")
        if self.caf_alpha <= 0.0:
            raise ValueError("caf_alpha must be positive")
        if self.cutoff_sigmas <= 0.0:
            raise ValueError("cutoff_sigmas must be positive (use inf to disable)")

    def group_learning_rates(self) -> dict[str, float]:
        return {
            "position": self.lr_position if self.lr_position is not None else self.learning_rate,
            "covariance": self.lr_covariance if self.lr_covariance is not None else self.learning_rate,
            "color": self.lr_color if self.lr_color is not None else self.learning_rate,
        }

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def growth_iterations(self) -> Iterator[int]:
        """Iterations at which a growth event fires (within total iterations)."""
        t = self.grow_start
        while t <= min(self.grow_stop, self.iterations):
            yield t
            t += self.grow_interval


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (H, W, 3) float layout and return the array as float64."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions")
    return np.ascontiguousarray(arr, dtype=np.float64)
