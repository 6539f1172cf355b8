"""Content-aware low-pass filtering of Gaussian footprints.

Every primitive carries an isotropic filter variance ``s_i`` that widens
its rendered footprint to ``Sigma_i + s_i * I``.  New primitives created
while the cloud holds ``N`` members receive ``s = H*W / (alpha * N)``, so
early sparse primitives get broad support (papering over coverage holes)
and later ones stay sharp.  Existing primitives keep their creation-time
value.  The filter is not trainable and costs nothing to store: the codec
serializes the filtered covariance directly.
"""

from __future__ import annotations

import numpy as np

from .model import GaussianCloud

DEFAULT_ALPHA = 32.0
CONSTANT_BASELINE_VARIANCE = 0.5  # constant-filter ablation default


def filter_variance_for_new(height: int, width: int, n_count: int, alpha: float = DEFAULT_ALPHA) -> float:
    """Filter variance assigned to primitives created at cloud size ``n_count``.

    ``n_count`` is the cloud size counting the newly created primitives.
    """
    if n_count < 1:
        raise ValueError("n_count must be at least 1")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    return (height * width) / (alpha * n_count)


def apply_caf_policy(
    cloud: GaussianCloud,
    enabled: bool,
    constant_s: float = CONSTANT_BASELINE_VARIANCE,
) -> None:
    """Apply the filtering policy to a cloud in place.

    Disabled (ablation mode) overwrites every filter variance with
    ``constant_s``.  Enabled is a no-op here: adaptive values are assigned
    at creation time by the densifier and must not be rewritten later.
    """
    if not enabled:
        if constant_s < 0.0:
            raise ValueError("constant filter variance must be non-negative")
        cloud.filter_variances = np.full(cloud.n, float(constant_s))
