"""Shared fixtures and cloud/image generators for the test suite."""

import numpy as np
import pytest

from splat2d.model import GaussianCloud


def make_random_cloud(
    rng: np.random.Generator,
    n: int,
    height: int,
    width: int,
    variant: str = "direct",
    margin: float = 2.0,
    filter_max: float = 2.0,
) -> GaussianCloud:
    """Random cloud of comfortably-PSD primitives for renderer tests.

    Direct-variant entries are drawn with |S12| < 0.8 * sqrt(S11 * S22) so
    that small finite-difference perturbations cannot flip validity.
    """
    positions = np.column_stack(
        [
            rng.uniform(-margin, width + margin, n),
            rng.uniform(-margin, height + margin, n),
        ]
    )
    if variant == "direct":
        a = rng.uniform(0.4, 3.0, n)
        c = rng.uniform(0.4, 3.0, n)
        b = np.sqrt(a * c) * rng.uniform(-0.8, 0.8, n)
        cov = np.column_stack([a, b, c])
    elif variant == "cholesky":
        cov = np.column_stack(
            [rng.uniform(0.6, 1.8, n), rng.uniform(-1.0, 1.0, n), rng.uniform(0.6, 1.8, n)]
        )
    elif variant == "rs":
        cov = np.column_stack(
            [rng.uniform(0.0, 2 * np.pi, n), rng.uniform(0.6, 1.8, n), rng.uniform(0.6, 1.8, n)]
        )
    else:
        raise ValueError(variant)
    return GaussianCloud(
        variant=variant,
        positions=positions,
        cov_params=cov,
        colors=rng.normal(size=(n, 3)),
        filter_variances=rng.uniform(0.1, filter_max, n),
        max_budget=max(n, 1),
    )


def natural_image(height: int, width: int, offset: tuple[int, int] = (40, 60)) -> np.ndarray:
    """A real-photograph crop in [0, 1] floats; synthesized fallback if
    scikit-image's bundled data is unavailable."""
    try:
        from skimage.data import astronaut

        base = astronaut().astype(np.float64) / 255.0
    except Exception:
        yy, xx = np.mgrid[0:512, 0:512] / 512.0
        rng = np.random.default_rng(7)
        base = np.stack(
            [
                0.5 + 0.3 * np.sin(9 * xx + 4 * yy) * np.cos(5 * yy),
                0.5 + 0.25 * np.cos(7 * xx * yy + 2.0),
                0.4 + 0.3 * np.sin(12 * yy - 3 * xx),
            ],
            axis=-1,
        )
        base += rng.normal(scale=0.02, size=base.shape)
        base = np.clip(base, 0.0, 1.0)
    r0, c0 = offset
    if r0 + height > base.shape[0] or c0 + width > base.shape[1]:
        reps = (height // base.shape[0] + 2, width // base.shape[1] + 2, 1)
        base = np.tile(base, reps)
        r0 = c0 = 0
    return np.ascontiguousarray(base[r0 : r0 + height, c0 : c0 + width])


def finite_difference_gradients(cloud, plane_dims, d_loss_d_pixels, h=1e-5):
    """Central finite differences of L = sum(d_loss_d_pixels * render_naive)
    with respect to every primitive attribute, via the brute-force renderer.

    Returns (d_position, d_params, d_color) arrays shaped like the cloud's
    attributes; the covariance gradient is w.r.t. the stored parameters of
    the cloud's own variant.
    """
    from splat2d.rasterizer import render_naive

    def loss_of(c):
        return float(np.sum(d_loss_d_pixels * render_naive(c, plane_dims)))

    def fd(attr_name, idx):
        plus = cloud.copy()
        getattr(plus, attr_name)[idx] += h
        minus = cloud.copy()
        getattr(minus, attr_name)[idx] -= h
        return (loss_of(plus) - loss_of(minus)) / (2 * h)

    d_pos = np.zeros_like(cloud.positions)
    d_par = np.zeros_like(cloud.cov_params)
    d_col = np.zeros_like(cloud.colors)
    for i in range(cloud.n):
        for j in range(2):
            d_pos[i, j] = fd("positions", (i, j))
        for j in range(3):
            d_par[i, j] = fd("cov_params", (i, j))
        for j in range(3):
            d_col[i, j] = fd("colors", (i, j))
    return d_pos, d_par, d_col


def assert_gradients_close(analytic, fd, rel=1e-4, abs_floor=1e-8):
    """Per-entry check: |a - f| < max(abs_floor, rel * max(|a|, |f|))."""
    analytic = np.asarray(analytic)
    fd = np.asarray(fd)
    tol = np.maximum(abs_floor, rel * np.maximum(np.abs(analytic), np.abs(fd)))
    bad = np.abs(analytic - fd) >= tol
    assert not bad.any(), (
        f"{bad.sum()} gradient entries disagree; worst "
        f"analytic={analytic[bad].ravel()[0]:.3e} fd={fd[bad].ravel()[0]:.3e}"
    )


@pytest.fixture(scope="session")
def astronaut_crop_128() -> np.ndarray:
    return natural_image(128, 128)


@pytest.fixture(scope="session")
def astronaut_crop_64() -> np.ndarray:
    return natural_image(64, 64, offset=(120, 180))
