"""Quality and efficiency measurement: PSNR, multi-scale SSIM, decode timing.

Metrics are computed on floating-point images clamped to [0, 1] by the
caller; no 8-bit rounding is applied, so reported numbers describe the
continuous reconstruction rather than a particular file export.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

# standard multi-scale SSIM configuration (Wang et al. values)
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03

CSV_FIELDS = (
    "image_id",
    "M",
    "iterations",
    "variant",
    "flags",
    "psnr",
    "ms_ssim",
    "bpp",
    "encode_s",
    "decode_fps",
)


@dataclass
class QualityReport:
    """One measured operating point of the pipeline."""

    psnr: float
    ms_ssim: float
    bpp: float | None = None
    encode_seconds: float | None = None
    decode_fps: float | None = None

    def csv_row(self, image_id: str, m: int, iterations: int, variant: str, flags: str) -> dict:
        return {
            "image_id": image_id,
            "M": m,
            "iterations": iterations,
            "variant": variant,
            "flags": flags,
            "psnr": repr(self.psnr),
            "ms_ssim": repr(self.ms_ssim),
            "bpp": "" if self.bpp is None else repr(self.bpp),
            "encode_s": "" if self.encode_seconds is None else repr(self.encode_seconds),
            "decode_fps": "" if self.decode_fps is None else repr(self.decode_fps),
        }


def write_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] images; inf when identical."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window() -> np.ndarray:
    x = np.arange(_WINDOW_SIZE) - (_WINDOW_SIZE - 1) / 2
    w = np.exp(-(x * x) / (2.0 * _WINDOW_SIGMA**2))
    return w / w.sum()


def _local_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # separable correlation; interior slice equals a 'valid' correlation
    half = _WINDOW_SIZE // 2
    out = correlate1d(img, window, axis=0, mode="constant")
    out = correlate1d(out, window, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])


def ms_ssim_scales(height: int, width: int) -> int:
    """Number of dyadic scales with at least 11x11 support, capped at 5."""
    side = min(height, width)
    scales = 0
    while scales < 5 and side >= _WINDOW_SIZE:
        scales += 1
        side //= 2
    return scales


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Multi-scale structural similarity, channel-averaged, in [0, 1].

    Contrast/structure terms at every dyadic scale, the luminance term only
    at the coarsest; standard 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
    K2 = 0.03, scale weights renormalized when the image supports fewer
    than five scales.  Negative scale means are clamped to zero so the
    fractional weights stay real.
    """
    a, b = _check_pair(a, b)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("expected (H, W, 3) images")
    n_scales = ms_ssim_scales(a.shape[0], a.shape[1])
    if n_scales == 0:
        raise ValueError(
            f"images of size {a.shape[:2]} are too small for an {_WINDOW_SIZE}x{_WINDOW_SIZE} window"
        )
    weights = np.asarray(MSSSIM_WEIGHTS[:n_scales])
    weights = weights / weights.sum()
    window = _gaussian_window()
    c1 = _K1 * _K1
    c2 = _K2 * _K2

    total = 0.0
    for ch in range(3):
        x, y = a[:, :, ch], b[:, :, ch]
        value = 1.0
        for scale in range(n_scales):
            if scale > 0:
                x, y = _downsample2(x), _downsample2(y)
            mu_x = _local_mean(x, window)
            mu_y = _local_mean(y, window)
            sxx = _local_mean(x * x, window) - mu_x * mu_x
            syy = _local_mean(y * y, window) - mu_y * mu_y
            sxy = _local_mean(x * y, window) - mu_x * mu_y
            cs_map = (2.0 * sxy + c2) / (sxx + syy + c2)
            if scale < n_scales - 1:
                value *= max(float(np.mean(cs_map)), 0.0) ** weights[scale]
            else:
                # the coarsest scale carries the full SSIM (luminance times cs)
                l_map = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
                value *= max(float(np.mean(l_map * cs_map)), 0.0) ** weights[scale]
        total += value
    return total / 3.0


def time_decode(data: bytes, repeats: int = 9) -> tuple[float, np.ndarray]:
    """Median decode-plus-render throughput of a serialized cloud.

    Runs ``repeats`` timed decode+render passes and reports the median as
    frames per second.  The first pass's render is returned for
    verification; no hidden warm-up is performed, so callers who want
    steady-state numbers should decode once beforehand (JIT compilation of
    the render kernels is a one-time per-machine cost).
    """
    from .bitstream import decode
    from .rasterizer import render

    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    first_render = None
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        cloud, height, width = decode(data)
        img = render(cloud, (height, width))
        times.append(time.perf_counter() - start)
        if first_render is None:
            first_render = img
    return 1.0 / float(np.median(times)), first_render
