"""Image file I/O and the native full-precision cloud dump.

Images load as (H, W, 3) float64 in [0, 1] (8-bit values divided by 255).
Only RGB inputs are accepted; alpha channels are rejected rather than
silently dropped.

The cloud dump (.g2gc) is a versioned flat binary for resuming and
ablation work: unlike the compressed .g2gs container it stores every
attribute at full precision, including filter variances.  Writing is
bytewise deterministic for identical clouds.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

from .model import VARIANTS, GaussianCloud

CLOUD_MAGIC = b"G2GC"
CLOUD_VERSION = 1


def load_image(path) -> np.ndarray:
    """Read a PNG/PPM (or other 8-bit RGB) file into [0, 1] floats."""
    with Image.open(path) as img:
        if img.mode in ("RGBA", "LA", "PA") or "transparency" in img.info:
            raise ValueError(
                f"{path}: images with an alpha channel are not supported; flatten it first"
            )
        if img.mode != "RGB":
            img = img.convert("RGB")
        data = np.asarray(img, dtype=np.float64)
    return data / 255.0


def save_image(path, img: np.ndarray) -> None:
    """Write a float image as 8-bit RGB, clamping to [0, 1] first."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {arr.shape}")
    Image.fromarray(np.rint(arr * 255.0).astype(np.uint8), mode="RGB").save(path)


def save_cloud(path, cloud: GaussianCloud) -> None:
    """Write the native dump: header plus float64 little-endian attribute arrays."""
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC)
        fh.write(struct.pack("<BBII", CLOUD_VERSION, VARIANTS.index(cloud.variant),
                             cloud.max_budget, cloud.n))
        for arr in (cloud.positions, cloud.cov_params, cloud.colors, cloud.filter_variances):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_cloud(path) -> GaussianCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CLOUD_MAGIC:
        raise ValueError(f"{path}: not a cloud dump (bad magic)")
    version, variant_idx, max_budget, n = struct.unpack_from("<BBII", data, 4)
    if version != CLOUD_VERSION:
        raise ValueError(f"{path}: unsupported cloud dump version {version}")
    if variant_idx >= len(VARIANTS):
        raise ValueError(f"{path}: unknown variant tag {variant_idx}")
    offset = 4 + struct.calcsize("<BBII")
    expected = offset + 8 * n * (2 + 3 + 3 + 1)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")

    def take(count):
        nonlocal offset
        out = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
        offset += 8 * count
        return out

    return GaussianCloud(
        variant=VARIANTS[variant_idx],
        positions=take(2 * n).reshape(n, 2),
        cov_params=take(3 * n).reshape(n, 3),
        colors=take(3 * n).reshape(n, 3),
        filter_variances=take(n),
        max_budget=max_budget,
    )
