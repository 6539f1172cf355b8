"""Shared plumbing for the demo scripts: demo image loading and output dirs."""

import sys
from pathlib import Path

import numpy as np

from splat2d.io import load_image


def demo_image(argv=None, size=128, offset=(40, 60)):
    """Image for a demo run: a path given on the command line, else a crop
    of scikit-image's bundled astronaut photograph."""
    argv = sys.argv[1:] if argv is None else argv
    if argv:
        return load_image(argv[0]), Path(argv[0]).stem
    try:
        from skimage.data import astronaut
    except ImportError as exc:
        raise SystemExit(
            "no image argument given and scikit-image is not installed; "
            "pass an RGB PNG path or `pip install scikit-image`"
        ) from exc
    base = astronaut().astype(np.float64) / 255.0
    r, c = offset
    return np.ascontiguousarray(base[r : r + size, c : c + size]), "astronaut"


def out_dir() -> Path:
    path = Path(__file__).resolve().parent / "output"
    path.mkdir(exist_ok=True)
    return path
