"""Fit a budgeted Gaussian cloud to an image and watch the quality climb.

Usage: python demos/represent_image.py [image.png]
"""

import numpy as np

from _shared import demo_image, out_dir
from splat2d.io import save_image
from splat2d.model import TrainConfig
from splat2d.rasterizer import render
from splat2d.trainer import fit

image, name = demo_image()
height, width = image.shape[:2]
print(f"fitting {name} ({height}x{width}) with a budget of 1200 primitives")

cfg = TrainConfig(
    max_gaussians=1200,
    iterations=3000,
    seed=0,
    grow_start=300,
    grow_interval=300,
    grow_stop=2700,
    prune_interval=100,
    lr_decay_at=1200,
    log_interval=300,
)
report = fit(image, cfg, echo=True)

rendered = np.clip(render(report.cloud, (height, width), cfg.cutoff_sigmas), 0, 1)
save_image(out_dir() / f"{name}_rendered.png", rendered)
report.write_log(out_dir() / f"{name}_fit_log.csv")
print(f"\nfinal: {report.cloud.n} primitives, {report.final_psnr:.2f} dB "
      f"in {report.encode_seconds:.0f}s")
print(f"outputs in {out_dir()}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ts = [p.iteration for p in report.history]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    axes[0].plot(ts, [p.psnr for p in report.history], marker=".")
    axes[0].set_xlabel("iteration")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].plot(ts, [p.n_gaussians for p in report.history], marker=".", color="tab:orange")
    axes[1].set_xlabel("iteration")
    axes[1].set_ylabel("primitives")
    fig.tight_layout()
    fig.savefig(out_dir() / f"{name}_fit_curves.png", dpi=130)
    print("wrote fit-curve plot")
except ImportError:
    print("matplotlib not installed; skipping the curve plot")
