"""Rate-distortion sweep: compress at several primitive budgets.

Usage: python demos/rd_curve.py [image.png]
"""

import numpy as np

from _shared import demo_image, out_dir
from splat2d import bitstream
from splat2d.metrics import QualityReport, ms_ssim, psnr, write_csv
from splat2d.model import TrainConfig, renderable_mask
from splat2d.quantizer import QuantizerBank, calibrate_bank, fake_quant_cloud, qat_finetune
from splat2d.rasterizer import render
from splat2d.trainer import fit

image, name = demo_image(size=96, offset=(60, 200))
height, width = image.shape[:2]
rows = []

for budget in (200, 400, 800, 1600):
    cfg = TrainConfig(
        max_gaussians=budget,
        iterations=2000,
        warmup_iterations=700,
        seed=0,
        grow_start=350,
        grow_interval=350,
        grow_stop=1700,
        prune_interval=100,
        lr_decay_at=800,
        log_interval=1000,
    )
    warm_cfg = TrainConfig.from_dict({**cfg.to_dict(), "iterations": cfg.warmup_iterations})
    warm = fit(image, warm_cfg)
    bank = calibrate_bank(QuantizerBank.default(), warm.cloud)
    cloud, bank, report = qat_finetune(image, warm.cloud, bank, cfg)
    quantized, qmask = fake_quant_cloud(cloud, bank.storage_rounded())
    cloud = cloud.take(qmask & renderable_mask(*quantized.filtered_entries()))
    data = bitstream.encode(cloud, bank, height, width)
    decoded, h, w = bitstream.decode(data)
    rendered = np.clip(render(decoded, (h, w)), 0, 1)
    quality = QualityReport(
        psnr=psnr(rendered, image),
        ms_ssim=ms_ssim(rendered, image),
        bpp=bitstream.bpp(len(data), h, w),
        encode_seconds=warm.encode_seconds + report.encode_seconds,
    )
    rows.append(quality.csv_row(name, budget, cfg.iterations, cfg.variant, "d3+caf"))
    print(f"M={budget:5d}: {quality.bpp:.4f} bpp  {quality.psnr:.2f} dB  "
          f"ms-ssim {quality.ms_ssim:.4f}  ({cloud.n} primitives kept)")

csv_path = out_dir() / f"{name}_rd.csv"
write_csv(csv_path, rows)
print(f"wrote {csv_path}")

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    bpps = [float(r["bpp"]) for r in rows]
    psnrs = [float(r["psnr"]) for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(bpps, psnrs, marker="o")
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title("rate-distortion sweep")
    fig.tight_layout()
    fig.savefig(out_dir() / f"{name}_rd.png", dpi=130)
    print("wrote RD plot")
except ImportError:
    print("matplotlib not installed; skipping the RD plot")
