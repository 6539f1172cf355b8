"""End-to-end compression: warm-up fit, quantization-aware training, bitstream.

Usage: python demos/compress_decode.py [image.png]
"""

import numpy as np

from _shared import demo_image, out_dir
from splat2d import bitstream
from splat2d.io import save_image
from splat2d.metrics import ms_ssim, psnr, time_decode
from splat2d.model import TrainConfig, renderable_mask
from splat2d.quantizer import QuantizerBank, calibrate_bank, fake_quant_cloud, qat_finetune
from splat2d.rasterizer import render
from splat2d.trainer import fit

image, name = demo_image(size=96, offset=(150, 120))
height, width = image.shape[:2]
cfg = TrainConfig(
    max_gaussians=800,
    iterations=2400,
    warmup_iterations=800,
    seed=1,
    grow_start=400,
    grow_interval=400,
    grow_stop=2000,
    prune_interval=100,
    lr_decay_at=1000,
    log_interval=400,
)

print("1) representation warm-up")
warm_cfg = TrainConfig.from_dict({**cfg.to_dict(), "iterations": cfg.warmup_iterations})
warm = fit(image, warm_cfg, echo=True)

print("\n2) quantizer calibration + quantization-aware training (12/10/6 bits)")
bank = calibrate_bank(QuantizerBank.default(), warm.cloud)
cloud, bank, qreport = qat_finetune(image, warm.cloud, bank, cfg, echo=True)

quantized, qmask = fake_quant_cloud(cloud, bank.storage_rounded())
cloud = cloud.take(qmask & renderable_mask(*quantized.filtered_entries()))
data = bitstream.encode(cloud, bank, height, width)
path = out_dir() / f"{name}.g2gs"
path.write_bytes(data)

print("\n3) decode and measure")
decoded, h, w = bitstream.decode(data)
rendered = np.clip(render(decoded, (h, w)), 0, 1)
fps, _ = time_decode(data, repeats=9)
save_image(out_dir() / f"{name}_decoded.png", rendered)
print(f"stream: {len(data)} bytes = {bitstream.bpp(len(data), h, w):.4f} bpp "
      f"({cloud.n} primitives x {bank.bits_per_primitive} bits + 84-byte header)")
print(f"quality: {psnr(rendered, image):.2f} dB PSNR, {ms_ssim(rendered, image):.4f} MS-SSIM")
print(f"decode+render: {fps:.1f} fps (median of 9)")
print(f"artifacts in {out_dir()}")
