"""Watch distortion-driven densification place primitives where the error is.

Renders the reconstruction and the per-pixel distortion map around each
growth event.  Usage: python demos/densification_story.py [image.png]
"""

import numpy as np

from _shared import demo_image, out_dir
from splat2d.densify import DistortionMap, grow, prune, sparse_init
from splat2d.io import save_image
from splat2d.model import TrainConfig, covariance_param_grads
from splat2d.rasterizer import render, render_backward
from splat2d.trainer import l2_loss, _make_optimizer
from splat2d.metrics import psnr

image, name = demo_image(size=96, offset=(120, 180))
height, width = image.shape[:2]
cfg = TrainConfig(max_gaussians=900, iterations=1500, seed=7, log_interval=10**9)
rng = np.random.default_rng(cfg.seed)

cloud = sparse_init(cfg.max_gaussians, height, width, rng, caf_alpha=cfg.caf_alpha)
optimizer = _make_optimizer(cloud, cfg)
snapshots = []
grow_every = 300

print(f"budget {cfg.max_gaussians}, starting from {cloud.n} primitives")
for t in range(1, cfg.iterations + 1):
    rendered = render(cloud, (height, width), cfg.cutoff_sigmas)
    loss, d_pix = l2_loss(rendered, image)
    grads = render_backward(cloud, (height, width), d_pix, cfg.cutoff_sigmas)
    d_cov = covariance_param_grads(cloud.cov_params, cloud.variant, grads.d_covariance)
    optimizer.step(
        params={"position": cloud.positions, "covariance": cloud.cov_params, "color": cloud.colors},
        grads={"position": grads.d_position, "covariance": d_cov, "color": grads.d_color},
    )
    if t % cfg.prune_interval == 0:
        from splat2d.densify import keep_mask

        mask = keep_mask(cloud)
        if not mask.all():
            cloud = cloud.take(mask)
            optimizer.compact(mask)
    if t % grow_every == 0 and t < cfg.iterations:
        distortion = DistortionMap.from_images(image, rendered)
        snapshots.append((t, rendered.copy(), distortion.values.copy(), cloud.n))
        before = cloud.n
        cloud = grow(cloud, image, rendered, rng, caf_alpha=cfg.caf_alpha)
        if cloud.n > before:
            optimizer.extend(cloud.n - before)
        print(
            f"t={t}: psnr {psnr(np.clip(rendered, 0, 1), image):.2f} dB, "
            f"grew {before} -> {cloud.n} at the worst pixels"
        )

final = np.clip(render(cloud, (height, width), cfg.cutoff_sigmas), 0, 1)
print(f"final: {cloud.n} primitives, {psnr(final, image):.2f} dB")
save_image(out_dir() / f"{name}_d3_final.png", final)

for t, rendered, distortion, n in snapshots:
    save_image(out_dir() / f"{name}_d3_render_t{t}.png", np.clip(rendered, 0, 1))
    heat = distortion / max(distortion.max(), 1e-12)
    save_image(out_dir() / f"{name}_d3_error_t{t}.png", np.stack([heat] * 3, axis=-1))
print(f"snapshots in {out_dir()}")
