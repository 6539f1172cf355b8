"""Attribute-separated learnable scalar quantization with straight-through training.

Each of the eight stored attribute channels (position x/y, the three
*filtered* covariance entries, and the color channels) owns one quantizer
with a learnable scale and offset.  Codes are ``round_half_even(clip((v' -
beta) / s, 0, 2^b - 1))`` where ``v'`` is the raw value for linear
channels and ``ln(v)`` for the two covariance variance channels, whose
values span orders of magnitude.  Training runs through the
quantize-dequantize pair with straight-through gradients; the scale picks
up the LSQ residual term and the offset trains on the saturated tails.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .adam import Adam
from .metrics import psnr
from .model import GaussianCloud, TrainConfig, covariance_param_grads, renderable_mask, validate_image
from .rasterizer import render, render_backward
from .trainer import FitReport, LogPoint, l2_loss

# serialization order; the two variance channels quantize in log domain
CHANNELS = ("mu_x", "mu_y", "cov_11", "cov_12", "cov_22", "r", "g", "b")
LOG_CHANNELS = frozenset({"cov_11", "cov_22"})

MIN_SCALE = 1e-8


@dataclass
class LsqChannelQuantizer:
    """Learnable (scale, offset, bit depth) scalar quantizer for one channel."""

    bit_depth: int
    scale: float = 1.0
    offset: float = 0.0
    domain: str = "linear"  # or "log"

    def __post_init__(self) -> None:
        if not 1 <= self.bit_depth <= 16:
            raise ValueError("bit_depth must be in [1, 16]")
        if self.domain not in ("linear", "log"):
            raise ValueError(f"unknown quantizer domain: {self.domain!r}")
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")

    @property
    def q_max(self) -> int:
        return (1 << self.bit_depth) - 1


def _to_internal(q: LsqChannelQuantizer, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if q.domain == "log":
        if values.size and not np.all(values > 0.0):
            raise ValueError("log-domain quantization requires strictly positive values")
        return np.log(values)
    return values


def quantize(q: LsqChannelQuantizer, values: np.ndarray) -> np.ndarray:
    """Integer codes in [0, 2^b - 1] (round-half-even after clipping)."""
    internal = _to_internal(q, values)
    u = np.clip((internal - q.offset) / q.scale, 0.0, float(q.q_max))
    return np.rint(u).astype(np.int64)


def dequantize(q: LsqChannelQuantizer, codes: np.ndarray) -> np.ndarray:
    """Lattice values for integer codes; rejects out-of-range codes."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() > q.q_max):
        raise ValueError(f"codes outside [0, {q.q_max}]")
    out = codes.astype(np.float64) * q.scale + q.offset
    if q.domain == "log":
        out = np.exp(out)
    return out


def fake_quant(q: LsqChannelQuantizer, values: np.ndarray) -> np.ndarray:
    return dequantize(q, quantize(q, values))


def fake_quant_backward(
    q: LsqChannelQuantizer, values: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, float, float]:
    """Straight-through gradients of the quantize-dequantize pair.

    ``upstream`` is the loss gradient w.r.t. the *internal* (pre-exp)
    dequantized output; log-domain callers therefore fold the exp factor
    (multiply by the dequantized value) into it first.  Returns the
    gradient w.r.t. the raw input values plus scalar gradients for the
    scale and offset (summed over elements).
    """
    values = np.asarray(values, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    internal = _to_internal(q, values)
    u = (internal - q.offset) / q.scale
    below = u < 0.0
    above = u > float(q.q_max)
    in_range = ~(below | above)

    dv_internal = np.where(in_range, upstream, 0.0)
    d_values = dv_internal / values if q.domain == "log" else dv_internal

    d_scale = float(
        np.sum(np.where(in_range, upstream * (np.rint(u) - u), 0.0))
        + np.sum(np.where(above, upstream * float(q.q_max), 0.0))
    )
    d_offset = float(np.sum(np.where(in_range, 0.0, upstream)))
    return d_values, d_scale, d_offset


def calibrate(q: LsqChannelQuantizer, values: np.ndarray) -> LsqChannelQuantizer:
    """Min/max range fit (in place): offset at the minimum, scale spanning the rest."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot calibrate on empty values")
    internal = _to_internal(q, values)
    q.offset = float(internal.min())
    q.scale = max(float(internal.max() - internal.min()) / q.q_max, MIN_SCALE)
    return q


class QuantizerBank:
    """One quantizer per stored attribute channel, in serialization order."""

    def __init__(self, quantizers: dict[str, LsqChannelQuantizer]):
        if tuple(quantizers) != CHANNELS:
            raise ValueError(f"bank must define exactly the channels {CHANNELS}")
        self.quantizers = quantizers

    @classmethod
    def default(cls, bit_mu: int = 12, bit_cov: int = 10, bit_color: int = 6) -> "QuantizerBank":
        def make(name: str) -> LsqChannelQuantizer:
            if name.startswith("mu"):
                bits = bit_mu
            elif name.startswith("cov"):
                bits = bit_cov
            else:
                bits = bit_color
            domain = "log" if name in LOG_CHANNELS else "linear"
            return LsqChannelQuantizer(bit_depth=bits, domain=domain)

        return cls({name: make(name) for name in CHANNELS})

    def __getitem__(self, name: str) -> LsqChannelQuantizer:
        return self.quantizers[name]

    @property
    def bit_depths(self) -> tuple[int, int, int]:
        return (self["mu_x"].bit_depth, self["cov_11"].bit_depth, self["r"].bit_depth)

    @property
    def bits_per_primitive(self) -> int:
        return sum(q.bit_depth for q in self.quantizers.values())

    def storage_rounded(self) -> "QuantizerBank":
        """Copy with scale/offset rounded to float32, as serialized."""
        return QuantizerBank(
            {
                name: replace(
                    q,
                    scale=float(np.float32(q.scale)),
                    offset=float(np.float32(q.offset)),
                )
                for name, q in self.quantizers.items()
            }
        )

    def copy(self) -> "QuantizerBank":
        return QuantizerBank({name: replace(q) for name, q in self.quantizers.items()})


def channel_values(cloud: GaussianCloud) -> dict[str, np.ndarray]:
    """Stored-representation view of a cloud: positions, filtered covariance
    entries, colors, keyed by channel name."""
    e11, e12, e22 = cloud.filtered_entries()
    return {
        "mu_x": cloud.positions[:, 0],
        "mu_y": cloud.positions[:, 1],
        "cov_11": e11,
        "cov_12": e12,
        "cov_22": e22,
        "r": cloud.colors[:, 0],
        "g": cloud.colors[:, 1],
        "b": cloud.colors[:, 2],
    }


def encodable_mask(cloud: GaussianCloud) -> np.ndarray:
    """Primitives whose filtered variances admit log-domain quantization."""
    e11, _, e22 = cloud.filtered_entries()
    return (e11 > 0.0) & (e22 > 0.0) & np.isfinite(e11) & np.isfinite(e22)


def calibrate_bank(bank: QuantizerBank, cloud: GaussianCloud) -> QuantizerBank:
    """Fit every channel's range on the cloud's encodable primitives (in place)."""
    mask = encodable_mask(cloud)
    if not mask.any():
        raise ValueError("no encodable primitives to calibrate on")
    for name, values in channel_values(cloud).items():
        calibrate(bank[name], values[mask])
    return bank


def fake_quant_cloud(cloud: GaussianCloud, bank: QuantizerBank) -> tuple[GaussianCloud, np.ndarray]:
    """Quantize-dequantize a cloud into its decoder-visible form.

    Returns a direct-variant cloud holding the dequantized filtered
    covariance (filter variances zeroed: the filter is baked in) plus the
    mask of primitives that were quantizable; the rest are marked with an
    invalid covariance so the renderer skips them.
    """
    mask = encodable_mask(cloud)
    values = channel_values(cloud)
    dq = {}
    for name in CHANNELS:
        out = np.zeros(cloud.n)
        if mask.any():
            out[mask] = fake_quant(bank[name], values[name][mask])
        dq[name] = out
    cov = np.column_stack([dq["cov_11"], dq["cov_12"], dq["cov_22"]])
    cov[~mask] = (-1.0, 0.0, -1.0)  # renderer skip marker
    quantized = GaussianCloud(
        variant="direct",
        positions=np.column_stack([dq["mu_x"], dq["mu_y"]]),
        cov_params=cov,
        colors=np.column_stack([dq["r"], dq["g"], dq["b"]]),
        filter_variances=np.zeros(cloud.n),
        max_budget=cloud.max_budget,
    )
    return quantized, mask


def _gradient_scale(q: LsqChannelQuantizer, count: int) -> float:
    # LSQ stabilization factor 1/sqrt(count * Q_max)
    return 1.0 / np.sqrt(count * float(q.q_max))


def qat_finetune(
    gt: np.ndarray,
    cloud: GaussianCloud,
    bank: QuantizerBank,
    cfg: TrainConfig,
    echo: bool = False,
) -> tuple[GaussianCloud, QuantizerBank, FitReport]:
    """Quantization-aware fine-tuning of a warmed-up cloud.

    Runs iterations ``warmup_iterations + 1 .. iterations`` on the global
    schedule: every step renders the fake-quantized cloud, backpropagates
    through the straight-through estimator into both the attributes and
    the per-channel quantizer parameters, and keeps pruning (against the
    dequantized covariance) while growth stays paused.
    """
    gt = validate_image(gt, "ground truth")
    height, width = gt.shape[:2]
    cloud = cloud.copy()
    bank = bank.copy()

    attr_lrs = cfg.group_learning_rates()
    if cfg.warmup_iterations >= cfg.lr_decay_at:
        attr_lrs = {k: v * cfg.lr_decay_factor for k, v in attr_lrs.items()}
    attr_opt = Adam(
        shapes={"position": (cloud.n, 2), "covariance": (cloud.n, 3), "color": (cloud.n, 3)},
        learning_rates=attr_lrs,
    )
    q_lr = cfg.quantizer_learning_rate
    if cfg.warmup_iterations >= cfg.quantizer_lr_decay_at:
        q_lr *= cfg.quantizer_lr_decay_factor
    quant_opt = Adam(
        shapes={name: (2,) for name in CHANNELS},
        learning_rates={name: q_lr for name in CHANNELS},
    )
    qparams = {name: np.array([bank[name].scale, bank[name].offset]) for name in CHANNELS}

    def sync_bank() -> None:
        for name in CHANNELS:
            qparams[name][0] = max(qparams[name][0], MIN_SCALE)
            bank[name].scale = float(qparams[name][0])
            bank[name].offset = float(qparams[name][1])

    history: list[LogPoint] = []
    start = time.perf_counter()

    def log(iteration: int) -> None:
        quantized, _ = fake_quant_cloud(cloud, bank)
        img = render(quantized, (height, width), cfg.cutoff_sigmas)
        loss_value, _ = l2_loss(img, gt)
        quality = psnr(np.clip(img, 0.0, 1.0), gt)
        history.append(LogPoint(iteration, loss_value, quality, cloud.n))
        if echo:
            print(
                f"qat  {iteration:>6}  loss {loss_value:.6e}  psnr {quality:7.3f}  n {cloud.n}",
                flush=True,
            )

    log(cfg.warmup_iterations)

    for t in range(cfg.warmup_iterations + 1, cfg.iterations + 1):
        mask = encodable_mask(cloud)
        quantized, _ = fake_quant_cloud(cloud, bank)
        rendered = render(quantized, (height, width), cfg.cutoff_sigmas)
        loss_value, d_pixels = l2_loss(rendered, gt)
        grads = render_backward(quantized, (height, width), d_pixels, cfg.cutoff_sigmas)

        upstream = {
            "mu_x": grads.d_position[:, 0],
            "mu_y": grads.d_position[:, 1],
            "cov_11": grads.d_covariance[:, 0],
            "cov_12": grads.d_covariance[:, 1],
            "cov_22": grads.d_covariance[:, 2],
            "r": grads.d_color[:, 0],
            "g": grads.d_color[:, 1],
            "b": grads.d_color[:, 2],
        }
        values = channel_values(cloud)
        dq_values = channel_values(quantized)
        d_raw = {}
        n_valid = int(mask.sum())
        for name in CHANNELS:
            full = np.zeros(cloud.n)
            if n_valid:
                up = upstream[name][mask]
                if name in LOG_CHANNELS:
                    # chain through exp: upstream w.r.t. the internal lattice value
                    up = up * dq_values[name][mask]
                d_v, d_s, d_b = fake_quant_backward(bank[name], values[name][mask], up)
                full[mask] = d_v
                if cfg.lsq_grad_scale:
                    g = _gradient_scale(bank[name], n_valid)
                    d_s *= g
                    d_b *= g
                quant_grads = np.array([d_s, d_b])
            else:
                quant_grads = np.zeros(2)
            d_raw[name] = full
            d_raw[name + "/quant"] = quant_grads

        d_filtered = np.column_stack([d_raw["cov_11"], d_raw["cov_12"], d_raw["cov_22"]])
        d_cov = covariance_param_grads(cloud.cov_params, cloud.variant, d_filtered)
        attr_opt.step(
            params={
                "position": cloud.positions,
                "covariance": cloud.cov_params,
                "color": cloud.colors,
            },
            grads={
                "position": np.column_stack([d_raw["mu_x"], d_raw["mu_y"]]),
                "covariance": d_cov,
                "color": np.column_stack([d_raw["r"], d_raw["g"], d_raw["b"]]),
            },
        )
        quant_opt.step(
            params=qparams,
            grads={name: d_raw[name + "/quant"] for name in CHANNELS},
        )
        sync_bank()

        if t == cfg.lr_decay_at:
            attr_opt.scale_learning_rates(cfg.lr_decay_factor)
        if t == cfg.quantizer_lr_decay_at:
            quant_opt.scale_learning_rates(cfg.quantizer_lr_decay_factor)

        if t % cfg.prune_interval == 0:
            quantized, qmask = fake_quant_cloud(cloud, bank)
            e11, e12, e22 = quantized.filtered_entries()
            keep = qmask & renderable_mask(e11, e12, e22)
            if not keep.all():
                cloud = cloud.take(keep)
                attr_opt.compact(keep)

        if t % cfg.log_interval == 0 and t != cfg.iterations:
            log(t)

    if cfg.iterations > cfg.warmup_iterations:
        log(cfg.iterations)

    return cloud, bank, FitReport(
        history=history,
        encode_seconds=time.perf_counter() - start,
        cloud=cloud,
    )
