"""Acceptance suite: one test per release criterion, each printing a
PASS line with the measured quantities (run pytest with -s or -v to see
them).  The two paper-scale criteria (7 and 8) need a Kodak photograph
and hours of CPU; point SPLAT2D_KODAK_IMAGE at a 768x512 PNG to enable
them.
"""

import os
import time

import numpy as np
import pytest

from splat2d import bitstream
from splat2d.caf import apply_caf_policy
from splat2d.densify import grow, growth_count, prune, sparse_init
from splat2d.metrics import ms_ssim, psnr, time_decode
from splat2d.model import GaussianCloud, TrainConfig, covariance_param_grads
from splat2d.quantizer import (
    LsqChannelQuantizer,
    QuantizerBank,
    calibrate_bank,
    dequantize,
    fake_quant_backward,
    qat_finetune,
    quantize,
)
from splat2d.rasterizer import accumulated_weight, render, render_backward, render_naive
from splat2d.trainer import fit
from conftest import (
    assert_gradients_close,
    finite_difference_gradients,
    make_random_cloud,
    natural_image,
)

KODAK_IMAGE = os.environ.get("SPLAT2D_KODAK_IMAGE")
needs_kodak = pytest.mark.skipif(
    not KODAK_IMAGE,
    reason="paper-scale criterion: set SPLAT2D_KODAK_IMAGE to a 768x512 Kodak PNG "
    "(runtime minutes to hours; documented as non-gating)",
)


def report(criterion: int, detail: str) -> None:
    print(f"\nACCEPTANCE C{criterion:02d}: PASS ({detail})")


def test_c01_gradient_correctness():
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for variant in ("direct", "cholesky", "rs"):
        for _ in range(20):
            cloud = make_random_cloud(rng, 8, 16, 16, variant=variant)
            d_pix = rng.normal(size=(16, 16, 3))
            grads = render_backward(cloud, (16, 16), d_pix, np.inf)
            d_params = covariance_param_grads(cloud.cov_params, variant, grads.d_covariance)
            fd_pos, fd_par, fd_col = finite_difference_gradients(cloud, (16, 16), d_pix, h=1e-5)
            assert_gradients_close(grads.d_position, fd_pos, rel=1e-4, abs_floor=1e-8)
            assert_gradients_close(d_params, fd_par, rel=1e-4, abs_floor=1e-8)
            assert_gradients_close(grads.d_color, fd_col, rel=1e-4, abs_floor=1e-8)
            for analytic, fd in ((grads.d_position, fd_pos), (d_params, fd_par), (grads.d_color, fd_col)):
                denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
                worst = max(worst, float(np.max(np.abs(analytic - fd) / denom)))
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    report(1, f"3 variants x 20 scenes, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_c02_rasterizer_oracle_equivalence():
    rng = np.random.default_rng(102)
    worst_exact, worst_cut = 0.0, 0.0
    for i in range(50):
        h, w = int(rng.integers(4, 24)), int(rng.integers(4, 24))
        variant = ("direct", "cholesky", "rs")[i % 3]
        cloud = make_random_cloud(rng, int(rng.integers(1, 40)), h, w, variant=variant)
        naive = render_naive(cloud, (h, w))
        exact_diff = float(np.max(np.abs(render(cloud, (h, w), np.inf) - naive)))
        assert exact_diff < 1e-12
        cmax = max(float(np.max(np.abs(cloud.colors))), 1e-30)
        cut_diff = float(np.max(np.abs(render(cloud, (h, w), 6.0) - naive)))
        assert cut_diff < 1e-6 * cmax
        worst_exact = max(worst_exact, exact_diff)
        worst_cut = max(worst_cut, cut_diff / cmax)
    report(2, f"50 clouds, max diff {worst_exact:.1e} (no cutoff), {worst_cut:.1e}x|c| at 6 sigma")


def test_c03_pruning_soundness():
    rng = np.random.default_rng(103)
    for _ in range(20):
        cloud = make_random_cloud(rng, 30, 12, 12, variant="direct")
        n_bad = int(rng.integers(1, 8))
        bad_idx = rng.choice(30, size=n_bad, replace=False)
        for j in bad_idx:
            # indefinite or negative-diagonal, with no filter rescue
            if rng.random() < 0.5:
                cloud.cov_params[j] = [1.0, 3.0, 1.0]
            else:
                cloud.cov_params[j] = [-1.0, 0.0, 1.0]
            cloud.filter_variances[j] = 0.0
        before = render(cloud, (12, 12), np.inf)
        pruned, removed = prune(cloud)
        assert removed == n_bad
        after = render(pruned, (12, 12), np.inf)
        assert np.array_equal(before, after)
    report(3, "20 clouds, removed counts exact, renders bit-identical")


def test_c04_densification_schedule():
    assert growth_count(5000, 10_000) == 2500
    assert growth_count(10_000, 10_000) == 0
    assert growth_count(9999, 10_000) == 0
    m = 1024
    rng = np.random.default_rng(104)
    gt = rng.random((16, 16, 3))
    cloud = sparse_init(m, 16, 16, rng, caf_enabled=True)
    for j in range(1, 10):
        cloud = grow(cloud, gt, np.zeros_like(gt), rng)
        assert cloud.n == m - m // 2 ** (j + 1), f"event {j}"
    report(4, "N follows M - M/2^(j+1) for j=1..9 at M=1024; floor points verified")


def test_c05_caf_hole_reduction():
    image = natural_image(256, 256)
    height, width = image.shape[:2]
    cloud = sparse_init(2000, height, width, np.random.default_rng(105), caf_enabled=True)
    with_caf = cloud
    without = cloud.copy()
    apply_caf_policy(without, enabled=False, constant_s=0.5)
    holes_caf = float(np.mean(accumulated_weight(with_caf, (height, width)) < 1e-3))
    holes_const = float(np.mean(accumulated_weight(without, (height, width)) < 1e-3))
    assert holes_caf < holes_const
    report(5, f"hole fraction {holes_caf:.4f} with CAF vs {holes_const:.4f} with s=0.5")


def _ablation_gap(image, budget, seeds=(0, 1, 2)):
    """Median full-pipeline vs no-densification/no-filter PSNR gap.

    The paper's 50k-iteration timeline is scaled into T=10k: growth window
    at 10%..90% of T and the single learning-rate halving at 40% of T.
    """
    full_scores, base_scores = [], []
    for seed in seeds:
        full_cfg = TrainConfig(
            max_gaussians=budget,
            iterations=10_000,
            seed=seed,
            grow_start=1000,
            grow_interval=1000,
            grow_stop=9000,
            prune_interval=100,
            lr_decay_at=4000,
            log_interval=5000,
        )
        base_cfg = TrainConfig(
            max_gaussians=budget,
            iterations=10_000,
            seed=seed,
            enable_densification=False,
            enable_caf=False,
            constant_filter_variance=0.5,
            lr_decay_at=4000,
            log_interval=5000,
        )
        full_scores.append(fit(image, full_cfg).final_psnr)
        base_scores.append(fit(image, base_cfg).final_psnr)
    gap = float(np.median(full_scores) - np.median(base_scores))
    return gap, full_scores, base_scores


@pytest.mark.slow
def test_c06_desk_scale_ablation_gain():
    # KNOWN RED: at M=2000 a 128x128 plane gives ~8 px per primitive, ~10x
    # denser than the paper's densest operating point (5k on 768x512 = 79
    # px per primitive), so the fixed-budget baseline saturates and no
    # crop we tested attains the stated margin; the mechanism itself wins
    # at the area-proportional budget (see the supplement test and the
    # decisions ledger for the full analysis).
    image = natural_image(128, 128)
    started = time.perf_counter()
    gap, full_scores, base_scores = _ablation_gap(image, budget=2000)
    elapsed = time.perf_counter() - started
    assert gap >= 1.0, (
        f"median gap {gap:.3f} dB below the stated 1.0 dB "
        f"(full {sorted(full_scores)}, baseline {sorted(base_scores)}; "
        f"budget 2000 on 128x128 is outside the scarcity regime the "
        f"criterion's paper analogue presumes; supplement test covers the "
        f"area-proportional budget)"
    )
    report(
        6,
        f"median {np.median(full_scores):.2f} vs {np.median(base_scores):.2f} dB "
        f"(gap {gap:.2f} dB, 3 seeds, {elapsed / 60:.1f} min)",
    )


@pytest.mark.slow
def test_c06_supplement_scarce_budget_gain():
    # the paper's budget, scaled by pixel area (5000 x 16384/393216 ~ 208
    # -> M=200): the densification-plus-filter pipeline must clear the
    # same 1.0 dB margin here
    image = natural_image(128, 128)
    started = time.perf_counter()
    gap, full_scores, base_scores = _ablation_gap(image, budget=200)
    elapsed = time.perf_counter() - started
    assert gap >= 1.0, f"median gap {gap:.3f} dB below 1.0 dB at the scarce budget"
    report(
        6,
        f"supplement: median {np.median(full_scores):.2f} vs {np.median(base_scores):.2f} dB "
        f"at M=200 (gap {gap:.2f} dB, 3 seeds, {elapsed / 60:.1f} min)",
    )


@pytest.fixture(scope="module")
def kodak_representation():
    from splat2d.io import load_image

    image = load_image(KODAK_IMAGE)
    cfg = TrainConfig(max_gaussians=5000, iterations=50_000, seed=0, log_interval=5000)
    return image, fit(image, cfg, echo=True)


@needs_kodak
@pytest.mark.slow
def test_c07_paper_scale_representation(kodak_representation):
    image, rep = kodak_representation
    assert image.shape[:2] == (512, 768) or image.shape[:2] == (768, 512)
    assert rep.final_psnr >= 30.0
    report(7, f"{rep.final_psnr:.2f} dB at M=5000, T=50k (paper point 31.83 dB)")


@needs_kodak
@pytest.mark.slow
def test_c08_quantization_fidelity(kodak_representation):
    image, rep = kodak_representation
    cfg = TrainConfig(max_gaussians=5000, iterations=50_000, warmup_iterations=6000,
                      seed=0, log_interval=5000)
    warm_cfg = TrainConfig.from_dict({**cfg.to_dict(), "iterations": cfg.warmup_iterations})
    warm = fit(image, warm_cfg, echo=True)
    bank = calibrate_bank(QuantizerBank.default(), warm.cloud)
    _, _, qat_report = qat_finetune(image, warm.cloud, bank, cfg, echo=True)
    loss_db = rep.final_psnr - qat_report.final_psnr
    assert loss_db <= 1.5
    report(8, f"QAT {qat_report.final_psnr:.2f} vs unquantized {rep.final_psnr:.2f} dB "
              f"(loses {loss_db:.2f} dB)")


def test_c09_rate_accounting():
    rng = np.random.default_rng(109)
    for n in (0, 1, 7, 100, 5898):
        expected = (72 * n + 7) // 8
        assert bitstream.payload_bytes(n, 72) == expected
    payload = bitstream.payload_bytes(5898, 72)
    rate = bitstream.bpp(payload, 768, 512)
    assert abs(rate - 1.080) < 1e-3
    # attribute values cannot change the size, only N and the profile do
    for _ in range(5):
        cloud = make_random_cloud(rng, 13, 8, 8)
        bank = calibrate_bank(QuantizerBank.default(), cloud)
        assert len(bitstream.encode(cloud, bank, 8, 8)) == 84 + bitstream.payload_bytes(13, 72)
    report(9, f"payload ceil(72N/8) exact; N=5898 at 768x512 -> {rate:.4f} bpp")


def test_c10_bitstream_round_trip():
    rng = np.random.default_rng(110)
    for _ in range(1000):
        n = int(rng.integers(0, 12))
        cloud = make_random_cloud(rng, n, 6, 6)
        bits = tuple(int(b) for b in rng.integers(1, 16, 3))
        bank = QuantizerBank.default(*bits)
        if n:
            calibrate_bank(bank, cloud)
        h, w = int(rng.integers(1, 64)), int(rng.integers(1, 64))
        data = bitstream.encode(cloud, bank, h, w)
        decoded, hh, ww = bitstream.decode(data)
        assert (hh, ww) == (h, w)
        assert bitstream.encode(decoded, bank, hh, ww) == data

    sample = make_random_cloud(rng, 2, 6, 6)
    reference = bitstream.encode(sample, calibrate_bank(QuantizerBank.default(), sample), 6, 6)
    with pytest.raises(bitstream.BadMagicError):
        bitstream.decode(b"XXXX" + reference[4:])
    with pytest.raises(bitstream.TruncatedStreamError):
        bitstream.decode(reference[:-1])
    with pytest.raises(bitstream.UnsupportedVersionError):
        bitstream.decode(reference[:4] + bytes([99]) + reference[5:])
    report(10, "1000 fuzzed clouds byte-identical after encode-decode-encode; errors distinct")


def test_c11_quantizer_properties():
    # round-trip idempotence over every code at the tabulated depths
    for bits in (1, 6, 10, 12):
        for domain in ("linear", "log"):
            q_max = (1 << bits) - 1
            q = LsqChannelQuantizer(
                bit_depth=bits,
                scale=0.37 if domain == "linear" else 30.0 / q_max,
                offset=-1.25 if domain == "linear" else 0.05,
                domain=domain,
            )
            codes = np.arange(q.q_max + 1)
            np.testing.assert_array_equal(quantize(q, dequantize(q, codes)), codes)

    # saturation branches
    q = LsqChannelQuantizer(bit_depth=6, scale=0.5, offset=1.0)
    assert fake_quant_backward(q, -50.0, 3.0) == (0.0, 0.0, 3.0)
    d_v, d_s, d_b = fake_quant_backward(q, 500.0, 2.0)
    assert (d_v, d_s, d_b) == (0.0, 2.0 * q.q_max, 2.0)

    # branch-frozen finite difference on the scale gradient
    rng = np.random.default_rng(111)
    values = rng.uniform(1.0 + 0.5, 1.0 + 0.5 * 62, 256)
    _, d_s, _ = fake_quant_backward(q, values, np.ones_like(values))
    u0 = (values - q.offset) / q.scale
    residual = np.rint(u0) - u0
    h = 1e-7

    def surrogate(scale):
        return np.sum(((values - q.offset) / scale + residual) * scale + q.offset)

    fd = (surrogate(q.scale + h) - surrogate(q.scale - h)) / (2 * h)
    assert d_s == pytest.approx(fd, rel=1e-6)
    report(11, "idempotent codes at b in {1,6,10,12}; saturation and scale gradients verified")


def test_c12_metrics_sanity(astronaut_crop_128):
    value = psnr(np.full((16, 16, 3), 0.6), np.full((16, 16, 3), 0.5))
    assert value == pytest.approx(20.0, abs=1e-12)
    assert ms_ssim(astronaut_crop_128, astronaut_crop_128) == 1.0
    rng = np.random.default_rng(112)
    other = np.clip(astronaut_crop_128 + rng.normal(scale=0.08, size=astronaut_crop_128.shape), 0, 1)
    assert abs(ms_ssim(astronaut_crop_128, other) - ms_ssim(other, astronaut_crop_128)) < 1e-12
    noisy_psnrs = []
    for sigma in (0.01, 0.05, 0.1):
        noisy = np.clip(astronaut_crop_128 + rng.normal(scale=sigma, size=astronaut_crop_128.shape), 0, 1)
        noisy_psnrs.append(psnr(astronaut_crop_128, noisy))
    assert noisy_psnrs[0] > noisy_psnrs[1] > noisy_psnrs[2]
    report(12, f"uniform-0.1 psnr {value:.12f} dB; identity/symmetry/monotonicity hold")


def test_c13_decode_throughput():
    rng = np.random.default_rng(113)
    n, height, width = 5000, 768, 512
    a = rng.uniform(0.5, 4.0, n)
    c = rng.uniform(0.5, 4.0, n)
    b = np.sqrt(a * c) * rng.uniform(-0.7, 0.7, n)
    cloud = GaussianCloud(
        variant="direct",
        positions=np.column_stack([rng.uniform(0, width, n), rng.uniform(0, height, n)]),
        cov_params=np.column_stack([a, b, c]),
        colors=rng.normal(0.3, 0.3, (n, 3)),
        filter_variances=rng.uniform(0.1, 2.0, n),
        max_budget=n,
    )
    data = bitstream.encode(cloud, calibrate_bank(QuantizerBank.default(), cloud), height, width)
    time_decode(data, repeats=1)  # one-time kernel warm-up outside the measurement
    fps, first = time_decode(data, repeats=9)
    assert first.shape == (height, width, 3)
    # threshold is hardware-relative (reference: commodity 8-core CPU)
    assert fps > 20.0, f"measured {fps:.1f} fps"
    report(13, f"{fps:.1f} fps decode+render, 5000 primitives at 768x512, {os.cpu_count()} cores")


def test_c14_determinism(tmp_path):
    image = natural_image(48, 48, offset=(300, 140))
    cfg = TrainConfig(
        max_gaussians=200,
        iterations=120,
        seed=14,
        grow_start=40,
        grow_interval=40,
        grow_stop=120,
        prune_interval=20,
        log_interval=40,
    )
    import numba

    numba.set_num_threads(1)
    try:
        a = fit(image, cfg)
        b = fit(image, cfg)
    finally:
        numba.set_num_threads(numba.config.NUMBA_NUM_THREADS)
    assert a.cloud.allclose(b.cloud)
    assert [(p.iteration, p.loss, p.psnr, p.n_gaussians) for p in a.history] == [
        (p.iteration, p.loss, p.psnr, p.n_gaussians) for p in b.history
    ]

    # end-to-end stream determinism through the CLI, single worker
    from splat2d.cli import main
    from splat2d.io import save_image

    png = tmp_path / "in.png"
    save_image(png, image)
    outs = []
    for name in ("one.g2gs", "two.g2gs"):
        out = tmp_path / name
        argv = [
            "encode", "--input", str(png), "--out", str(out), "--quiet", "--workers", "1",
            "--max-gaussians", "60", "--iterations", "60", "--warmup", "20",
            "--log-interval", "20", "--seed", "14",
        ]
        assert main(argv) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    report(14, "bit-identical reports and .g2gs bytes across reruns at one worker")
