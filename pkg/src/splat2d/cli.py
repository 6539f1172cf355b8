"""Command-line surface: fit, encode, decode, ablate, replay.

Every command writes a JSON manifest next to its primary output recording
the resolved configuration; ``splat2d replay <manifest>`` re-runs it.
Runs are exactly reproducible for a fixed seed (any worker count).

Exit codes: 0 success; 1 self-check or unexpected failure; 2 usage,
configuration, or input validation error; 3 file I/O error; 4 bad magic;
5 truncated stream; 6 unsupported stream version; 7 other malformed stream.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, bitstream
from .io import load_cloud, load_image, save_cloud, save_image
from .metrics import QualityReport, ms_ssim, psnr, time_decode, write_csv
from .model import VARIANTS, TrainConfig, renderable_mask
from .quantizer import QuantizerBank, calibrate_bank, fake_quant_cloud, qat_finetune
from .rasterizer import render
from .trainer import fit

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_BAD_MAGIC = 4
EXIT_TRUNCATED = 5
EXIT_BAD_VERSION = 6
EXIT_BITSTREAM = 7

DEFAULT_ARMS = tuple(
    f"{variant}{'+d3' if d3 else ''}{'+caf' if caf_on else ''}"
    for variant in VARIANTS
    for d3 in (True, False)
    for caf_on in (True, False)
)


@dataclass
class RunManifest:
    """Reproducibility record emitted alongside every command's outputs."""

    command: str
    arguments: dict
    train_config: dict | None
    package_version: str

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RunManifest":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(**raw)

    def resolved_config(self) -> TrainConfig | None:
        return None if self.train_config is None else TrainConfig.from_dict(self.train_config)


def _apply_workers(workers: int) -> None:
    # 0 keeps numba's default (all cores); results are identical either way
    if workers:
        import numba

        numba.set_num_threads(max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))


def _resolve_workers(value: int | None) -> int:
    if value is not None:
        return value
    return int(os.environ.get("SPLAT2D_WORKERS", "0"))


def _config_from_opts(opts: dict) -> TrainConfig:
    return TrainConfig(
        max_gaussians=opts["max_gaussians"],
        iterations=opts["iterations"],
        warmup_iterations=opts.get("warmup", 6000),
        caf_alpha=opts["alpha"],
        seed=opts["seed"],
        variant=opts["param"],
        enable_densification=not opts["no_densify"],
        enable_caf=not opts["no_caf"],
        constant_filter_variance=opts["constant_s"],
        cutoff_sigmas=opts["cutoff_sigmas"],
        log_interval=opts["log_interval"],
    )


def _sibling(primary: str, suffix: str) -> str:
    return str(Path(primary).with_suffix(suffix))


def _write_manifest(command: str, opts: dict, cfg: TrainConfig | None, path) -> None:
    RunManifest(
        command=command,
        arguments=opts,
        train_config=None if cfg is None else cfg.to_dict(),
        package_version=__version__,
    ).save(path)


def cmd_fit(opts: dict) -> int:
    cfg = _config_from_opts(opts)
    _apply_workers(opts["workers"])
    image = load_image(opts["input"])
    report = fit(image, cfg, echo=not opts["quiet"])

    out = opts["out"]
    save_cloud(out, report.cloud)
    rendered = np.clip(render(report.cloud, image.shape[:2], cfg.cutoff_sigmas), 0.0, 1.0)
    render_path = opts["render_out"] or _sibling(out, ".png")
    save_image(render_path, rendered)
    log_path = opts["log"] or _sibling(out, ".log.csv")
    report.write_log(log_path)
    _write_manifest("fit", opts, cfg, _sibling(out, ".manifest.json"))
    print(
        f"fit: n={report.cloud.n}  psnr={report.final_psnr:.3f} dB  "
        f"time={report.encode_seconds:.1f}s  cloud={out}"
    )
    return EXIT_OK


def cmd_encode(opts: dict) -> int:
    cfg = _config_from_opts(opts)
    if cfg.warmup_iterations > cfg.iterations:
        print("encode: --warmup must not exceed --iterations", file=sys.stderr)
        return EXIT_USAGE
    _apply_workers(opts["workers"])
    image = load_image(opts["input"])
    height, width = image.shape[:2]
    started = time.perf_counter()

    warm_cfg = TrainConfig.from_dict({**cfg.to_dict(), "iterations": cfg.warmup_iterations})
    warm = fit(image, warm_cfg, echo=not opts["quiet"])
    bit_mu, bit_cov, bit_color = opts["bits"]
    bank = calibrate_bank(QuantizerBank.default(bit_mu, bit_cov, bit_color), warm.cloud)
    cloud, bank, _ = qat_finetune(image, warm.cloud, bank, cfg, echo=not opts["quiet"])

    # final prune against the decoder-visible covariance, then serialize
    quantized, qmask = fake_quant_cloud(cloud, bank.storage_rounded())
    e11, e12, e22 = quantized.filtered_entries()
    cloud = cloud.take(qmask & renderable_mask(e11, e12, e22))
    data = bitstream.encode(cloud, bank, height, width)
    encode_seconds = time.perf_counter() - started

    out = opts["out"]
    with open(out, "wb") as fh:
        fh.write(data)

    # self-check: the written stream must decode to the attributes we rendered
    decoded, dec_h, dec_w = bitstream.decode(data)
    quantized, _ = fake_quant_cloud(cloud, bank.storage_rounded())
    check = np.max(
        np.abs(render(decoded, (dec_h, dec_w), cfg.cutoff_sigmas)
               - render(quantized, (dec_h, dec_w), cfg.cutoff_sigmas)),
        initial=0.0,
    )
    if (dec_h, dec_w) != (height, width) or check > 1e-6:
        print(f"encode: self-check failed (max render diff {check:.3e})", file=sys.stderr)
        return EXIT_FAILURE

    rendered = np.clip(render(decoded, (height, width), cfg.cutoff_sigmas), 0.0, 1.0)
    report = QualityReport(
        psnr=psnr(rendered, image),
        ms_ssim=ms_ssim(rendered, image),
        bpp=bitstream.bpp(len(data), height, width),
        encode_seconds=encode_seconds,
    )
    _write_manifest("encode", opts, cfg, _sibling(out, ".manifest.json"))
    if opts["log"]:
        flags = ("d3+" if cfg.enable_densification else "") + ("caf" if cfg.enable_caf else "")
        write_csv(
            opts["log"],
            [report.csv_row(Path(opts["input"]).stem, cfg.max_gaussians, cfg.iterations,
                            cfg.variant, flags.strip("+"))],
        )
    print(
        f"encode: n={cloud.n}  bpp={report.bpp:.4f}  psnr={report.psnr:.3f} dB  "
        f"ms-ssim={report.ms_ssim:.4f}  time={encode_seconds:.1f}s  stream={out}"
    )
    return EXIT_OK


def cmd_decode(opts: dict) -> int:
    _apply_workers(opts["workers"])
    try:
        with open(opts["input"], "rb") as fh:
            data = fh.read()
    except OSError as exc:
        print(f"decode: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        fps, rendered = time_decode(data, repeats=opts["fps_repeats"])
    except bitstream.BadMagicError as exc:
        print(f"decode: {exc}", file=sys.stderr)
        return EXIT_BAD_MAGIC
    except bitstream.TruncatedStreamError as exc:
        print(f"decode: {exc}", file=sys.stderr)
        return EXIT_TRUNCATED
    except bitstream.UnsupportedVersionError as exc:
        print(f"decode: {exc}", file=sys.stderr)
        return EXIT_BAD_VERSION
    except bitstream.BitstreamError as exc:
        print(f"decode: {exc}", file=sys.stderr)
        return EXIT_BITSTREAM
    save_image(opts["out"], np.clip(rendered, 0.0, 1.0))
    _write_manifest("decode", opts, None, _sibling(opts["out"], ".manifest.json"))
    print(f"decode: wrote {opts['out']}  ({fps:.1f} fps over {opts['fps_repeats']} repeats)")
    return EXIT_OK


def _parse_arm(token: str) -> tuple[str, bool, bool]:
    parts = token.split("+")
    variant = parts[0]
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant in arm {token!r}")
    extras = set(parts[1:])
    if not extras <= {"d3", "caf"}:
        raise ValueError(f"unknown flags in arm {token!r}")
    return variant, "d3" in extras, "caf" in extras


def cmd_ablate(opts: dict) -> int:
    _apply_workers(opts["workers"])
    image = load_image(opts["input"])
    arms = DEFAULT_ARMS if opts["arms"] == ["all"] else tuple(opts["arms"])
    rows = []
    for m in opts["max_gaussians"]:
        for token in arms:
            variant, d3_on, caf_on = _parse_arm(token)
            cfg = TrainConfig(
                max_gaussians=m,
                iterations=opts["iterations"],
                caf_alpha=opts["alpha"],
                seed=opts["seed"],
                variant=variant,
                enable_densification=d3_on,
                enable_caf=caf_on,
                constant_filter_variance=opts["constant_s"],
                cutoff_sigmas=opts["cutoff_sigmas"],
                log_interval=opts["log_interval"],
            )
            report = fit(image, cfg, echo=False)
            rendered = np.clip(render(report.cloud, image.shape[:2], cfg.cutoff_sigmas), 0.0, 1.0)
            quality = QualityReport(
                psnr=psnr(rendered, image),
                ms_ssim=ms_ssim(rendered, image),
                encode_seconds=report.encode_seconds,
            )
            flags = ("d3+" if d3_on else "") + ("caf" if caf_on else "")
            rows.append(
                quality.csv_row(Path(opts["input"]).stem, m, cfg.iterations, variant,
                                flags.strip("+") or "none")
            )
            if not opts["quiet"]:
                print(f"ablate: M={m} arm={token:<16} psnr={quality.psnr:.3f} dB")
    write_csv(opts["out"], rows)
    _write_manifest("ablate", opts, None, _sibling(opts["out"], ".manifest.json"))
    print(f"ablate: wrote {len(rows)} rows to {opts['out']}")
    return EXIT_OK


def cmd_replay(opts: dict) -> int:
    manifest = RunManifest.load(opts["manifest"])
    handler = _HANDLERS.get(manifest.command)
    if handler is None:
        print(f"replay: manifest names unknown command {manifest.command!r}", file=sys.stderr)
        return EXIT_USAGE
    print(f"replay: re-running {manifest.command} from {opts['manifest']}")
    return handler(manifest.arguments)


_HANDLERS = {
    "fit": cmd_fit,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "ablate": cmd_ablate,
}


def _add_common_fit_options(p: argparse.ArgumentParser, multi_budget: bool = False) -> None:
    p.add_argument("--input", required=True, help="input image (8-bit RGB PNG or PPM)")
    if multi_budget:
        p.add_argument("--max-gaussians", type=int, nargs="+", default=[5000], metavar="M",
                       help="primitive budgets, one sweep per value (default 5000)")
    else:
        p.add_argument("--max-gaussians", type=int, default=5000, metavar="M",
                       help="primitive budget (default 5000)")
    p.add_argument("--iterations", type=int, default=50_000, metavar="T")
    p.add_argument("--param", choices=VARIANTS, default="direct",
                   help="covariance parameterization")
    p.add_argument("--alpha", type=float, default=32.0, help="content-aware filter strength divisor")
    p.add_argument("--no-densify", action="store_true", help="disable densification (fixed count M)")
    p.add_argument("--no-caf", action="store_true", help="constant filter variance instead of adaptive")
    p.add_argument("--constant-s", type=float, default=0.5,
                   help="filter variance used when --no-caf is set")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cutoff-sigmas", type=float, default=6.0,
                   help="per-axis bounding-box cutoff in standard deviations")
    p.add_argument("--log-interval", type=int, default=500)
    p.add_argument("--workers", type=int, default=None,
                   help="rasterizer threads (default: SPLAT2D_WORKERS or all cores)")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splat2d",
        description="Represent and compress images as budgeted 2D Gaussian primitives.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a Gaussian cloud to an image")
    _add_common_fit_options(p_fit)
    p_fit.add_argument("--out", required=True, help="output cloud dump (.g2gc)")
    p_fit.add_argument("--render-out", default=None, help="rendered image path (default: <out>.png)")
    p_fit.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")

    p_enc = sub.add_parser("encode", help="fit, quantization-aware train, and write a .g2gs stream")
    _add_common_fit_options(p_enc)
    p_enc.add_argument("--warmup", type=int, default=6000,
                       help="representation iterations before quantization-aware training")
    p_enc.add_argument("--bits", type=int, nargs=3, default=[12, 10, 6],
                       metavar=("B_MU", "B_COV", "B_COLOR"),
                       help="bit depths for position/covariance/color (default 12 10 6)")
    p_enc.add_argument("--out", required=True, help="output stream (.g2gs)")
    p_enc.add_argument("--log", default=None, help="optional quality CSV")

    p_dec = sub.add_parser("decode", help="decode a .g2gs stream to an image")
    p_dec.add_argument("--input", required=True, help="input stream (.g2gs)")
    p_dec.add_argument("--out", required=True, help="output image path")
    p_dec.add_argument("--fps-repeats", type=int, default=9,
                       help="timed decode+render repeats for the FPS figure")
    p_dec.add_argument("--workers", type=int, default=None)

    p_abl = sub.add_parser("ablate", help="factorial parameterization/densification/filter sweep")
    _add_common_fit_options(p_abl, multi_budget=True)
    p_abl.add_argument("--arms", nargs="+", default=["all"],
                       help="arm tokens like direct+d3+caf (default: full 12-arm factorial)")
    p_abl.add_argument("--out", required=True, help="report CSV path")

    p_rep = sub.add_parser("replay", help="re-run a command from its manifest")
    p_rep.add_argument("manifest", help="path to a .manifest.json written by another command")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = vars(args).copy()
    command = opts.pop("command")
    if command == "replay":
        return cmd_replay(opts)
    if "workers" in opts:
        opts["workers"] = _resolve_workers(opts["workers"])
    try:
        return _HANDLERS[command](opts)
    except (ValueError, OSError) as exc:
        print(f"{command}: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
