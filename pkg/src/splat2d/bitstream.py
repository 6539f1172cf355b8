"""Bit-exact binary container for a quantized Gaussian cloud (.g2gs).

Layout, all little-endian:

==========  =====  =====================================================
offset      size   field
==========  =====  =====================================================
0           4      magic ``G2GS``
4           1      version (currently 1)
5           4      image height, uint32
9           4      image width, uint32
13          4      primitive count N, uint32
17          3      bit depths: position, covariance, color (one byte each)
20          64     quantizer table: 8 channels x (scale, offset) float32,
                   channel order mu_x, mu_y, cov_11, cov_12, cov_22, r, g, b
84          ...    payload: N primitives, primitive-major, channels in
                   table order, each code written MSB-first into one
                   continuous bit buffer, final byte zero-padded
==========  =====  =====================================================

Quantization happens against the float32-rounded quantizer parameters (the
values actually stored), so decoding reproduces the encoder's dequantized
attributes exactly and re-encoding a decoded cloud is byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import GaussianCloud
from .quantizer import CHANNELS, QuantizerBank, encodable_mask, quantize, dequantize, channel_values

MAGIC = b"G2GS"
VERSION = 1
HEADER_BYTES = 20
TABLE_BYTES = 64


class BitstreamError(Exception):
    """Base class for malformed-stream errors."""


class BadMagicError(BitstreamError):
    pass


class UnsupportedVersionError(BitstreamError):
    pass


class TruncatedStreamError(BitstreamError):
    pass


def _depths(bank: QuantizerBank) -> np.ndarray:
    return np.array([bank[name].bit_depth for name in CHANNELS], dtype=np.int64)


def _pack_codes(codes: np.ndarray, depths: np.ndarray) -> bytes:
    """(N, 8) integer codes -> MSB-first continuous bit buffer."""
    columns = []
    for j, depth in enumerate(depths):
        shifts = np.arange(depth - 1, -1, -1, dtype=np.int64)
        columns.append(((codes[:, j : j + 1] >> shifts) & 1).astype(np.uint8))
    bits = np.concatenate(columns, axis=1)
    return np.packbits(bits.ravel()).tobytes()


def _unpack_codes(payload: bytes, n: int, depths: np.ndarray) -> np.ndarray:
    bits_per_primitive = int(depths.sum())
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n * bits_per_primitive)
    bits = bits.reshape(n, bits_per_primitive).astype(np.int64)
    codes = np.empty((n, len(depths)), dtype=np.int64)
    start = 0
    for j, depth in enumerate(depths):
        weights = 1 << np.arange(depth - 1, -1, -1, dtype=np.int64)
        codes[:, j] = bits[:, start : start + depth] @ weights
        start += depth
    return codes


def payload_bytes(n: int, bits_per_primitive: int) -> int:
    return (n * bits_per_primitive + 7) // 8


def encode(cloud: GaussianCloud, bank: QuantizerBank, height: int, width: int) -> bytes:
    """Serialize the stored representation of ``cloud`` under ``bank``.

    Positions, filtered covariance entries, and colors are quantized with
    the float32-rounded quantizer parameters and bit-packed.  Every
    primitive must be finite and quantizable (strictly positive filtered
    variances); prune first if unsure.
    """
    n = cloud.n
    for value, name in ((n, "primitive count"), (height, "height"), (width, "width")):
        if not 0 <= value <= 0xFFFFFFFF:
            raise ValueError(f"{name} {value} outside the 32-bit range")
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be positive")
    if not encodable_mask(cloud).all():
        raise ValueError("cloud contains non-quantizable primitives; prune before encoding")
    stored = bank.storage_rounded()
    values = channel_values(cloud)
    for name in CHANNELS:
        if values[name].size and not np.isfinite(values[name]).all():
            raise ValueError(f"non-finite values in channel {name!r}")
    codes = np.column_stack([quantize(stored[name], values[name]) for name in CHANNELS])

    out = bytearray()
    out += MAGIC
    out.append(VERSION)
    out += struct.pack("<III", height, width, n)
    b_mu, b_cov, b_color = stored.bit_depths
    out += struct.pack("BBB", b_mu, b_cov, b_color)
    for name in CHANNELS:
        out += struct.pack("<ff", stored[name].scale, stored[name].offset)
    if n:
        out += _pack_codes(codes, _depths(stored))
    return bytes(out)


def decode(data: bytes) -> tuple[GaussianCloud, int, int]:
    """Parse a stream into a renderable cloud plus the image dimensions.

    The returned cloud is direct-variant with the dequantized filtered
    covariance stored as its entries and zero filter variances (the filter
    was baked in at encode time); it renders via the normal path.
    """
    if len(data) < len(MAGIC):
        raise TruncatedStreamError(f"stream of {len(data)} bytes is shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < HEADER_BYTES:
        raise TruncatedStreamError(f"header truncated at {len(data)} bytes")
    version = data[4]
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    height, width, n = struct.unpack_from("<III", data, 5)
    b_mu, b_cov, b_color = data[17], data[18], data[19]
    for depth in (b_mu, b_cov, b_color):
        if not 1 <= depth <= 16:
            raise BitstreamError(f"bit depth {depth} outside [1, 16]")
    bank = QuantizerBank.default(b_mu, b_cov, b_color)
    if len(data) < HEADER_BYTES + TABLE_BYTES:
        raise TruncatedStreamError("quantizer table truncated")
    for i, name in enumerate(CHANNELS):
        scale, offset = struct.unpack_from("<ff", data, HEADER_BYTES + 8 * i)
        bank[name].scale = float(scale)
        bank[name].offset = float(offset)
        if not bank[name].scale > 0.0:
            raise BitstreamError(f"non-positive scale for channel {name!r}")

    expected = HEADER_BYTES + TABLE_BYTES + payload_bytes(n, bank.bits_per_primitive)
    if len(data) < expected:
        raise TruncatedStreamError(f"payload truncated: {len(data)} < {expected} bytes")
    if len(data) > expected:
        raise BitstreamError(f"trailing data: {len(data)} > {expected} bytes")

    if n:
        codes = _unpack_codes(data[HEADER_BYTES + TABLE_BYTES :], n, _depths(bank))
        columns = {name: dequantize(bank[name], codes[:, j]) for j, name in enumerate(CHANNELS)}
    else:
        columns = {name: np.zeros(0) for name in CHANNELS}
    cloud = GaussianCloud(
        variant="direct",
        positions=np.column_stack([columns["mu_x"], columns["mu_y"]]),
        cov_params=np.column_stack([columns["cov_11"], columns["cov_12"], columns["cov_22"]]),
        colors=np.column_stack([columns["r"], columns["g"], columns["b"]]),
        filter_variances=np.zeros(n),
        max_budget=max(n, 1),
    )
    return cloud, height, width


def bpp(byte_len: int, height: int, width: int) -> float:
    """Bits per pixel of a stream of ``byte_len`` bytes for an HxW image."""
    if height * width <= 0:
        raise ValueError("image must contain at least one pixel")
    return 8.0 * byte_len / (height * width)
