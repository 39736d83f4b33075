"""Portable single-file raster container and dataset manifests.

Layout of a raster file:

    bytes 0..8    magic b"HMR1\\0\\0\\0\\0"
    bytes 8..12   header length u32, little-endian
    next          JSON header: width, height, channels, gsd, kind,
                  dtype (always "f32"), length (payload bytes)
    next          payload, little-endian float32, C order (channel, row, col)
    last 4        CRC32 of everything before it, u32 little-endian

Every parse failure raises RasterParseError carrying the byte offset of
the offending region.  The manifest is a JSON list of
{image, height, footprint, split} entries with paths relative to the
manifest file.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError, RasterParseError

__all__ = [
    "KINDS",
    "MAGIC",
    "ManifestEntry",
    "RasterPatch",
    "read_manifest",
    "read_raster",
    "write_manifest",
    "write_raster",
]

MAGIC = b"HMR1\x00\x00\x00\x00"
KINDS = ("image", "height", "footprint")
SPLITS = ("train", "val", "test")
_HEADER_FIELDS = ("width", "height", "channels", "gsd", "kind", "dtype", "length")


@dataclass
class RasterPatch:
    """One raster: values shaped (channels, height, width), float32."""

    width: int
    height: int
    channels: int
    gsd: float
    kind: str
    values: np.ndarray

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ContractViolation(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.width < 1 or self.height < 1 or self.channels < 1:
            raise ContractViolation(
                f"extents must be positive, got {self.width}x{self.height}x{self.channels}"
            )
        if self.gsd <= 0:
            raise ContractViolation(f"gsd must be positive, got {self.gsd}")
        expect = (self.channels, self.height, self.width)
        if self.values.shape != expect:
            raise ContractViolation(
                f"values shape {self.values.shape} does not match header {expect}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ContractViolation("values must be finite")
        if self.kind == "height" and np.any(self.values < 0):
            raise ContractViolation("height values must be >= 0")
        if self.kind == "footprint" and not np.all(
            (self.values == 0.0) | (self.values == 1.0)
        ):
            raise ContractViolation("footprint values must be 0 or 1")


def write_raster(patch: RasterPatch, path: str | Path) -> None:
    patch.validate()
    payload = np.ascontiguousarray(patch.values, dtype="<f4").tobytes()
    header = {
        "width": patch.width,
        "height": patch.height,
        "channels": patch.channels,
        "gsd": patch.gsd,
        "kind": patch.kind,
        "dtype": "f32",
        "length": len(payload),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def read_raster(path: str | Path) -> RasterPatch:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read raster file {path}: {exc}") from exc
    if len(raw) < 16:
        raise RasterParseError(
            f"file too short for magic and header length ({len(raw)} bytes)",
            offset=len(raw),
        )
    if raw[:8] != MAGIC:
        raise RasterParseError(f"bad magic {raw[:8]!r}", offset=0)
    (header_len,) = struct.unpack_from("<I", raw, 8)
    header_end = 12 + header_len
    if header_end + 4 > len(raw):
        raise RasterParseError(
            f"declared header length {header_len} exceeds file size {len(raw)}", offset=8
        )
    try:
        header = json.loads(raw[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RasterParseError(f"header is not valid JSON: {exc}", offset=12) from exc
    if not isinstance(header, dict):
        raise RasterParseError("header must be a JSON object", offset=12)
    missing = [k for k in _HEADER_FIELDS if k not in header]
    if missing:
        raise RasterParseError(f"header missing fields {missing}", offset=12)
    if header["dtype"] != "f32":
        raise RasterParseError(f"unsupported dtype {header['dtype']!r}", offset=12)
    if header["kind"] not in KINDS:
        raise RasterParseError(f"unknown kind {header['kind']!r}", offset=12)
    try:
        width = int(header["width"])
        height = int(header["height"])
        channels = int(header["channels"])
        gsd = float(header["gsd"])
        length = int(header["length"])
    except (TypeError, ValueError) as exc:
        raise RasterParseError(f"non-numeric header field: {exc}", offset=12) from exc
    if min(width, height, channels) < 1:
        raise RasterParseError(
            f"extents must be positive, got {width}x{height}x{channels}", offset=12
        )
    expect_len = width * height * channels * 4
    if length != expect_len:
        raise RasterParseError(
            f"declared payload length {length} does not match "
            f"{width}x{height}x{channels} f32 ({expect_len} bytes)",
            offset=12,
        )
    payload_end = header_end + length
    if payload_end + 4 != len(raw):
        raise RasterParseError(
            f"file has {len(raw)} bytes but header implies {payload_end + 4} "
            "(truncated payload or checksum)",
            offset=min(payload_end, len(raw)),
        )
    (stored_crc,) = struct.unpack_from("<I", raw, payload_end)
    actual_crc = zlib.crc32(raw[:payload_end])
    if stored_crc != actual_crc:
        raise RasterParseError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            offset=payload_end,
        )
    values = (
        np.frombuffer(raw[header_end:payload_end], dtype="<f4")
        .reshape(channels, height, width)
        .copy()
    )
    patch = RasterPatch(
        width=width, height=height, channels=channels, gsd=gsd,
        kind=header["kind"], values=values,
    )
    try:
        patch.validate()
    except ContractViolation as exc:
        raise RasterParseError(f"payload violates kind contract: {exc}", offset=header_end)
    return patch


@dataclass
class ManifestEntry:
    """Paths of one (image, height, footprint) triple plus its split tag."""

    image: Path
    height: Path
    footprint: Path
    split: str


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    base = Path(path).parent
    records = []
    for e in entries:
        if e.split not in SPLITS:
            raise ContractViolation(f"split must be one of {SPLITS}, got {e.split!r}")
        records.append(
            {
                "image": str(Path(e.image).relative_to(base)),
                "height": str(Path(e.height).relative_to(base)),
                "footprint": str(Path(e.footprint).relative_to(base)),
                "split": e.split,
            }
        )
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    p = Path(path)
    try:
        records = json.loads(p.read_text())
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise DataError(f"manifest {path} must be a JSON list")
    base = p.parent
    entries = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise DataError(f"manifest entry {i} must be an object")
        missing = [k for k in ("image", "height", "footprint", "split") if k not in rec]
        if missing:
            raise DataError(f"manifest entry {i} missing fields {missing}")
        if rec["split"] not in SPLITS:
            raise DataError(
                f"manifest entry {i} has unknown split {rec['split']!r}, want one of {SPLITS}"
            )
        entries.append(
            ManifestEntry(
                image=base / rec["image"],
                height=base / rec["height"],
                footprint=base / rec["footprint"],
                split=rec["split"],
            )
        )
    return entries
