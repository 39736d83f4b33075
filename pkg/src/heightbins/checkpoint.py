"""Parameter checkpoint container.

Layout: a plain-text header followed by one contiguous binary payload.

    HBCKPT1\n
    meta <json, one line>\n
    tensor <name> <shape> <offset>\n      (one line per tensor)
    end <payload-bytes>\n
    <payload>

Shapes are written as comma-joined dims in parentheses, e.g. (64,3,3,3).
Offsets are byte positions relative to the start of the payload.  Payload
values are little-endian 64-bit floats in C order, concatenated in header
order.  The meta line carries arbitrary JSON (typically the run config).
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

__all__ = ["save_checkpoint", "load_checkpoint"]

_MAGIC = b"HBCKPT1"


def _format_shape(shape: tuple[int, ...]) -> str:
    return "(" + ",".join(str(d) for d in shape) + ")"


def _parse_shape(text: str) -> tuple[int, ...]:
    if not (text.startswith("(") and text.endswith(")")):
        raise DataError(f"checkpoint: bad shape token '{text}'")
    inner = text[1:-1]
    if not inner:
        return ()
    try:
        return tuple(int(d) for d in inner.split(","))
    except ValueError:
        raise DataError(f"checkpoint: bad shape token '{text}'") from None


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 arrays plus a JSON meta record.

    Args:
        path: destination file.
        tensors: name -> array; converted to little-endian float64.
        meta: JSON-serializable dict stored on the meta header line.
    """
    lines = [_MAGIC.decode()]
    lines.append("meta " + json.dumps(meta or {}, separators=(",", ":")))
    payload = bytearray()
    for name, arr in tensors.items():
        if any(ch.isspace() for ch in name):
            raise DataError(f"checkpoint: tensor name '{name}' contains whitespace")
        arr = np.asarray(arr, dtype="<f8")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # note: would promote 0-d, but 0-d is always contiguous
        lines.append(f"tensor {name} {_format_shape(arr.shape)} {len(payload)}")
        payload.extend(arr.tobytes())
    lines.append(f"end {len(payload)}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(bytes(payload))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint written by save_checkpoint.

    Returns:
        (tensors, meta) with float64 arrays.

    Raises:
        DataError: on any malformed header line, offset, or truncated payload.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(_MAGIC + b"\n"):
        raise DataError("checkpoint: bad magic, not a HBCKPT1 file")
    header_end = blob.find(b"\nend ")
    if header_end < 0:
        raise DataError("checkpoint: missing end marker")
    newline_after = blob.find(b"\n", header_end + 1)
    if newline_after < 0:
        raise DataError("checkpoint: unterminated end line")
    header = blob[:newline_after].decode("utf-8", errors="replace").split("\n")
    payload = blob[newline_after + 1 :]

    end_line = header[-1].split()
    if len(end_line) != 2 or end_line[0] != "end":
        raise DataError("checkpoint: malformed end line")
    try:
        payload_bytes = int(end_line[1])
    except ValueError:
        raise DataError("checkpoint: malformed payload length") from None
    if len(payload) != payload_bytes:
        raise DataError(
            f"checkpoint: payload truncated, header says {payload_bytes} bytes, "
            f"found {len(payload)}"
        )

    if len(header) < 2 or not header[1].startswith("meta "):
        raise DataError("checkpoint: missing meta line")
    try:
        meta = json.loads(header[1][5:])
    except json.JSONDecodeError as e:
        raise DataError(f"checkpoint: bad meta JSON: {e}") from None

    tensors: dict[str, np.ndarray] = {}
    for line in header[2:-1]:
        parts = line.split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise DataError(f"checkpoint: malformed tensor line '{line}'")
        _, name, shape_text, offset_text = parts
        shape = _parse_shape(shape_text)
        try:
            offset = int(offset_text)
        except ValueError:
            raise DataError(f"checkpoint: bad offset for tensor '{name}'") from None
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset < 0 or offset + nbytes > payload_bytes:
            raise DataError(
                f"checkpoint: tensor '{name}' extent [{offset}, {offset + nbytes}) "
                f"exceeds payload of {payload_bytes} bytes"
            )
        if name in tensors:
            raise DataError(f"checkpoint: duplicate tensor '{name}'")
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        tensors[name] = flat.reshape(shape).astype(np.float64)
    return tensors, meta
