"""Binary checkpoint format (all integers little-endian).

    magic      4 bytes  b"MMF1"
    version    u32
    fp_len     u32, then fp_len bytes of ASCII config fingerprint
    count      u32
    per parameter:
        name_len u16, name (UTF-8)
        rank     u32, then rank x u32 dims
        values   float32 little-endian, row-major
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MMF1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class FingerprintMismatch(CheckpointError):
    pass


def fingerprint(fields: dict) -> str:
    """Stable hash of the architecture-defining config fields."""
    blob = json.dumps(fields, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def to_bytes(params, fp: str) -> bytes:
    names = list(params)
    if len(set(names)) != len(names):
        raise CheckpointError("parameter names must be unique")
    fpb = fp.encode("ascii")
    out = [MAGIC, struct.pack("<II", VERSION, len(fpb)), fpb, struct.pack("<I", len(names))]
    for name in names:
        arr = params[name]
        arr = np.asarray(getattr(arr, "data", arr))
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def from_bytes(buf: bytes) -> tuple[dict, str]:
    """-> (ordered name -> float32 array, fingerprint)."""
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("checkpoint truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, fp_len = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    fp = buf[pos : pos + fp_len].decode("ascii")
    pos += fp_len
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        if pos + 4 * n > len(buf):
            raise CheckpointError(f"checkpoint truncated inside {name}")
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).astype(np.float32).reshape(dims)
        pos += 4 * n
        if name in params:
            raise CheckpointError(f"duplicate parameter {name}")
        params[name] = arr
    if pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint")
    return params, fp


def save(path, params, fp: str) -> bytes:
    data = to_bytes(params, fp)
    Path(path).write_bytes(data)
    return data


def load(path, expected_fp: str | None = None) -> tuple[dict, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    params, fp = from_bytes(path.read_bytes())
    if expected_fp is not None and fp != expected_fp:
        raise FingerprintMismatch(f"{path.name}: fingerprint {fp[:12]} does not match configuration {expected_fp[:12]}")
    return params, fp


def load_into(model, path, expected_fp: str | None = None) -> None:
    """Copy checkpoint arrays into ``model.params`` (names and shapes must match)."""
    arrays, _ = load(path, expected_fp)
    if set(arrays) != set(model.params):
        missing = sorted(set(model.params) - set(arrays))
        extra = sorted(set(arrays) - set(model.params))
        raise FingerprintMismatch(f"parameter sets differ (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, arr in arrays.items():
        p = model.params[name]
        if p.shape != arr.shape:
            raise FingerprintMismatch(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
        p.data = arr.astype(p.dtype).copy()
