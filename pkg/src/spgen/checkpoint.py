"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SPGN"                      magic
    u16  version                 currently 1
    u32  config byte length      followed by UTF-8 ``key=value`` lines
    u32  tensor count
    per tensor:
        u16  name byte length    followed by the UTF-8 name
        u32  rank
        u32  dim  (rank times)
        f32  payload             row-major, prod(dims) values
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SPGN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def format_config(config: Mapping[str, object]) -> str:
    lines = []
    for key in sorted(config):
        value = config[key]
        if "\n" in str(value) or "=" in key:
            raise CheckpointError(f"config entry {key!r} cannot be serialized")
        lines.append(f"{key}={value}")
    return "\n".join(lines)


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def dumps(tensors: Mapping[str, np.ndarray], config: Mapping[str, object] | None = None) -> bytes:
    cfg = format_config(config or {}).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(getattr(arr, "data", arr), dtype="<f4", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint at byte {pos} (wanted {n} more)")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not an SPGN checkpoint (bad magic)")
    version, cfg_len = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = parse_config(bytes(take(cfg_len)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = arr
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors, config


def save(path, tensors: Mapping[str, np.ndarray], config: Mapping[str, object] | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, config))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return loads(Path(path).read_bytes())
