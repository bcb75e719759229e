"""Volume files and dataset manifests.

Volume file layout (all little-endian)::

    b"VXH1"                      magic
    u32 dtype code               1 = float32, 2 = float64
    u32 x 4 dims                 S1, S2, K, C
    payload                      row-major (s1, s2, k, c)
    u32 CRC32                    over every preceding byte

A manifest is a JSON list of ``{"path", "label", "id"}`` objects with an
optional ``"split"`` tag; relative paths resolve against the manifest's folder.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChecksumError, DimensionError, FormatError

VOLUME_MAGIC = b"VXH1"
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_HEADER = struct.Struct("<4sI4I")


def write_volume(path, data: np.ndarray, dtype="f4") -> None:
    data = np.asarray(data)
    if data.ndim != 4:
        raise FormatError(f"volume must be 4-D, got shape {data.shape}")
    dt = np.dtype(dtype).newbyteorder("<")
    code = {v.str: k for k, v in DTYPE_CODES.items()}.get(dt.str)
    if code is None:
        raise FormatError(f"unsupported dtype {dtype}; use f4 or f8")
    body = _HEADER.pack(VOLUME_MAGIC, code, *data.shape) + np.ascontiguousarray(data, dtype=dt).tobytes()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_volume(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: truncated volume file")
    magic, code, *dims = _HEADER.unpack_from(raw)
    if magic != VOLUME_MAGIC:
        raise FormatError(f"{path}: not a volume file (magic {magic!r})")
    if code not in DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dt = DTYPE_CODES[code]
    expected = _HEADER.size + int(np.prod(dims)) * dt.itemsize + 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise ChecksumError(f"{path}: CRC mismatch")
    return np.frombuffer(raw, dtype=dt, count=int(np.prod(dims)), offset=_HEADER.size).reshape(dims)


@dataclass
class ManifestEntry:
    path: Path
    label: int
    id: str
    split: str | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """Parse and check a manifest: unique ids, binary labels, every file present."""
    path = Path(path)
    try:
        items = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(items, list):
        raise FormatError(f"{path}: manifest must be a JSON list")
    entries, seen = [], set()
    for item in items:
        try:
            e = ManifestEntry(Path(item["path"]), int(item["label"]), str(item["id"]), item.get("split"))
        except (KeyError, TypeError, ValueError) as err:
            raise FormatError(f"{path}: malformed entry {item!r}") from err
        if e.label not in (0, 1):
            raise FormatError(f"{path}: label of {e.id} must be 0 or 1")
        if e.id in seen:
            raise FormatError(f"{path}: duplicate id {e.id}")
        seen.add(e.id)
        if not e.path.is_absolute():
            e.path = path.parent / e.path
        if not e.path.exists():
            raise FileNotFoundError(f"missing volume file: {e.path}")
        entries.append(e)
    return entries


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    items = []
    for e in entries:
        p = Path(e.path)
        try:
            p = p.relative_to(path.parent)
        except ValueError:
            pass
        item = {"path": p.as_posix(), "label": int(e.label), "id": e.id}
        if e.split is not None:
            item["split"] = e.split
        items.append(item)
    path.write_text(json.dumps(items, indent=1) + "\n")


def load_dataset(manifest, split: str | None = None):
    """``(volumes, labels, ids)`` for a manifest, optionally one split only."""
    entries = [e for e in read_manifest(manifest) if split is None or e.split == split]
    vols = [read_volume(e.path) for e in entries]
    return vols, np.array([e.label for e in entries], dtype=np.int64), [e.id for e in entries]


def block_mean(data: np.ndarray, factors) -> np.ndarray:
    """Downsample each axis by an integer factor, averaging each block."""
    data = np.asarray(data, dtype=np.float64)
    factors = tuple(int(f) for f in factors) + (1,) * (data.ndim - len(factors))
    shape = []
    for n, f in zip(data.shape, factors):
        if f < 1 or n % f:
            raise DimensionError(f"extent {n} is not divisible by factor {f}")
        shape += [n // f, f]
    return data.reshape(shape).mean(axis=tuple(range(1, 2 * data.ndim, 2)))
