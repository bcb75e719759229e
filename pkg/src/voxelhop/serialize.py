"""Versioned binary model files.

Layout (little-endian)::

    b"VXHM"  u32 format version  u32 section count  u32 CRC32 of the table
    section table, per section:
        u16 name length, name (utf-8), u8 kind, u64 offset, u64 length, u32 CRC32
    section payloads

Kinds: 1 = JSON text, 2 = float64 array, 3 = int64 array. Array payloads are
``u32 ndim, u32 dims..., data`` in row-major order. The ``meta`` JSON section
holds the configuration and all scalar metadata; every matrix lives in its own
array section, so reloading reproduces predictions bit for bit.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ChecksumError, FormatError, VersionError
from .hop import HopCascade
from .lag import LagUnit
from .model import FORMAT_VERSION, TrainedModel
from .saab import SaabFilterBank
from .select import SelectionMask

MODEL_MAGIC = b"VXHM"
KIND_JSON, KIND_F64, KIND_I64 = 1, 2, 3
_DTYPES = {KIND_F64: np.dtype("<f8"), KIND_I64: np.dtype("<i8")}


def _pack_array(a: np.ndarray, kind: int) -> bytes:
    a = np.ascontiguousarray(a, dtype=_DTYPES[kind])
    return struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape) + a.tobytes()


def _unpack_array(buf: bytes, kind: int, name: str) -> np.ndarray:
    try:
        (ndim,) = struct.unpack_from("<I", buf)
        dims = struct.unpack_from(f"<{ndim}I", buf, 4)
    except struct.error as e:
        raise FormatError(f"section {name}: bad array header") from e
    dt = _DTYPES[kind]
    start = 4 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if len(buf) != start + count * dt.itemsize:
        raise FormatError(f"section {name}: payload size does not match dims {dims}")
    return np.frombuffer(buf, dtype=dt, count=count, offset=start).reshape(dims).copy()


def _sections(model: TrainedModel) -> list[tuple[str, int, bytes]]:
    cascade = model.cascade
    meta = {
        "format_version": model.format_version,
        "config": model.config.to_dict(),
        "input_dims": list(cascade.input_dims),
        "n_stages": cascade.n_stages,
        "threshold": model.threshold,
        "banks": [[{"n": b.n, "F": b.F} for b in stage] for stage in cascade.banks],
        "masks": [{"stage": m.stage} for m in model.masks],
        "lags": [{"M": u.M, "L": u.L, "omega": u.omega} for u in model.lags],
    }
    out = [("meta", KIND_JSON, json.dumps(meta, sort_keys=True).encode())]

    def arr(name, a, kind=KIND_F64):
        out.append((name, kind, _pack_array(a, kind)))

    for i, stage in enumerate(cascade.banks):
        for c, b in enumerate(stage):
            arr(f"bank/{i}/{c}/ac_anchors", b.ac_anchors)
            arr(f"bank/{i}/{c}/ac_eigenvalues", b.ac_eigenvalues)
            arr(f"bank/{i}/{c}/spectrum", b.spectrum)
            arr(f"bank/{i}/{c}/bias", np.array([b.bias]))
    for i, m in enumerate(model.masks):
        for c, (k, s) in enumerate(zip(m.kept, m.scores)):
            arr(f"mask/{i}/{c}/kept", k, KIND_I64)
            arr(f"mask/{i}/{c}/scores", s)
    for i, u in enumerate(model.lags):
        arr(f"lag/{i}/centers", u.centers)
        arr(f"lag/{i}/regression", u.regression)
    arr("classifier/weights", model.weights)
    arr("classifier/threshold", np.array([model.threshold]))
    return out


def dumps(model: TrainedModel) -> bytes:
    sections = _sections(model)
    table = b""
    names = [n.encode() for n, _, _ in sections]
    table_size = sum(2 + len(n) + 1 + 8 + 8 + 4 for n in names)
    offset = 16 + table_size
    for name, (_, kind, payload) in zip(names, sections):
        table += struct.pack("<H", len(name)) + name
        table += struct.pack("<BQQI", kind, offset, len(payload), zlib.crc32(payload))
        offset += len(payload)
    header = MODEL_MAGIC + struct.pack("<III", model.format_version, len(sections), zlib.crc32(table))
    return header + table + b"".join(p for _, _, p in sections)


def save(model: TrainedModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def _read_sections(raw: bytes) -> dict[str, object]:
    if len(raw) < 16:
        raise FormatError("truncated model file")
    if raw[:4] != MODEL_MAGIC:
        raise FormatError(f"not a model file (magic {raw[:4]!r})")
    version, count, table_crc = struct.unpack_from("<III", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    pos, entries = 16, []
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2:pos + 2 + nlen].decode()
            pos += 2 + nlen
            kind, off, length, crc = struct.unpack_from("<BQQI", raw, pos)
            pos += 21
            entries.append((name, kind, off, length, crc))
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError("truncated or corrupt section table") from e
    if zlib.crc32(raw[16:pos]) != table_crc:
        raise ChecksumError("section table CRC mismatch")
    out = {}
    for name, kind, off, length, crc in entries:
        payload = raw[off:off + length]
        if len(payload) != length:
            raise FormatError(f"section {name} is truncated")
        if zlib.crc32(payload) != crc:
            raise ChecksumError(f"section {name}: CRC mismatch")
        if kind == KIND_JSON:
            out[name] = json.loads(payload.decode())
        elif kind in _DTYPES:
            out[name] = _unpack_array(payload, kind, name)
        else:
            raise FormatError(f"section {name}: unknown kind {kind}")
    return out


def loads(raw: bytes) -> TrainedModel:
    sec = _read_sections(raw)
    try:
        meta = sec["meta"]
        config = RunConfig.from_dict(meta["config"])
        I = meta["n_stages"]
        C = meta["input_dims"][2]
        banks = [
            [
                SaabFilterBank(
                    n=meta["banks"][i][c]["n"],
                    ac_anchors=sec[f"bank/{i}/{c}/ac_anchors"],
                    ac_eigenvalues=sec[f"bank/{i}/{c}/ac_eigenvalues"],
                    bias=float(sec[f"bank/{i}/{c}/bias"][0]),
                    spectrum=sec[f"bank/{i}/{c}/spectrum"],
                )
                for c in range(C)
            ]
            for i in range(I)
        ]
        cascade = HopCascade(list(config.stages), banks, tuple(meta["input_dims"]))
        masks = [
            SelectionMask(meta["masks"][i]["stage"],
                          [sec[f"mask/{i}/{c}/kept"] for c in range(C)],
                          [sec[f"mask/{i}/{c}/scores"] for c in range(C)])
            for i in range(I)
        ]
        lags = [
            LagUnit(sec[f"lag/{i}/centers"], meta["lags"][i]["omega"], sec[f"lag/{i}/regression"],
                    meta["lags"][i]["M"], meta["lags"][i]["L"])
            for i in range(I)
        ]
        return TrainedModel(cascade, masks, lags, sec["classifier/weights"],
                            float(sec["classifier/threshold"][0]), config, meta["format_version"])
    except KeyError as e:
        raise FormatError(f"model file is missing section {e}") from e


def load(path) -> TrainedModel:
    return loads(Path(path).read_bytes())
