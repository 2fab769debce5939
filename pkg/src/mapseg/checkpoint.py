"""Binary model checkpoint codec.

Layout, all little-endian regardless of host:

    magic   b"UMAP"
    u32     format version (currently 1)
    u32     config field count, then per field:
                u16 name length, UTF-8 name, i64 value
    u32     record count, then per record:
                u16 name length, UTF-8 name,
                u8 dim count, u32 dims...,
                raw float32 data
    u32     CRC-32 of all preceding bytes

Records cover every trainable parameter plus BN running statistics, so a
loaded model is bit-identical to the saved one.
"""

from __future__ import annotations

import dataclasses
import struct
import zlib

import numpy as np

from .errors import FileFormatError
from .rng import Rng
from .unet import UNetConfig, UNetModel, build

MAGIC = b"UMAP"
VERSION = 1


def checkpoint_bytes(model: UNetModel) -> bytes:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    cfg_fields = dataclasses.fields(model.config)
    buf += struct.pack("<I", len(cfg_fields))
    for f in cfg_fields:
        name = f.name.encode("utf-8")
        buf += struct.pack("<H", len(name)) + name
        buf += struct.pack("<q", int(getattr(model.config, f.name)))
    records = model.named_parameters() + model.named_state()
    buf += struct.pack("<I", len(records))
    for name, arr in records:
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def save_checkpoint(model: UNetModel, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FileFormatError(f"checkpoint truncated at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(data: bytes) -> UNetModel:
    if len(data) < len(MAGIC) + 8:
        raise FileFormatError("checkpoint too short")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FileFormatError(
            f"checkpoint CRC mismatch: stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x}"
        )
    r = _Reader(data[:-4])
    if r.take(4) != MAGIC:
        raise FileFormatError("bad checkpoint magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FileFormatError(f"unsupported checkpoint version {version}")
    (n_fields,) = r.unpack("<I")
    cfg_values = {}
    for _ in range(n_fields):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (value,) = r.unpack("<q")
        cfg_values[name] = value
    known = {f.name for f in dataclasses.fields(UNetConfig)}
    if set(cfg_values) != known:
        raise FileFormatError(f"checkpoint config fields {sorted(cfg_values)} unexpected")
    config = UNetConfig(**cfg_values)
    model = build(config, Rng(0))
    arrays = dict(model.named_parameters() + model.named_state())
    seen = set()
    (n_records,) = r.unpack("<I")
    for _ in range(n_records):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I")
        raw = r.take(4 * int(np.prod(dims, dtype=np.int64)))
        if name not in arrays:
            raise FileFormatError(f"checkpoint record {name!r} not in model")
        target = arrays[name]
        if tuple(dims) != target.shape:
            raise FileFormatError(
                f"checkpoint record {name!r} shape {dims} != model {target.shape}"
            )
        target[...] = np.frombuffer(raw, dtype="<f4").reshape(dims)
        seen.add(name)
    if seen != set(arrays):
        missing = sorted(set(arrays) - seen)
        raise FileFormatError(f"checkpoint missing records: {missing[:5]}")
    if r.pos != len(r.data):
        raise FileFormatError(f"{len(r.data) - r.pos} trailing bytes in checkpoint")
    return model


def load_checkpoint(path) -> UNetModel:
    with open(path, "rb") as fh:
        data = fh.read()
    return model_from_bytes(data)
