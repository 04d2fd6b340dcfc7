"""Binary checkpoint container.

Layout (all little-endian)::

    b"NDPS"                      magic
    u32                          format version
    u32 + bytes                  JSON header (configs, step, RNG state, ...)
    u32                          tensor count
    per tensor:
        u32 + bytes              UTF-8 name
        u32                      ndim
        u32 * ndim               shape
        f64 * prod(shape)        data, row-major
    u32                          CRC-32 of every preceding byte
"""
import json
import struct
import zlib
from collections import OrderedDict

import numpy as np

MAGIC = b"NDPS"
VERSION = 1

_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint file."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


def encode(header, tensors):
    parts = [MAGIC, _U32.pack(VERSION)]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts += [_U32.pack(len(blob)), blob, _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def expected_size(header, shapes):
    """Byte size of :func:`encode` output, computed from the tensor inventory alone."""
    size = 4 + 4 + 4 + len(json.dumps(header, sort_keys=True).encode("utf-8")) + 4
    for name, shape in shapes.items():
        size += 4 + len(name.encode("utf-8")) + 4 + 4 * len(shape) + 8 * int(np.prod(shape, dtype=np.int64))
    return size + 4


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]


def decode(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint", 0)
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})", 4)
    n = r.u32("header length")
    start = r.pos
    try:
        header = json.loads(r.take(n, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}", start) from None
    count = r.u32("tensor count")
    tensors = OrderedDict()
    for _ in range(count):
        rec = r.pos
        name_len = r.u32("tensor name length")
        name = r.take(name_len, "tensor name").decode("utf-8", errors="replace")
        ndim = r.u32(f"{name} ndim")
        if ndim > 8:
            raise CheckpointError(f"implausible ndim {ndim} for {name}", rec)
        shape = tuple(r.u32(f"{name} shape") for _ in range(ndim))
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        data = r.take(nbytes, f"{name} data")
        tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    crc_at = r.pos
    stored = r.u32("checksum")
    if zlib.crc32(buf[:crc_at]) != stored:
        raise CheckpointError("checksum mismatch", crc_at)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checksum", r.pos)
    return header, tensors


def save(path, header, tensors):
    data = encode(header, tensors)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
