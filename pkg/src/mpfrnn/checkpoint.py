"""Binary checkpoint format.

Layout (little-endian)::

    b"MPFN"  u32 version
    u32 n, spec text (utf-8, n bytes)
    u32 count, then ``count`` parameter records
    u32 count, then ``count`` optimizer-buffer records
    u32 epoch
    u32 n, metadata JSON (utf-8, n bytes): RNG state, train config, class weights

Record: u32 n, name (utf-8, n bytes), u8 dtype (0 = float32, 1 = float64),
u32 x 4 shape, raw values in C order.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"MPFN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    spec_text: str
    params: dict
    buffers: dict = field(default_factory=dict)
    epoch: int = 0
    meta: dict = field(default_factory=dict)


def _u32(v):
    return struct.pack("<I", v)


def _text(s):
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def _record(name, arr):
    arr = np.asarray(arr)
    if arr.ndim != 4:
        raise ValueError(f"{name}: checkpoint records must be rank 4, got shape {arr.shape}")
    try:
        code = _CODES[arr.dtype]
    except KeyError:
        raise ValueError(f"{name}: unsupported dtype {arr.dtype}") from None
    return (_text(name) + struct.pack("<B", code) + struct.pack("<4I", *arr.shape)
            + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def dumps(ckpt):
    out = [MAGIC, _u32(VERSION), _text(ckpt.spec_text)]
    for section in (ckpt.params, ckpt.buffers):
        out.append(_u32(len(section)))
        out.extend(_record(k, v) for k, v in section.items())
    out.append(_u32(ckpt.epoch))
    out.append(_text(json.dumps(ckpt.meta, sort_keys=True)))
    return b"".join(out)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def text(self):
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{self.path}: invalid utf-8 at byte {self.pos}") from None

    def record(self):
        name = self.text()
        code = struct.unpack("<B", self.take(1))[0]
        if code not in _DTYPES:
            raise FormatError(f"{self.path}: unknown dtype code {code} for {name}")
        shape = struct.unpack("<4I", self.take(16))
        dt = _DTYPES[code]
        n = int(np.prod(shape))
        arr = np.frombuffer(self.take(n * dt.itemsize), dtype=dt).reshape(shape)
        return name, arr.astype(dt.newbyteorder("="))


def loads(data, path="<bytes>"):
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, not a checkpoint")
    r = _Reader(data, path)
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    spec_text = r.text()
    sections = []
    for _ in range(2):
        items = {}
        for _ in range(r.u32()):
            name, arr = r.record()
            items[name] = arr
        sections.append(items)
    epoch = r.u32()
    try:
        meta = json.loads(r.text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt metadata: {e}") from None
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Checkpoint(spec_text, sections[0], sections[1], epoch, meta)


def save_checkpoint(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise FormatError(f"{path}: {e.strerror}") from None
    return loads(data, path)
