"""Binary containers: feature files (``V2MF``) and checkpoints (``V2MC``).

Both are little-endian. A named array is written as::

    u16 name_len, name (utf-8), u8 dtype code, u8 ndim, u32 dims[ndim], payload

Arrays are stored as float32 (code 0).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mediaio import FormatError

FEATURE_MAGIC = b"V2MF"
CHECKPOINT_MAGIC = b"V2MC"
VERSION = 1
F32 = 0


class _Reader:
    def __init__(self, path, buf: bytes):
        self.path, self.buf, self.pos = path, buf, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(self.path, self.pos, f"truncated {what}: need {n} bytes")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        vals = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))
        return vals[0] if len(vals) == 1 else vals

    def text(self, len_fmt: str, what: str) -> str:
        n = self.unpack(len_fmt, what + " length")
        start = self.pos
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(self.path, start, f"{what} is not valid utf-8") from None

    def array(self) -> tuple[str, np.ndarray]:
        name = self.text("H", "section name")
        at = self.pos
        code, ndim = self.unpack("BB", "section header")
        if code != F32:
            raise FormatError(self.path, at, f"section {name!r}: unsupported dtype code {code}")
        shape = tuple(self.unpack("I", "dim") for _ in range(ndim))
        n = int(np.prod(shape, dtype=np.int64)) * 4
        payload = self.take(n, f"section {name!r} payload")
        return name, np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def _pack_text(s: str, len_fmt: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<" + len_fmt, len(raw)) + raw


def _pack_array(name: str, arr) -> bytes:
    arr = np.asarray(arr, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
    head = _pack_text(name, "H") + struct.pack("<BB", F32, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def _check_magic(r: _Reader, magic: bytes) -> int:
    if r.take(4, "magic") != magic:
        raise FormatError(r.path, 0, f"bad magic, expected {magic.decode()}")
    version = r.unpack("H", "version")
    if version != VERSION:
        raise FormatError(r.path, 4, f"unsupported version {version}")
    return version


# -- feature files ----------------------------------------------------------------

def encode_features(sections: dict[str, np.ndarray]) -> bytes:
    out = [FEATURE_MAGIC, struct.pack("<HI", VERSION, len(sections))]
    out += [_pack_array(name, arr) for name, arr in sections.items()]
    return b"".join(out)


def decode_features(buf: bytes, path="<bytes>") -> dict[str, np.ndarray]:
    r = _Reader(path, buf)
    _check_magic(r, FEATURE_MAGIC)
    n = r.unpack("I", "section count")
    out: dict[str, np.ndarray] = {}
    for _ in range(n):
        at = r.pos
        name, arr = r.array()
        if name in out:
            raise FormatError(path, at, f"duplicate section {name!r}")
        out[name] = arr
    if r.pos != len(buf):
        raise FormatError(path, r.pos, f"{len(buf) - r.pos} trailing bytes")
    return out


def write_features(path, sections: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_features(sections))


def read_features(path) -> dict[str, np.ndarray]:
    return decode_features(Path(path).read_bytes(), path)


# -- checkpoints ------------------------------------------------------------------

@dataclass
class Checkpoint:
    config_text: str
    strategy: str
    epoch: int
    opt_step: int
    rng_state: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def encode(self) -> bytes:
        rng = json.dumps(self.rng_state, sort_keys=True, separators=(",", ":"))
        out = [CHECKPOINT_MAGIC, struct.pack("<H", VERSION),
               _pack_text(self.config_text, "I"), _pack_text(self.strategy, "H"),
               struct.pack("<IQ", self.epoch, self.opt_step), _pack_text(rng, "I"),
               struct.pack("<I", len(self.tensors))]
        out += [_pack_array(name, arr) for name, arr in self.tensors.items()]
        return b"".join(out)

    @classmethod
    def decode(cls, buf: bytes, path="<bytes>") -> "Checkpoint":
        r = _Reader(path, buf)
        _check_magic(r, CHECKPOINT_MAGIC)
        config_text = r.text("I", "config block")
        strategy = r.text("H", "strategy")
        epoch, opt_step = r.unpack("IQ", "counters")
        at = r.pos
        try:
            rng_state = json.loads(r.text("I", "rng state"))
        except json.JSONDecodeError as e:
            raise FormatError(path, at, f"rng state: {e.msg}") from None
        n = r.unpack("I", "tensor count")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n):
            at = r.pos
            name, arr = r.array()
            if name in tensors:
                raise FormatError(path, at, f"duplicate tensor {name!r}")
            tensors[name] = arr
        if r.pos != len(buf):
            raise FormatError(path, r.pos, f"{len(buf) - r.pos} trailing bytes")
        return cls(config_text, strategy, epoch, opt_step, rng_state, tensors)

    def save(self, path) -> None:
        Path(path).write_bytes(self.encode())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.decode(Path(path).read_bytes(), path)
