"""Readers and writers for the raw media formats: binary PPM (P6) and PCM16 WAV."""
from __future__ import annotations

import re
import struct
import wave
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, Waveform
from .visual import FrameSequence

FRAME_PATTERN = re.compile(r"frame_(\d{5})\.ppm$")


class FormatError(ValueError):
    """Malformed input file; message names the file and byte offset."""

    def __init__(self, path, offset: int, msg: str):
        super().__init__(f"{path}: byte {offset}: {msg}")
        self.path = str(path)
        self.offset = offset


# -- PPM -----------------------------------------------------------------------

def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise FormatError(path, 0, "missing P6 magic")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(buf):
            raise FormatError(path, pos, "truncated header")
        ch = buf[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
        elif ch.isdigit():
            start = pos
            while pos < len(buf) and buf[pos:pos + 1].isdigit():
                pos += 1
            fields.append((int(buf[start:pos]), start))
        else:
            raise FormatError(path, pos, f"unexpected header byte {ch!r}")
    (width, _), (height, _), (maxval, mpos) = fields
    if maxval != 255:
        raise FormatError(path, mpos, f"only maxval 255 is supported, got {maxval}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(path, pos, "expected a single whitespace before pixel data")
    pos += 1
    need = width * height * 3
    if len(buf) - pos < need:
        raise FormatError(path, len(buf), f"pixel data truncated: need {need} bytes after offset {pos}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(height, width, 3).copy()


def write_ppm(path, frame: np.ndarray) -> None:
    frame = np.ascontiguousarray(frame, dtype=np.uint8)
    h, w = frame.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + frame.tobytes())


def read_frames(directory) -> FrameSequence:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if FRAME_PATTERN.search(p.name))
    if not files:
        raise FormatError(directory, 0, "no frame_%05d.ppm files")
    return FrameSequence([read_ppm(p) for p in files])


def write_frames(directory, fs: FrameSequence) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(fs.frames):
        write_ppm(directory / f"frame_{i:05d}.ppm", f)


# -- WAV -----------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Mono 16-bit PCM at 44.1 kHz."""
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise FormatError(path, 0, "not a RIFF/WAVE file")
    pos = 12
    fmt = None
    while pos + 8 <= len(buf):
        cid, size = buf[pos:pos + 4], struct.unpack_from("<I", buf, pos + 4)[0]
        body = pos + 8
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(path, body, "fmt chunk too short")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", buf, body)
            if tag != 1:
                raise FormatError(path, body, f"unsupported format tag {tag} (need PCM)")
            if channels != 1:
                raise FormatError(path, body + 2, f"need mono, got {channels} channels")
            if rate != SAMPLE_RATE:
                raise FormatError(path, body + 4, f"need {SAMPLE_RATE} Hz, got {rate}")
            if bits != 16:
                raise FormatError(path, body + 14, f"need 16-bit samples, got {bits}")
            fmt = True
        elif cid == b"data":
            if fmt is None:
                raise FormatError(path, pos, "data chunk before fmt chunk")
            if body + size > len(buf):
                raise FormatError(path, len(buf), f"data chunk truncated (declared {size} bytes)")
            pcm = np.frombuffer(buf, dtype="<i2", count=size // 2, offset=body)
            return Waveform(pcm.astype(np.float32) / 32768.0)
        pos = body + size + (size & 1)
    raise FormatError(path, pos, "no data chunk")


def write_wav(path, w: Waveform, peak_dbfs: float | None = -1.0) -> None:
    """Write PCM16 mono; optionally peak-normalize to ``peak_dbfs``."""
    x = np.asarray(w.samples, dtype=np.float64)
    if peak_dbfs is not None:
        peak = np.abs(x).max(initial=0.0)
        if peak > 0:
            x = x * (10 ** (peak_dbfs / 20) / peak)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(pcm.tobytes())
