import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from v2m.audio import Waveform
from v2m.mediaio import (FormatError, read_frames, read_ppm, read_wav, write_frames, write_ppm,
                         write_wav)
from v2m.visual import FrameSequence, VideoError


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 10_000))
def test_ppm_round_trip(h, w, seed):
    f = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "a.ppm"
        write_ppm(p, f)
        np.testing.assert_array_equal(read_ppm(p), f)


def test_ppm_header_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n# max\n255\n" + bytes(range(6)))
    np.testing.assert_array_equal(read_ppm(p), np.arange(6, dtype=np.uint8).reshape(1, 2, 3))


@pytest.mark.parametrize("data, offset, msg", [
    (b"P3\n1 1\n255\n", 0, "P6"),
    (b"P6\n1 1\n", 7, "truncated header"),
    (b"P6\n1 1\n65535\n" + bytes(6), 7, "maxval"),
    (b"P6\n2 2\n255\n" + bytes(5), 16, "truncated"),
    (b"P6\n1 x\n255\n", 5, "unexpected"),
])
def test_ppm_errors_name_offset(tmp_path, data, offset, msg):
    p = tmp_path / "bad.ppm"
    p.write_bytes(data)
    with pytest.raises(FormatError, match=msg) as ei:
        read_ppm(p)
    assert ei.value.offset == offset
    assert str(p) in str(ei.value) and f"byte {offset}" in str(ei.value)


def test_frames_directory_round_trip(tmp_path):
    fs = FrameSequence([np.full((16, 16, 3), i * 40, np.uint8) for i in range(4)])
    write_frames(tmp_path / "f", fs)
    back = read_frames(tmp_path / "f")
    assert back.M == 4
    for a, b in zip(fs.frames, back.frames):
        np.testing.assert_array_equal(a, b)


def test_frames_empty_dir_and_size_mismatch(tmp_path):
    with pytest.raises(FormatError, match="no frame"):
        read_frames(tmp_path)
    write_ppm(tmp_path / "frame_00000.ppm", np.zeros((16, 16, 3), np.uint8))
    write_ppm(tmp_path / "frame_00001.ppm", np.zeros((17, 16, 3), np.uint8))
    with pytest.raises(VideoError):
        read_frames(tmp_path)


def test_wav_round_trip_within_quantization(tmp_path):
    x = np.random.default_rng(0).uniform(-0.9, 0.9, 5000).astype(np.float32)
    p = tmp_path / "a.wav"
    write_wav(p, Waveform(x), peak_dbfs=None)
    back = read_wav(p)
    assert back.sample_rate == 44100 and len(back.samples) == 5000
    assert np.abs(back.samples - x).max() <= 0.5 / 32768 + 1e-7


def test_wav_peak_normalization(tmp_path):
    p = tmp_path / "n.wav"
    write_wav(p, Waveform(np.array([0.0, 0.1, -0.05], np.float32)), peak_dbfs=-6.0)
    assert np.abs(read_wav(p).samples).max() == pytest.approx(10 ** (-6 / 20), abs=1e-4)


def test_wav_silence_written_as_zeros(tmp_path):
    p = tmp_path / "s.wav"
    write_wav(p, Waveform(np.zeros(100, np.float32)))
    assert np.all(read_wav(p).samples == 0)


def wav_bytes(channels=1, rate=44100, bits=16, tag=1, data=b"\x00\x00" * 4, declared=None):
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * channels * bits // 8,
                      channels * bits // 8, bits)
    size = len(data) if declared is None else declared
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", size) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


@pytest.mark.parametrize("kw, offset, msg", [
    ({"channels": 2}, 22, "mono"),
    ({"rate": 22050}, 24, "44100"),
    ({"bits": 8}, 34, "16-bit"),
    ({"tag": 3}, 20, "format tag"),
    ({"declared": 100}, 52, "truncated"),
])
def test_wav_errors_name_offset(tmp_path, kw, offset, msg):
    p = tmp_path / "bad.wav"
    p.write_bytes(wav_bytes(**kw))
    with pytest.raises(FormatError, match=msg) as ei:
        read_wav(p)
    assert ei.value.offset == offset


def test_wav_not_riff(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(b"hello world!")
    with pytest.raises(FormatError, match="RIFF"):
        read_wav(p)


def test_handmade_wav_reads(tmp_path):
    p = tmp_path / "h.wav"
    p.write_bytes(wav_bytes(data=struct.pack("<4h", 0, 16384, -32768, 32767)))
    np.testing.assert_allclose(read_wav(p).samples, [0, 0.5, -1.0, 32767 / 32768])
