"""Rhythmic representations of mono audio.

Three per-second representations are derived from a 44.1 kHz waveform:

* ``MelLR``  - log-mel spectrogram, min-max normalized, area-resized to ``[M, 16]``
* ``TemLR``  - autocorrelation tempogram of the onset envelope, same reduction
* ``OdfLR``  - onset peaks snapped to the nearest second, max strength kept

All STFT work uses a periodic Hann window with ``n_fft=2048`` and ``hop=512``
(about 86.13 frames per second); frames are not centered, so frame ``i``
covers samples ``[i*hop, i*hop + n_fft)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SAMPLE_RATE = 44100
N_FFT = 2048
HOP = 512
N_MELS = 64
LR_DIM = 16
TEMPO_BINS = 64
TEMPO_MIN_BPM = 30.0
TEMPO_MAX_BPM = 300.0
TEMPOGRAM_WINDOW_S = 8.0


class AudioError(ValueError):
    pass


class RhythmKind(str, enum.Enum):
    MEL = "mel"
    TEMPOGRAM = "tempogram"
    ODF = "odf"

    @property
    def dim(self) -> int:
        return 1 if self is RhythmKind.ODF else LR_DIM


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate != SAMPLE_RATE:
            raise AudioError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")

    @property
    def seconds(self) -> int:
        return len(self.samples) // self.sample_rate

    def whole_seconds(self) -> "Waveform":
        """Copy trimmed to ``M`` whole seconds."""
        M = self.seconds
        if M < 1:
            raise AudioError(f"need at least one second of audio, got {len(self.samples)} samples")
        return Waveform(self.samples[: M * self.sample_rate], self.sample_rate)


@dataclass
class RhythmRepr:
    kind: RhythmKind
    matrix: np.ndarray  # [M, d]

    def __post_init__(self):
        self.kind = RhythmKind(self.kind)
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim == 1:
            self.matrix = self.matrix[:, None]
        if self.matrix.shape[1] != self.kind.dim:
            raise AudioError(f"{self.kind.value} expects d={self.kind.dim}, got {self.matrix.shape[1]}")

    @property
    def M(self) -> int:
        return self.matrix.shape[0]


@dataclass
class OnsetCurve:
    values: np.ndarray
    frame_rate: float


@dataclass
class PeakList:
    times: np.ndarray
    strengths: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_pairs(cls, pairs) -> "PeakList":
        pairs = sorted(pairs)
        t = np.array([p[0] for p in pairs], dtype=np.float64)
        s = np.array([p[1] for p in pairs], dtype=np.float64)
        return cls(t, s, np.full(len(pairs), -1, dtype=np.int64))


# -- spectral front end ------------------------------------------------------

def hann(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_magnitude(w: Waveform, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Magnitude spectrogram ``[frames, n_fft // 2 + 1]``."""
    if n_fft <= 0 or n_fft & (n_fft - 1):
        raise AudioError(f"n_fft must be a power of two, got {n_fft}")
    if not 0 < hop <= n_fft:
        raise AudioError(f"hop must be in (0, n_fft], got {hop}")
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) < n_fft:
        raise AudioError(f"audio of {len(x)} samples is shorter than the {n_fft}-sample window")
    frames = sliding_window_view(x, n_fft)[::hop]
    return np.abs(np.fft.rfft(frames * hann(n_fft), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Edge and center frequencies, ``n_mels + 2`` points from 0 to sr/2."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sr / 2), n_mels + 2))


def mel_filterbank(n_mels: int, n_fft: int = N_FFT, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular HTK-mel filters, ``[n_mels, n_fft // 2 + 1]``, unit peak."""
    n_bins = n_fft // 2 + 1
    if n_mels > n_bins:
        raise AudioError(f"n_mels={n_mels} exceeds the {n_bins} FFT bins")
    pts = mel_center_frequencies(n_mels, sr)
    freqs = np.arange(n_bins) * sr / n_fft
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_raw(spec: np.ndarray, n_mels: int = N_MELS, sr: int = SAMPLE_RATE) -> np.ndarray:
    """``log(1 + mel power)`` of a magnitude spectrogram, ``[frames, n_mels]``."""
    if n_mels < LR_DIM:
        raise AudioError(f"n_mels must be >= {LR_DIM}, got {n_mels}")
    n_fft = 2 * (spec.shape[1] - 1)
    fb = mel_filterbank(n_mels, n_fft, sr)
    return np.log1p((spec**2) @ fb.T)


# -- Norm / Resize -------------------------------------------------------------

def minmax(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def _axis_weights(src: int, dst: int) -> np.ndarray:
    """``[dst, src]`` interpolation matrix: box average down, linear up."""
    if dst == src:
        return np.eye(src)
    W = np.zeros((dst, src))
    if dst < src:
        scale = src / dst
        for i in range(dst):
            a, b = i * scale, (i + 1) * scale
            for j in range(int(math.floor(a)), min(src, int(math.ceil(b)))):
                W[i, j] = min(b, j + 1) - max(a, j)
        return W / scale
    scale = src / dst
    for i in range(dst):
        x = min(max((i + 0.5) * scale - 0.5, 0.0), src - 1)
        j = int(math.floor(x))
        f = x - j
        W[i, j] += 1 - f
        if f > 0:
            W[i, j + 1] += f
    return W


def resize(m: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    M, d = target
    A, B = m.shape
    return _axis_weights(A, M) @ m @ _axis_weights(B, d).T


def norm_resize(m: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Per-matrix min-max to [0, 1], then area/bilinear resize to ``target``."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise AudioError(f"norm_resize needs a non-empty 2-D matrix, got shape {m.shape}")
    M, d = target
    if M < 1 or d < 1:
        raise AudioError(f"target size must be positive, got {target}")
    return np.clip(resize(minmax(m), (M, d)), 0.0, 1.0)


# -- onsets --------------------------------------------------------------------

def onset_envelope(w: Waveform, n_fft: int = N_FFT, hop: int = HOP,
                   n_mels: int = N_MELS) -> OnsetCurve:
    """Spectral flux of the log-mel spectrogram (positive differences only)."""
    logmel = mel_raw(stft_magnitude(w, n_fft, hop), n_mels, w.sample_rate)
    flux = np.zeros(logmel.shape[0])
    flux[1:] = np.maximum(0.0, np.diff(logmel, axis=0)).sum(axis=1)
    return OnsetCurve(flux, w.sample_rate / hop)


def default_peak_params(curve: OnsetCurve) -> dict:
    return {
        "pre": 3,
        "post": 3,
        "delta": 0.07 * float(np.max(curve.values, initial=0.0)),
        "wait": max(1, int(round(0.1 * curve.frame_rate))),
    }


def pick_peaks(c: OnsetCurve, pre: int, post: int, delta: float, wait: int) -> PeakList:
    """Local maxima over ``[i-pre, i+post]`` that clear the window mean by ``delta``.

    Windows are truncated at the curve edges. A flat window (max == min) or a
    zero value never yields a peak. After an accepted peak, the next ``wait - 1``
    frames are skipped.
    """
    x = np.asarray(c.values, dtype=np.float64)
    n = len(x)
    if n == 0:
        return PeakList(np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64))
    padded_hi = np.concatenate([np.full(pre, -np.inf), x, np.full(post, -np.inf)])
    padded_lo = np.concatenate([np.full(pre, np.inf), x, np.full(post, np.inf)])
    win_max = sliding_window_view(padded_hi, pre + post + 1).max(axis=1)
    win_min = sliding_window_view(padded_lo, pre + post + 1).min(axis=1)
    csum = np.concatenate([[0.0], np.cumsum(x)])
    lo = np.clip(np.arange(n) - pre, 0, n)
    hi = np.clip(np.arange(n) + post + 1, 0, n)
    win_mean = (csum[hi] - csum[lo]) / (hi - lo)
    cand = np.flatnonzero((x == win_max) & (x >= win_mean + delta) & (x > win_min) & (x > 0))
    keep = []
    last = -(10**9)
    for i in cand:
        if i - last >= wait:
            keep.append(i)
            last = i
    idx = np.asarray(keep, dtype=np.int64)
    return PeakList(idx / c.frame_rate, x[idx], idx)


def detect_onsets(w: Waveform) -> PeakList:
    curve = onset_envelope(w)
    return pick_peaks(curve, **default_peak_params(curve))


def odf_lr_raw(p: PeakList, M: int) -> np.ndarray:
    """Per-second max onset strength, before normalization."""
    out = np.zeros(M)
    if len(p):
        idx = np.clip(np.floor(np.asarray(p.times) + 0.5).astype(np.int64), 0, M - 1)
        np.maximum.at(out, idx, np.asarray(p.strengths, dtype=np.float64))
    return out


def odf_lr(p: PeakList, M: int) -> RhythmRepr:
    return RhythmRepr(RhythmKind.ODF, minmax(odf_lr_raw(p, M))[:, None])


# -- tempogram -----------------------------------------------------------------

def tempo_bpms(n_bins: int = TEMPO_BINS) -> np.ndarray:
    return np.geomspace(TEMPO_MIN_BPM, TEMPO_MAX_BPM, n_bins)


def tempogram_raw(c: OnsetCurve, win_seconds: float = TEMPOGRAM_WINDOW_S,
                  n_bins: int = TEMPO_BINS) -> np.ndarray:
    """Windowed-autocorrelation tempogram ``[frames, n_bins]`` over 30-300 BPM.

    For every onset frame a Hann-weighted window of ``win_seconds`` centered on
    it is autocorrelated; each tempo bin reads the autocorrelation at lag
    ``60 * frame_rate / bpm`` (linear interpolation), scaled by the lag-0 value.
    """
    x = np.asarray(c.values, dtype=np.float64)
    W = int(round(win_seconds * c.frame_rate))
    if len(x) < W:
        raise AudioError(
            f"onset curve of {len(x)} frames is shorter than the {W}-frame tempogram window"
        )
    half = W // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(W - half - 1)])
    seg = sliding_window_view(padded, W) * hann(W)
    nfft = 1 << int(math.ceil(math.log2(2 * W)))
    spec = np.fft.rfft(seg, n=nfft, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=1)[:, :W]
    ac = np.maximum(ac, 0.0)
    lag = 60.0 * c.frame_rate / tempo_bpms(n_bins)
    j = np.floor(lag).astype(np.int64)
    f = lag - j
    tg = ac[:, j] * (1 - f) + ac[:, np.minimum(j + 1, W - 1)] * f
    ac0 = ac[:, :1]
    return np.where(ac0 > 0, tg / np.where(ac0 > 0, ac0, 1.0), 0.0)


# -- the three representations --------------------------------------------------

def mel_lr(w: Waveform, d: int = LR_DIM) -> RhythmRepr:
    w = w.whole_seconds()
    return RhythmRepr(RhythmKind.MEL, norm_resize(mel_raw(stft_magnitude(w)), (w.seconds, d)))


def tem_lr(w: Waveform, d: int = LR_DIM) -> RhythmRepr:
    w = w.whole_seconds()
    return RhythmRepr(RhythmKind.TEMPOGRAM,
                      norm_resize(tempogram_raw(onset_envelope(w)), (w.seconds, d)))


def odf_lr_audio(w: Waveform) -> RhythmRepr:
    w = w.whole_seconds()
    return odf_lr(detect_onsets(w), w.seconds)


def rhythm_representation(w: Waveform, kind: RhythmKind | str) -> RhythmRepr:
    kind = RhythmKind(kind)
    if kind is RhythmKind.MEL:
        return mel_lr(w)
    if kind is RhythmKind.TEMPOGRAM:
        return tem_lr(w)
    return odf_lr_audio(w)
