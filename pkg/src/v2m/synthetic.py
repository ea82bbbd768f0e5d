"""Synthetic paired clips with known events, and the rhythm alignment proxy metric."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import SAMPLE_RATE, AudioError, RhythmKind, RhythmRepr, Waveform, odf_lr_audio
from .visual import FrameSequence, frames_from_colors

BED_HZ = 440.0
BED_DBFS = -20.0
CLICK_PEAK = 0.8
CLICK_SECONDS = 0.03
CLICK_DECAY = 0.002

# Scenes alternate between the two sets, so every cut moves V by ~190 levels
# and clears the content threshold whatever the hues are.
BRIGHT = [(230, 25, 25), (25, 200, 40), (30, 60, 230), (240, 220, 20),
          (220, 30, 220), (20, 210, 220), (250, 250, 250)]
DARK = [(40, 8, 8), (8, 40, 10), (10, 10, 45), (20, 20, 20), (45, 10, 40), (5, 35, 40)]


@dataclass
class SyntheticPair:
    frames: FrameSequence
    audio: Waveform
    events: np.ndarray  # sorted event seconds

    @property
    def M(self) -> int:
        return self.frames.M


def click(n: int | None = None) -> np.ndarray:
    n = n or int(CLICK_SECONDS * SAMPLE_RATE)
    k = np.arange(n)
    return CLICK_PEAK * np.exp(-k / (CLICK_DECAY * SAMPLE_RATE))


def click_track(event_seconds, seconds: int, bed: bool = True) -> Waveform:
    n = seconds * SAMPLE_RATE
    x = np.zeros(n)
    if bed:
        amp = 10 ** (BED_DBFS / 20)
        x += amp * np.sin(2 * np.pi * BED_HZ * np.arange(n) / SAMPLE_RATE)
    c = click()
    for s in event_seconds:
        i = int(round(s * SAMPLE_RATE))
        j = min(n, i + len(c))
        x[i:j] += c[: j - i]
    return Waveform(x.astype(np.float32))


def generate_synthetic_pair(M: int, n_events: int, seed: int, size: int = 32) -> SyntheticPair:
    if not 2 <= n_events < M:
        raise ValueError(f"n_events must satisfy 2 <= n_events < M={M}, got {n_events}")
    rng = np.random.default_rng(seed)
    events = np.sort(rng.choice(np.arange(1, M), size=n_events, replace=False))
    bright = bool(rng.integers(2))
    palette = BRIGHT if bright else DARK
    color = palette[int(rng.integers(len(palette)))]
    colors = []
    for m in range(M):
        if m in events:
            bright = not bright
            palette = BRIGHT if bright else DARK
            color = palette[int(rng.integers(len(palette)))]
        colors.append(color)
    return SyntheticPair(frames_from_colors(colors, size), click_track(events, M), events)


def rhythm_alignment_score(audio: Waveform, cond_odf: RhythmRepr | np.ndarray) -> float:
    """Pearson correlation of the clip's per-second onset strength with ``cond_odf``."""
    cond = cond_odf.matrix if isinstance(cond_odf, RhythmRepr) else np.asarray(cond_odf)
    if isinstance(cond_odf, RhythmRepr) and cond_odf.kind != RhythmKind.ODF:
        raise AudioError(f"alignment needs an odf representation, got {cond_odf.kind.value}")
    cond = cond.reshape(-1).astype(np.float64)
    got = odf_lr_audio(audio).matrix.reshape(-1).astype(np.float64)
    return alignment_from_vectors(got, cond)


def alignment_from_vectors(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise AudioError(f"alignment: length mismatch, M={a.size} vs M={b.size}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))
