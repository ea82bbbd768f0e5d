"""Per-second visual signals from a 1 FPS frame sequence.

Frames are ``uint8`` RGB arrays of shape ``[H, W, 3]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from .audio import OnsetCurve, pick_peaks

SEMANTIC_DIM = 64
HIST_BINS = 8
SCENE_THRESHOLD = 27.0 / 255.0
SCENE_SIDE = 64


class VideoError(ValueError):
    pass


@dataclass
class FrameSequence:
    frames: list[np.ndarray]
    fps: int = 1

    def __post_init__(self):
        if self.fps != 1:
            raise VideoError(f"frame sequences are sampled at 1 FPS, got {self.fps}")
        if not self.frames:
            raise VideoError("empty frame sequence")
        h, w = self.frames[0].shape[:2]
        for i, f in enumerate(self.frames):
            if f.dtype != np.uint8 or f.ndim != 3 or f.shape[2] != 3:
                raise VideoError(f"frame {i}: expected uint8 [H, W, 3], got {f.dtype} {f.shape}")
            if f.shape[:2] != (h, w):
                raise VideoError(f"frame {i}: size {f.shape[:2]} differs from {(h, w)}")
        if h < 16 or w < 16:
            raise VideoError(f"frames must be at least 16x16, got {w}x{h}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def M(self) -> int:
        return len(self.frames)


@dataclass
class VideoFeatures:
    semantic: np.ndarray   # [M, D_s], unit rows
    emotional: np.ndarray  # [M, 3 * bins]
    scene: np.ndarray      # [M] in {0, 1}
    beats: np.ndarray      # [M] >= 0

    @property
    def M(self) -> int:
        return self.semantic.shape[0]


def color_histogram(frame: np.ndarray, bins_per_channel: int = HIST_BINS) -> np.ndarray:
    """Concatenated per-channel marginal histograms, each summing to 1."""
    if frame.size == 0:
        raise VideoError("empty image")
    if bins_per_channel < 2:
        raise VideoError(f"bins_per_channel must be >= 2, got {bins_per_channel}")
    px = frame.reshape(-1, 3).astype(np.int64)
    idx = px * bins_per_channel // 256
    out = np.zeros(3 * bins_per_channel)
    for ch in range(3):
        h = np.bincount(idx[:, ch], minlength=bins_per_channel)
        out[ch * bins_per_channel:(ch + 1) * bins_per_channel] = h / len(px)
    return out


_projections: dict[tuple[int, int], np.ndarray] = {}


def _projection(dim: int, seed: int) -> np.ndarray:
    key = (dim, seed)
    if key not in _projections:
        _projections[key] = np.random.default_rng(seed).standard_normal((256, dim)) / 16.0
    return _projections[key]


def stub_semantic_embed(frame: np.ndarray, dim: int = SEMANTIC_DIM, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for an image embedder.

    16x16 grayscale thumbnail in [0, 1], times a seeded Gaussian projection,
    L2-normalized. An all-black frame projects to zero and maps to ``e_0``.
    """
    if dim < 8:
        raise VideoError(f"embedding dim must be >= 8, got {dim}")
    gray = cv2.cvtColor(frame, cv2.COLOR_RGB2GRAY)
    thumb = cv2.resize(gray, (16, 16), interpolation=cv2.INTER_AREA).astype(np.float64) / 255.0
    v = thumb.reshape(-1) @ _projection(dim, seed)
    n = np.linalg.norm(v)
    if n == 0:
        v = np.zeros(dim)
        v[0] = 1.0
        return v
    return v / n


def _hsv_small(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape[:2]
    s = min(1.0, SCENE_SIDE / max(h, w))
    if s < 1.0:
        frame = cv2.resize(frame, (max(1, round(w * s)), max(1, round(h * s))),
                           interpolation=cv2.INTER_AREA)
    return cv2.cvtColor(frame, cv2.COLOR_RGB2HSV).astype(np.float64)


def content_scores(fs: FrameSequence) -> np.ndarray:
    """Per-second HSV content difference on a 0-1 scale; entry 0 is 0."""
    hsv = [_hsv_small(f) for f in fs.frames]
    scores = np.zeros(fs.M)
    for m in range(1, fs.M):
        scores[m] = np.abs(hsv[m] - hsv[m - 1]).mean(axis=(0, 1)).mean() / 255.0
    return scores


def detect_scene_transitions(fs: FrameSequence, threshold: float = SCENE_THRESHOLD) -> np.ndarray:
    if threshold <= 0:
        raise VideoError(f"threshold must be positive, got {threshold}")
    e = (content_scores(fs) > threshold).astype(np.float64)
    e[0] = 0.0
    return e


def visual_rhythm_curve(fs: FrameSequence) -> np.ndarray:
    """Mean absolute frame difference per second, scaled by its maximum."""
    curve = np.zeros(fs.M)
    for m in range(1, fs.M):
        a = fs.frames[m].astype(np.float64)
        b = fs.frames[m - 1].astype(np.float64)
        curve[m] = np.abs(a - b).mean() / 255.0
    peak = curve.max()
    return curve / peak if peak > 0 else curve


def visual_beats(curve: np.ndarray) -> np.ndarray:
    curve = np.asarray(curve, dtype=np.float64)
    peaks = pick_peaks(OnsetCurve(curve, 1.0), pre=1, post=1, delta=0.05, wait=1)
    v = np.zeros_like(curve)
    v[peaks.indices] = curve[peaks.indices]
    return v


def extract_video_features(fs: FrameSequence, semantic_dim: int = SEMANTIC_DIM,
                           seed: int = 0, bins: int = HIST_BINS) -> VideoFeatures:
    semantic = np.stack([stub_semantic_embed(f, semantic_dim, seed) for f in fs.frames])
    emotional = np.stack([color_histogram(f, bins) for f in fs.frames])
    return VideoFeatures(
        semantic=semantic.astype(np.float32),
        emotional=emotional.astype(np.float32),
        scene=detect_scene_transitions(fs).astype(np.float32),
        beats=visual_beats(visual_rhythm_curve(fs)).astype(np.float32),
    )


def frames_from_colors(colors: Sequence[tuple[int, int, int]], size: int = 32) -> FrameSequence:
    """Solid-color frames, one per second."""
    frames = [np.broadcast_to(np.asarray(c, dtype=np.uint8), (size, size, 3)).copy()
              for c in colors]
    return FrameSequence(frames)
