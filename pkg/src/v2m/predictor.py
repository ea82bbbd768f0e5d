"""Decoder-only transformer that regresses the rhythm representation from video."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, embedding_lookup, mse_loss
from .layers import MLP, Attention, Linear, Module, causal_mask, param, sinusoidal_embedding


@dataclass
class PredictorConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    out_dim: int = 1
    max_len: int = 30
    semantic_dim: int = 64
    ffn_mult: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.out_dim not in (1, 16):
            raise ValueError(f"out_dim must be 1 or 16, got {self.out_dim}")


class PredictorBlock(Module):
    def __init__(self, d: int, n_heads: int, ffn_mult: int, rng):
        self.attn = Attention(d, n_heads, rng)
        self.ffn = MLP(d, ffn_mult * d, d, rng)

    def __call__(self, h: Tensor, mask: np.ndarray) -> Tensor:
        h = h + self.attn(h.layer_norm(), mask=mask)
        return h + self.ffn(h.layer_norm())


def _batched(x, ndim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    return x[None] if x.ndim == ndim - 1 else x


class RhythmPredictor(Module):
    def __init__(self, cfg: PredictorConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.sem_proj = Linear(cfg.semantic_dim, d, rng)
        self.scene_embed = param(rng.normal(0.0, 0.02, (2, d)))
        self.beat_proj = Linear(1, d, rng)
        self.blocks = [PredictorBlock(d, cfg.n_heads, cfg.ffn_mult, rng) for _ in range(cfg.n_layers)]
        self.head = Linear(d, cfg.out_dim, rng)

    def build_input(self, semantic, scene, beats) -> Tensor:
        """``proj(C_s) + Embed(e) + Linear(v)``, shape ``[B, M, d_model]``."""
        semantic = _batched(semantic, 3)
        scene = _batched(scene, 2)
        beats = _batched(beats, 2)
        if not (semantic.shape[:2] == scene.shape == beats.shape):
            raise ShapeError(
                f"build_input: length mismatch semantic {list(semantic.shape[:2])}, "
                f"scene {list(scene.shape)}, beats {list(beats.shape)}"
            )
        e = embedding_lookup(self.scene_embed, (scene > 0.5).astype(np.int64))
        return self.sem_proj(Tensor(semantic)) + e + self.beat_proj(Tensor(beats[..., None]))

    def __call__(self, X: Tensor) -> Tensor:
        """Causal stack, linear head, sigmoid: ``[B, M, out_dim]`` in [0, 1]."""
        B, M, d = X.shape
        if M > self.cfg.max_len:
            raise ShapeError(f"sequence of {M} seconds exceeds max_len={self.cfg.max_len}")
        h = X + Tensor(sinusoidal_embedding(np.arange(M), d), dtype=X.dtype)
        mask = causal_mask(M, X.dtype)
        for block in self.blocks:
            h = block(h, mask)
        return self.head(h.layer_norm()).sigmoid()

    def predict(self, semantic, scene, beats) -> Tensor:
        return self(self.build_input(semantic, scene, beats))


def predictor_loss(pred: Tensor, gt) -> Tensor:
    if not isinstance(gt, Tensor):
        gt = Tensor(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ShapeError(f"predictor_loss: {list(pred.shape)} vs {list(gt.shape)}")
    return mse_loss(pred, gt)
