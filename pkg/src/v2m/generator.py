"""Diffusion transformer with hierarchical cross-attention conditioning.

Each block runs self-attention (RoPE), cross-attention on the emotional
sequence, then two parallel cross-attentions on the semantic and rhythmic
sequences whose outputs are combined by a timestep-aware fusion before the
feed-forward network::

    h_self = h + SelfAttn(LN(h))
    h_emo  = h_self + CrossAttn(LN(h_self), emo)
    h_sem  = CrossAttn(LN(h_emo), sem)        # FiLM on sem before this for PreAttnFiLM
    h_rhy  = CrossAttn(LN(h_emo), rhy)
    out    = h_emo + FFN(LN(Fuse(h_sem, h_rhy, t)))

Latent tokens and condition rows also receive a sinusoidal embedding of their
time, and the cross-attentions rotate queries and keys by that same time
(RoPE in half-second units), so attention scores depend on the time offset
between a latent frame and a condition row.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError, Tensor, concat
from .layers import (MLP, Attention, Linear, Module, param, rope_apply, sinusoidal_embedding,
                     timestep_embedding)

__all__ = [
    "FusionKind", "FusionStrategy", "GeneratorConfig", "ConditionSet", "Generator",
    "HierarchicalBlock", "Fusion", "FiLM", "GlobalEmbedding", "rope_apply",
]


class FusionKind(str, enum.Enum):
    WEIGHTED = "weighted"
    ADDITIVE = "additive"
    FEATURE_SELECTION = "feature_selection"
    PRE_ATTN_FILM = "pre_attn_film"
    POST_ATTN_FILM = "post_attn_film"
    POST_ATTN_FILM_FS = "post_attn_film_fs"


@dataclass(frozen=True)
class FusionStrategy:
    kind: FusionKind = FusionKind.ADDITIVE
    t0: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "kind", FusionKind(self.kind))
        if not 0.0 < self.t0 < 1.0:
            raise ValueError(f"t0 must lie in (0, 1), got {self.t0}")

    @property
    def uses_pre_film(self) -> bool:
        return self.kind is FusionKind.PRE_ATTN_FILM

    @property
    def uses_post_film(self) -> bool:
        return self.kind in (FusionKind.POST_ATTN_FILM, FusionKind.POST_ATTN_FILM_FS)

    @property
    def selects(self) -> bool:
        return self.kind in (FusionKind.FEATURE_SELECTION, FusionKind.POST_ATTN_FILM_FS)


@dataclass
class GeneratorConfig:
    d_model: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    strategy: FusionStrategy = field(default_factory=FusionStrategy)
    cond_drop_prob: float = 0.1
    latent_dim: int = 32
    semantic_dim: int = 64
    emotion_dim: int = 24
    rhythm_dim: int = 1
    max_len: int = 64
    frame_seconds: float = 22080 / 44100
    max_seconds: float = 64.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if (self.d_model // self.n_heads) % 2:
            raise ValueError("head dim must be even for RoPE")
        if not 0.0 <= self.cond_drop_prob <= 0.5:
            raise ValueError(f"cond_drop_prob must lie in [0, 0.5], got {self.cond_drop_prob}")
        if not isinstance(self.strategy, FusionStrategy):
            self.strategy = FusionStrategy(self.strategy)


@dataclass
class ConditionSet:
    """Encoded conditions ``[B, M, d_model]`` plus the global metadata."""

    emo: Tensor
    sem: Tensor
    rhy: Tensor
    g_start: np.ndarray
    g_dur: np.ndarray


def time_embedding(seconds, d: int, dtype=np.float32) -> np.ndarray:
    # two positions per second, same scale for latents and conditions
    return sinusoidal_embedding(2.0 * np.asarray(seconds, dtype=np.float64), d).astype(dtype)


class FiLM(Module):
    """``gamma(t) * h + beta(t)`` with ``gamma = 1 + MLP(t)``; identity at init."""

    def __init__(self, d: int, rng):
        self.d = d
        self.gamma = MLP(d, d, d, rng, zero_out=True)
        self.beta = MLP(d, d, d, rng, zero_out=True)

    def gamma_beta(self, t: float, dtype=np.float32) -> tuple[Tensor, Tensor]:
        temb = Tensor(timestep_embedding(t, self.d), dtype=dtype)
        g = self.gamma(temb) + 1.0
        b = self.beta(temb)
        return g.reshape(1, 1, self.d), b.reshape(1, 1, self.d)

    def __call__(self, h: Tensor, t: float) -> Tensor:
        if h.ndim != 3 or h.shape[-1] != self.d:
            raise ShapeError(f"film: expected [B, T, {self.d}], got {list(h.shape)}")
        g, b = self.gamma_beta(t, h.dtype)
        return h * g + b


class Fusion(Module):
    """Combines the semantic and rhythmic branch outputs for one strategy."""

    def __init__(self, d: int, strategy: FusionStrategy, rng):
        self.strategy = strategy
        self.d = d
        if strategy.kind is FusionKind.WEIGHTED:
            self.gate = MLP(d, d, 1, rng, zero_out=True)
        if strategy.uses_pre_film or strategy.uses_post_film:
            self.film_sem = FiLM(d, rng)
            self.film_rhy = FiLM(d, rng)

    def alpha(self, t: float, dtype=np.float32) -> Tensor:
        return self.gate(Tensor(timestep_embedding(t, self.d), dtype=dtype)).sigmoid()

    def select_semantic(self, t: float) -> bool:
        return t > self.strategy.t0

    def __call__(self, h_sem: Tensor | None, h_rhy: Tensor | None, t: float) -> Tensor:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"fuse: t must lie in [0, 1], got {t}")
        s = self.strategy
        if s.selects:
            h = h_sem if self.select_semantic(t) else h_rhy
            if s.uses_post_film:
                h = (self.film_sem if self.select_semantic(t) else self.film_rhy)(h, t)
            return h
        if h_sem.shape != h_rhy.shape:
            raise ShapeError(f"fuse: {list(h_sem.shape)} vs {list(h_rhy.shape)}")
        if s.uses_post_film:
            h_sem, h_rhy = self.film_sem(h_sem, t), self.film_rhy(h_rhy, t)
        if s.kind is FusionKind.WEIGHTED:
            a = self.alpha(t, h_sem.dtype).reshape(1, 1, 1)
            return h_sem * a + h_rhy * (1.0 - a)
        return h_sem * 0.5 + h_rhy * 0.5


class HierarchicalBlock(Module):
    def __init__(self, cfg: GeneratorConfig, rng):
        d = cfg.d_model
        self.self_attn = Attention(d, cfg.n_heads, rng)
        self.emo_attn = Attention(d, cfg.n_heads, rng)
        self.sem_attn = Attention(d, cfg.n_heads, rng)
        self.rhy_attn = Attention(d, cfg.n_heads, rng)
        self.fusion = Fusion(d, cfg.strategy, rng)
        self.ffn = MLP(d, cfg.ffn_mult * d, d, rng)

    def __call__(self, h: Tensor, cond: ConditionSet, t: float, positions,
                 q_time=None, c_time=None) -> Tensor:
        h_self = h + self.self_attn(h.layer_norm(), positions=positions)
        h_emo = h_self + self.emo_attn(h_self.layer_norm(), cond.emo, q_time, None, c_time)
        sem, rhy = cond.sem, cond.rhy
        s = self.fusion.strategy
        if s.uses_pre_film:
            sem = self.fusion.film_sem(sem, t)
            rhy = self.fusion.film_rhy(rhy, t)
        q = h_emo.layer_norm()
        need_sem = not s.selects or self.fusion.select_semantic(t)
        need_rhy = not s.selects or not self.fusion.select_semantic(t)
        h_sem = self.sem_attn(q, sem, q_time, None, c_time) if need_sem else None
        h_rhy = self.rhy_attn(q, rhy, q_time, None, c_time) if need_rhy else None
        fused = self.fusion(h_sem, h_rhy, t)
        return h_emo + self.ffn(fused.layer_norm())


class GlobalEmbedding(Module):
    """Start/duration metadata plus diffusion time, as one prepended token."""

    def __init__(self, d: int, max_seconds: float, rng):
        self.d = d
        self.max_seconds = max_seconds
        half = d // 2
        self.start_proj = Linear(half, half, rng)
        self.dur_proj = Linear(half, d - half, rng)
        self.mlp = MLP(d, d, d, rng)

    def _number(self, seconds: np.ndarray, dim: int) -> np.ndarray:
        return sinusoidal_embedding(1000.0 * np.asarray(seconds) / self.max_seconds, dim)

    def __call__(self, g_start, g_dur, t: float, dtype=np.float32) -> Tensor:
        g_start = np.atleast_1d(np.asarray(g_start, dtype=np.float64))
        g_dur = np.atleast_1d(np.asarray(g_dur, dtype=np.float64))
        if np.any(g_dur <= 0):
            raise ValueError(f"duration must be positive, got {g_dur}")
        if np.any(g_start < 0):
            raise ValueError(f"start must be non-negative, got {g_start}")
        half = self.d // 2
        cg = concat([self.start_proj(Tensor(self._number(g_start, half), dtype=dtype)),
                     self.dur_proj(Tensor(self._number(g_dur, half), dtype=dtype))], axis=1)
        h = self.mlp(cg + Tensor(timestep_embedding(t, self.d), dtype=dtype))
        return h.reshape(len(g_start), 1, self.d)


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.d_model
        self.emo_enc = MLP(cfg.emotion_dim, d, d, rng)
        self.sem_enc = MLP(cfg.semantic_dim, d, d, rng)
        self.rhy_enc = MLP(cfg.rhythm_dim, d, d, rng)
        self.null_emo = param(rng.normal(0.0, 0.02, (1, 1, d)))
        self.null_sem = param(rng.normal(0.0, 0.02, (1, 1, d)))
        self.null_rhy = param(rng.normal(0.0, 0.02, (1, 1, d)))
        self.global_embed = GlobalEmbedding(d, cfg.max_seconds, rng)
        self.in_proj = Linear(cfg.latent_dim, d, rng)
        self.blocks = [HierarchicalBlock(cfg, rng) for _ in range(cfg.n_blocks)]
        self.out_proj = Linear(d, cfg.latent_dim, rng, zero_init=True)

    # -- conditions --------------------------------------------------------
    def _mix(self, enc: Tensor, null: Tensor, keep) -> Tensor:
        if keep is None:
            out = enc
        else:
            k = np.asarray(keep, dtype=enc.dtype).reshape(-1, 1, 1)
            out = enc * Tensor(k, dtype=enc.dtype) + null * Tensor(1.0 - k, dtype=enc.dtype)
        M = out.shape[1]
        return out + Tensor(time_embedding(np.arange(M) + 0.5, self.cfg.d_model), dtype=enc.dtype)

    def encode_conditions(self, emotional, semantic, rhythm, g_start, g_dur,
                          keep=None) -> ConditionSet:
        """Encode raw per-second features; rows of ``keep == 0`` become null tokens."""
        def as_t(x):
            return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))

        emotional, semantic, rhythm = as_t(emotional), as_t(semantic), as_t(rhythm)
        if not (emotional.shape[:2] == semantic.shape[:2] == rhythm.shape[:2]):
            raise ShapeError(
                f"condition lengths differ: emo {list(emotional.shape)}, sem {list(semantic.shape)}, "
                f"rhy {list(rhythm.shape)}"
            )
        return ConditionSet(
            emo=self._mix(self.emo_enc(emotional), self.null_emo, keep),
            sem=self._mix(self.sem_enc(semantic), self.null_sem, keep),
            rhy=self._mix(self.rhy_enc(rhythm), self.null_rhy, keep),
            g_start=np.atleast_1d(np.asarray(g_start, dtype=np.float64)),
            g_dur=np.atleast_1d(np.asarray(g_dur, dtype=np.float64)),
        )

    def null_conditions(self, B: int, M: int, g_start, g_dur, dtype=np.float32) -> ConditionSet:
        d = self.cfg.d_model
        zeros = Tensor(np.zeros((B, M, 1), dtype=dtype), dtype=dtype)
        te = Tensor(time_embedding(np.arange(M) + 0.5, d), dtype=dtype)
        return ConditionSet(
            emo=self.null_emo * (zeros + 1.0) + te,
            sem=self.null_sem * (zeros + 1.0) + te,
            rhy=self.null_rhy * (zeros + 1.0) + te,
            g_start=np.atleast_1d(np.asarray(g_start, dtype=np.float64)),
            g_dur=np.atleast_1d(np.asarray(g_dur, dtype=np.float64)),
        )

    def global_embedding(self, g_start, g_dur, t: float, dtype=np.float32) -> Tensor:
        return self.global_embed(g_start, g_dur, t, dtype)

    # -- denoiser ------------------------------------------------------------
    def __call__(self, z_t, cond: ConditionSet, t: float) -> Tensor:
        """v-prediction ``[B, T, latent_dim]`` for noisy latents ``z_t``."""
        if not isinstance(z_t, Tensor):
            z_t = Tensor(z_t)
        B, T, D = z_t.shape
        if T > self.cfg.max_len:
            raise ShapeError(f"latent length {T} exceeds max_len={self.cfg.max_len}")
        if D != self.cfg.latent_dim:
            raise ShapeError(f"latent dim {D} != {self.cfg.latent_dim}")
        dt = z_t.dtype
        x = self.in_proj(z_t)
        x = x + Tensor(time_embedding((np.arange(T) + 0.5) * self.cfg.frame_seconds,
                                      self.cfg.d_model), dtype=dt)
        g = self.global_embedding(cond.g_start, cond.g_dur, t, dt)
        if g.shape[0] != B:
            g = g * Tensor(np.ones((B, 1, 1), dtype=dt), dtype=dt)
        h = concat([g, x], axis=1)
        positions = range(T + 1)
        # half-second units; the global token sits at time 0
        q_time = np.concatenate([[0.0], 2.0 * (np.arange(T) + 0.5) * self.cfg.frame_seconds])
        c_time = 2.0 * (np.arange(cond.sem.shape[1]) + 0.5)
        for block in self.blocks:
            h = block(h, cond, t, positions, q_time, c_time)
        return self.out_proj(h[:, 1:, :].layer_norm())
