"""Neural-network building blocks on top of :mod:`v2m.autodiff`."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import ShapeError, Tensor, concat


class Module:
    """Parameter container. Parameters are discovered through attributes.

    Attributes that are Tensors with ``requires_grad`` count as parameters,
    attributes that are Modules (or lists of Modules) are walked recursively.
    Names follow the attribute path, e.g. ``blocks.0.self_attn.q.weight``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {list(arr.shape)} != {list(p.shape)}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for value in vars(self).values():
            if isinstance(value, Tensor) and not value.requires_grad:
                value.data = value.data.astype(dtype)
        return self


def param(array: np.ndarray) -> Tensor:
    return Tensor(np.asarray(array, dtype=np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero_init: bool = False):
        bound = 1.0 / math.sqrt(d_in)
        w = np.zeros((d_in, d_out)) if zero_init else rng.uniform(-bound, bound, (d_in, d_out))
        self.weight = param(w)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 zero_out: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero_init=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())


def sinusoidal_embedding(values, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Fixed sin/cos features of shape ``[len(values), dim]``."""
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = values[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(values), 1))], axis=1)
    return emb.astype(np.float32)


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a diffusion time in [0, 1], shape ``[1, dim]``."""
    return sinusoidal_embedding([1000.0 * t], dim)


# -- rotary position embedding -------------------------------------------

_rope_cache: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _rope_tables(positions: tuple[float, ...], d_head: int, base: float, dtype):
    key = (positions, d_head, base, np.dtype(dtype).str)
    hit = _rope_cache.get(key)
    if hit is None:
        half = d_head // 2
        inv_freq = base ** (-np.arange(half, dtype=np.float64) / half)
        ang = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
        cos = np.concatenate([np.cos(ang), np.cos(ang)], axis=1).astype(dtype)
        sin = np.concatenate([np.sin(ang), np.sin(ang)], axis=1).astype(dtype)
        # x @ rot == concat(-x[half:], x[:half])
        rot = np.zeros((d_head, d_head), dtype=dtype)
        rot[np.arange(half) + half, np.arange(half)] = -1
        rot[np.arange(half), np.arange(half) + half] = 1
        hit = (cos, sin, rot)
        if len(_rope_cache) > 256:
            _rope_cache.clear()
        _rope_cache[key] = hit
    return hit


def rope_apply(x: Tensor, positions, base: float = 10000.0) -> Tensor:
    """Rotate dimension pairs ``(i, i + d/2)`` of ``x[..., T, d]`` by position angles.

    Positions may be fractional (time-aligned cross-attention uses them).
    """
    d_head = x.shape[-1]
    if d_head % 2:
        raise ShapeError(f"rope_apply: head dim must be even, got {d_head}")
    positions = tuple(float(p) for p in positions)
    if len(positions) != x.shape[-2]:
        raise ShapeError(f"rope_apply: {len(positions)} positions for sequence of {x.shape[-2]}")
    cos, sin, rot = _rope_tables(positions, d_head, base, x.dtype)
    return x * Tensor(cos, dtype=x.dtype) + (x @ Tensor(rot, dtype=x.dtype)) * Tensor(sin, dtype=x.dtype)


# -- attention -------------------------------------------------------------

def causal_mask(T: int, dtype=np.float32) -> np.ndarray:
    return np.triu(np.full((T, T), -1e9, dtype=dtype), k=1)


class Attention(Module):
    """Multi-head attention; cross-attention when ``context`` is given."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator,
                 d_context: int | None = None):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        d_context = d_context or d_model
        self.n_heads = n_heads
        self.q = Linear(d_model, d_model, rng, bias=False)
        self.k = Linear(d_context, d_model, rng, bias=False)
        self.v = Linear(d_context, d_model, rng, bias=False)
        self.o = Linear(d_model, d_model, rng)

    def _heads(self, x: Tensor) -> Tensor:
        B, T, D = x.shape
        return x.reshape(B, T, self.n_heads, D // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, context: Tensor | None = None, positions=None,
                 mask: np.ndarray | None = None, context_positions=None) -> Tensor:
        """``positions`` rotate queries; keys use ``context_positions`` for
        cross-attention, ``positions`` otherwise. Without positions no RoPE."""
        ctx = x if context is None else context
        q, k, v = self._heads(self.q(x)), self._heads(self.k(ctx)), self._heads(self.v(ctx))
        k_pos = positions if context is None else context_positions
        if positions is not None and k_pos is not None:
            q, k = rope_apply(q, positions), rope_apply(k, k_pos)
        d_head = q.shape[-1]
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d_head))
        if mask is not None:
            scores = scores + Tensor(mask, dtype=scores.dtype)
        out = scores.softmax(axis=-1) @ v
        B, H, T, dh = out.shape
        return self.o(out.transpose(0, 2, 1, 3).reshape(B, T, H * dh))


__all__ = [
    "Module", "Linear", "MLP", "Attention", "param", "rope_apply", "causal_mask",
    "sinusoidal_embedding", "timestep_embedding", "concat",
]
