"""Noise schedule, v-objective, scheduled conditioning, DDIM sampling and the latent codec."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .audio import SAMPLE_RATE, AudioError, Waveform
from .autodiff import ShapeError, Tensor, mse_loss, no_grad
from .generator import Generator
from .optim import AdamW
from .predictor import RhythmPredictor, predictor_loss

LATENT_DIM = 32
LATENT_HOP = 690  # 32 * 690 = 22080 samples per latent frame, two frames per second
T_MIN = 1e-4


# -- schedule ----------------------------------------------------------------

def schedule(t: float) -> tuple[float, float]:
    """Cosine schedule: ``(cos(pi t / 2), sin(pi t / 2))``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if t == 1.0:
        return 0.0, 1.0
    a = math.pi * t / 2
    return math.cos(a), math.sin(a)


def _same_shape(name, a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{name}: shapes {list(np.shape(a))} and {list(np.shape(b))} differ")


def add_noise(z0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    _same_shape("add_noise", z0, eps)
    a, s = schedule(t)
    return a * np.asarray(z0) + s * np.asarray(eps)


def v_target(z0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    _same_shape("v_target", z0, eps)
    a, s = schedule(t)
    return a * np.asarray(eps) - s * np.asarray(z0)


# -- scheduled conditioning ----------------------------------------------------

@dataclass(frozen=True)
class ScheduleParams:
    e1: int = 10
    e2: int = 30

    def __post_init__(self):
        if not 0 <= self.e1 < self.e2:
            raise ValueError(f"need 0 <= e1 < e2, got e1={self.e1}, e2={self.e2}")


def p_pred(epoch: int, sp: ScheduleParams = ScheduleParams()) -> float:
    """Probability of conditioning on the predicted rhythm at ``epoch``."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if epoch < sp.e1:
        return 0.0
    if epoch < sp.e2:
        return (epoch - sp.e1) / (sp.e2 - sp.e1)
    return 1.0


# -- guidance and sampling -----------------------------------------------------

def cfg_combine(cond_pred: np.ndarray, uncond_pred: np.ndarray, scale: float) -> np.ndarray:
    _same_shape("cfg_combine", cond_pred, uncond_pred)
    return uncond_pred + scale * (cond_pred - uncond_pred)


VFn = Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]


def ddim_sample(v_fn: VFn, shape, steps: int, scale: float, seed: int,
                start_t: float = 1.0, z_start: np.ndarray | None = None) -> np.ndarray:
    """Deterministic (eta = 0) DDIM in v-parameterization.

    ``v_fn(z_t, t)`` returns ``(v_cond, v_uncond)``. The grid runs uniformly
    from ``start_t`` to 0; the final clean estimate is returned.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if z_start is None:
        z = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    else:
        z = np.asarray(z_start, dtype=np.float32)
    ts = np.linspace(start_t, 0.0, steps + 1)
    z0_hat = z
    for t, t_next in zip(ts[:-1], ts[1:]):
        a, s = schedule(float(t))
        v_c, v_u = v_fn(z, float(t))
        v = cfg_combine(v_c, v_u, scale)
        z0_hat = a * z - s * v
        eps_hat = s * z + a * v
        a2, s2 = schedule(float(t_next))
        z = (a2 * z0_hat + s2 * eps_hat).astype(np.float32)
    return z0_hat.astype(np.float32)


def guided_v_fn(generator: Generator, cond, uncond) -> VFn:
    def fn(z, t):
        with no_grad():
            v_c = generator(Tensor(z), cond, t).data
            v_u = generator(Tensor(z), uncond, t).data
        return v_c, v_u
    return fn


# -- latent codec ----------------------------------------------------------------

@dataclass
class LatentClip:
    """``z [T, D]`` = standardized per-sub-patch means of the waveform.

    ``residual`` holds the sample-level detail below the sub-patch means, so
    ``decode(encode(w))`` is exact. Generated clips carry no residual and
    decode to the piecewise-constant envelope.
    """

    z: np.ndarray
    seconds: int
    mean: float = 0.0
    std: float = 1.0
    hop: int = LATENT_HOP
    n_samples: int | None = None
    residual: np.ndarray | None = None

    @property
    def frames_per_second(self) -> float:
        return self.z.shape[0] / self.seconds


def latent_frames(seconds: int, latent_dim: int = LATENT_DIM, hop: int = LATENT_HOP) -> int:
    return -(-seconds * SAMPLE_RATE // (latent_dim * hop))


def latent_encode(w: Waveform, latent_dim: int = LATENT_DIM, hop: int = LATENT_HOP) -> LatentClip:
    x = np.asarray(w.samples, dtype=np.float64)
    if x.size == 0:
        raise AudioError("cannot encode empty audio")
    patch = latent_dim * hop
    T = -(-len(x) // patch)
    padded = np.zeros(T * patch)
    padded[: len(x)] = x
    sub = padded.reshape(T, latent_dim, hop)
    means = sub.mean(axis=2)
    residual = sub - means[..., None]
    mu = float(means.mean())
    sd = float(means.std())
    if sd == 0.0:
        mu, sd = 0.0, 1.0
    z = ((means - mu) / sd).astype(np.float32)
    return LatentClip(z, max(1, len(x) // SAMPLE_RATE), mu, sd, hop, len(x), residual)


def latent_decode(clip: LatentClip) -> Waveform:
    z = np.asarray(clip.z, dtype=np.float64)
    T, D = z.shape
    means = z * clip.std + clip.mean
    sub = np.repeat(means[..., None], clip.hop, axis=2)
    if clip.residual is not None:
        sub = sub + clip.residual
    x = sub.reshape(-1)
    n = clip.n_samples if clip.n_samples is not None else clip.seconds * SAMPLE_RATE
    return Waveform(x[:n].astype(np.float32))


# -- training ------------------------------------------------------------------

@dataclass
class Batch:
    semantic: np.ndarray    # [B, M, Ds]
    emotional: np.ndarray   # [B, M, He]
    scene: np.ndarray       # [B, M]
    beats: np.ndarray       # [B, M]
    rhythm_gt: np.ndarray   # [B, M, r]
    z0: np.ndarray          # [B, T, D]
    g_start: np.ndarray     # [B]
    g_dur: np.ndarray       # [B]

    @classmethod
    def stack(cls, items: list["Batch"]) -> "Batch":
        return cls(*(np.concatenate([getattr(b, f) for b in items], axis=0)
                     for f in cls.__dataclass_fields__))


@dataclass
class StepResult:
    loss: float
    ldm_loss: float
    predictor_loss: float
    used_predicted: bool
    t: float


class Trainer:
    """Joint predictor + generator training with scheduled conditioning."""

    def __init__(self, predictor: RhythmPredictor, generator: Generator, optimizer: AdamW,
                 sched: ScheduleParams = ScheduleParams(), pred_weight: float = 1.0,
                 seed: int = 0):
        self.predictor = predictor
        self.generator = generator
        self.optimizer = optimizer
        self.sched = sched
        self.pred_weight = pred_weight
        self.rng = np.random.default_rng(seed)
        self.global_step = 0

    def training_step(self, batch: Batch, epoch: int, rng_seed: int) -> StepResult:
        """Forward + backward for one batch; gradients are left on the parameters."""
        rng = np.random.default_rng(rng_seed)
        use_pred = bool(rng.random() < p_pred(epoch, self.sched))
        t = float(rng.uniform(T_MIN, 1.0))
        eps = rng.standard_normal(batch.z0.shape).astype(np.float32)
        B = batch.z0.shape[0]
        keep = (rng.random(B) >= self.generator.cfg.cond_drop_prob).astype(np.float32)

        pred = self.predictor.predict(batch.semantic, batch.scene, batch.beats)
        p_loss = predictor_loss(pred, batch.rhythm_gt)
        rhythm = pred if use_pred else Tensor(batch.rhythm_gt)
        cond = self.generator.encode_conditions(batch.emotional, batch.semantic, rhythm,
                                                batch.g_start, batch.g_dur, keep=keep)
        z_t = add_noise(batch.z0, eps, t).astype(np.float32)
        v_hat = self.generator(Tensor(z_t), cond, t)
        ldm = mse_loss(v_hat, Tensor(v_target(batch.z0, eps, t).astype(np.float32)))
        total = ldm + p_loss * self.pred_weight
        total.backward()
        return StepResult(total.item(), ldm.item(), p_loss.item(), use_pred, t)

    def step(self, batch: Batch, epoch: int) -> StepResult:
        self.optimizer.zero_grad()
        seed = int(self.rng.integers(0, 2**63 - 1))
        res = self.training_step(batch, epoch, seed)
        self.optimizer.step()
        self.global_step += 1
        return res

    def evaluate(self, batch: Batch, n_probe: int = 16, seed: int = 1234,
                 use_predicted: bool = True) -> tuple[float, float]:
        """Mean LDM loss over a fixed set of (t, noise) draws, and predictor loss."""
        rng = np.random.default_rng(seed)
        with no_grad():
            pred = self.predictor.predict(batch.semantic, batch.scene, batch.beats)
            p_loss = predictor_loss(pred, batch.rhythm_gt).item()
            rhythm = pred if use_predicted else Tensor(batch.rhythm_gt)
            cond = self.generator.encode_conditions(batch.emotional, batch.semantic, rhythm,
                                                    batch.g_start, batch.g_dur)
            total = 0.0
            for _ in range(n_probe):
                t = float(rng.uniform(T_MIN, 1.0))
                eps = rng.standard_normal(batch.z0.shape).astype(np.float32)
                v_hat = self.generator(Tensor(add_noise(batch.z0, eps, t).astype(np.float32)), cond, t)
                total += float(np.mean((v_hat.data - v_target(batch.z0, eps, t)) ** 2))
        return total / n_probe, p_loss
