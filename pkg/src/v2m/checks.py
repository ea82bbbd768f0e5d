"""Gradient suite and quick self-test behind the ``gradcheck`` / ``selftest`` commands."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .autodiff import OP_KINDS, Tensor, apply_op, backward, grad_check, no_grad

F64 = np.float64


def _weighted(out: Tensor, rng) -> Tensor:
    # fixed random weights so every output element carries a distinct gradient
    w = Tensor(rng.standard_normal(out.shape), dtype=out.dtype)
    return (out * w).sum()


def op_cases(seed: int = 0) -> dict[str, tuple[Callable[[Tensor], Tensor], np.ndarray]]:
    """One ``(loss_fn, input)`` per op kind; the other operands are constants."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    c = lambda a: Tensor(a, dtype=F64)  # noqa: E731
    other, other_b, bias = r(2, 4, 3), r(3, 4), r(4)
    wide, block, target = r(3, 2, 4), r(2, 2), r(3, 4)
    idx = np.array([[0, 2, 2], [4, 1, 0]])
    wrng = lambda k: np.random.default_rng(seed + 1000 + k)  # noqa: E731

    def unary(kind, attrs=None, k=0):
        return lambda x: _weighted(apply_op(kind, [x], attrs), wrng(k))

    cases = {
        "matmul": (lambda x: _weighted(x @ c(other_b), wrng(1)), r(2, 3, 3)),
        "add": (lambda x: _weighted(apply_op("add", [x, c(other)]), wrng(2)), r(2, 4, 3)),
        "broadcast_add": (lambda x: _weighted(apply_op("broadcast_add", [c(wide), x]), wrng(3)),
                          bias[None, :].repeat(2, 0)),
        "sub": (lambda x: _weighted(apply_op("sub", [c(other), x]), wrng(4)), r(2, 4, 3)),
        "mul": (lambda x: _weighted(apply_op("mul", [x, x * 1.0 + c(other)]), wrng(5)), r(2, 4, 3)),
        "scale": (unary("scale", {"factor": -1.7}, 6), r(3, 4)),
        "transpose": (unary("transpose", {"axes": (2, 0, 1)}, 7), r(2, 3, 4)),
        "reshape": (unary("reshape", {"shape": (4, 6)}, 8), r(2, 3, 4)),
        "concat": (lambda x: _weighted(apply_op("concat", [x, c(block), x], {"axis": 1}), wrng(9)),
                   r(2, 3)),
        "slice": (unary("slice", {"index": (slice(None), slice(1, 3))}, 10), r(3, 4)),
        "softmax": (unary("softmax", {"axis": -1}, 11), r(3, 5)),
        "layer_norm": (unary("layer_norm", {"axis": -1, "eps": 1e-5}, 12), r(3, 6)),
        "sigmoid": (unary("sigmoid", None, 13), 2 * r(3, 4)),
        "gelu": (unary("gelu", None, 14), 2 * r(3, 4)),
        "embedding_lookup": (lambda x: _weighted(apply_op("embedding_lookup", [x], {"indices": idx}),
                                                 wrng(15)), r(5, 3)),
        "mean": (lambda x: apply_op("mean", [x], {"axis": 1, "keepdims": True}).sum()
                 + _weighted(apply_op("mean", [x], {"axis": 0}), wrng(16)), r(3, 4)),
        "sum": (lambda x: _weighted(apply_op("sum", [x], {"axis": -1, "keepdims": False}), wrng(17)),
                r(3, 4)),
        "mse_loss": (lambda x: apply_op("mse_loss", [x, c(target)]), r(3, 4)),
    }
    missing = set(OP_KINDS) - set(cases)
    if missing:
        raise AssertionError(f"ops without a gradient case: {sorted(missing)}")
    return cases


def op_gradient_errors(seed: int = 0, h: float = 1e-6) -> list[tuple[str, float]]:
    out = []
    for kind, (fn, x) in op_cases(seed).items():
        out.append((f"op:{kind}", grad_check(fn, Tensor(x, dtype=F64), h)))
    return out


def parameter_grad_error(loss_fn: Callable[[], Tensor], named_params, rng, coords: int = 4,
                         h: float = 1e-6) -> tuple[float, str]:
    """Worst relative error over ``coords`` random coordinates of every parameter."""
    params = list(named_params)
    for _, p in params:
        p.grad = None
    backward(loss_fn())
    worst, where = 0.0, ""
    with no_grad():
        for name, p in params:
            flat = p.data.reshape(-1)
            analytic = (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
            pick = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
            for i in pick:
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                err = abs(analytic[i] - num) / max(abs(analytic[i]), 1e-6)
                if err > worst:
                    worst, where = err, f"{name}[{i}]"
    return worst, where


def _perturb(module, rng, scale: float = 0.05) -> None:
    # zero-initialised heads (out_proj, FiLM, gate) would hide every upstream gradient
    for _, p in module.named_parameters():
        p.data = p.data + scale * rng.standard_normal(p.shape).astype(p.dtype)


def generator_gradient_errors(seed: int = 0, coords: int = 3, strategies=None):
    from .generator import FusionKind, FusionStrategy, Generator, GeneratorConfig

    out = []
    for kind in strategies or list(FusionKind):
        rng = np.random.default_rng(seed)
        cfg = GeneratorConfig(d_model=16, n_blocks=2, n_heads=2, ffn_mult=2,
                              strategy=FusionStrategy(kind), semantic_dim=8, emotion_dim=6,
                              latent_dim=4, max_len=16)
        g = Generator(cfg, rng).astype(F64)
        _perturb(g, rng)
        M, T = 3, 6
        emo = Tensor(rng.random((1, M, 6)), dtype=F64)
        sem = Tensor(rng.standard_normal((1, M, 8)), dtype=F64)
        rhy = Tensor(rng.random((1, M, 1)), dtype=F64)
        z = Tensor(rng.standard_normal((1, T, 4)), dtype=F64)
        target = Tensor(rng.standard_normal((1, T, 4)), dtype=F64)
        for t in (0.1, 0.7):  # both sides of the selection threshold
            def loss():
                cond = g.encode_conditions(emo, sem, rhy, [0.0], [float(M)])
                return apply_op("mse_loss", [g(z, cond, t), target])
            err, where = parameter_grad_error(loss, g.named_parameters(), rng, coords)
            out.append((f"generator:{kind.value}:t={t}", err, where))
    return out


def predictor_gradient_error(seed: int = 0, coords: int = 4):
    from .predictor import PredictorConfig, RhythmPredictor, predictor_loss

    rng = np.random.default_rng(seed)
    p = RhythmPredictor(PredictorConfig(d_model=16, n_layers=2, n_heads=2, semantic_dim=8), rng)
    p.astype(F64)
    M = 5
    sem = rng.standard_normal((1, M, 8))
    scene = (rng.random((1, M)) > 0.5).astype(float)
    beats = rng.random((1, M))
    gt = rng.random((1, M, 1))

    def loss():
        return predictor_loss(p.predict(sem, scene, beats), gt)

    err, where = parameter_grad_error(loss, p.named_parameters(), rng, coords)
    return err, where


def gradient_suite(seed: int = 0) -> list[tuple[str, float]]:
    res = op_gradient_errors(seed)
    res += [(name, err) for name, err, _ in generator_gradient_errors(seed)]
    res.append(("predictor", predictor_gradient_error(seed)[0]))
    return res


# -- quick self-test ------------------------------------------------------------------

def selftest() -> list[tuple[str, bool, str]]:
    from .audio import (SAMPLE_RATE, Waveform, mel_filterbank, mel_raw, odf_lr_audio,
                        stft_magnitude)
    from .diffusion import add_noise, ddim_sample, p_pred, schedule, v_target
    from .synthetic import click_track

    out = []
    a, s = schedule(0.5)
    out.append(("schedule", abs(a - math.sqrt(0.5)) < 1e-12 and schedule(1.0) == (0.0, 1.0),
                f"t=0.5 -> ({a:.6f}, {s:.6f})"))
    pp = [p_pred(e) for e in (5, 20, 40)]
    out.append(("p_pred", pp == [0.0, 0.5, 1.0], f"epochs 5/20/40 -> {pp}"))

    n = SAMPLE_RATE * 2
    sine = Waveform((0.5 * np.sin(2 * np.pi * 440 * np.arange(n) / SAMPLE_RATE)).astype(np.float32))
    band = int(mel_raw(stft_magnitude(sine)).mean(axis=0).argmax())
    fb = mel_filterbank(64)
    hz = np.fft.rfftfreq(2048, 1 / SAMPLE_RATE)
    lo, hi = hz[fb[band] > 0].min(), hz[fb[band] > 0].max()
    out.append(("mel 440 Hz", lo <= 440 <= hi, f"argmax band {band} spans {lo:.0f}-{hi:.0f} Hz"))

    events = [2, 5, 6]
    o = odf_lr_audio(click_track(events, 8)).matrix[:, 0]
    got = sorted(np.flatnonzero(o).tolist())
    out.append(("odf_lr clicks", got == events, f"events {events} -> nonzero {got}"))

    rng = np.random.default_rng(0)
    z0 = rng.standard_normal((1, 6, 4))
    eps = rng.standard_normal(z0.shape)
    oracle = lambda z, t: (v_target(z0, (z - schedule(t)[0] * z0) / schedule(t)[1], t),) * 2  # noqa: E731
    start = add_noise(z0, eps, 0.8)
    rec = ddim_sample(oracle, z0.shape, 10, 3.0, 0, start_t=0.8, z_start=start)
    err = float(np.abs(rec - z0).max())
    out.append(("ddim oracle", err < 1e-4, f"max |z0_hat - z0| = {err:.2e}"))
    return out
