"""End-to-end commands: extract, train, generate, compare-rhythm."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, RhythmKind, Waveform, odf_lr_audio, rhythm_representation
from .autodiff import no_grad
from .config import ConfigError, RunConfig
from .diffusion import (Batch, LatentClip, ScheduleParams, Trainer, ddim_sample, guided_v_fn,
                        latent_decode, latent_encode, latent_frames, p_pred)
from .formats import Checkpoint, read_features, write_features
from .generator import FusionKind, FusionStrategy, Generator, GeneratorConfig
from .mediaio import read_frames, read_wav, write_frames, write_wav
from .optim import AdamW, InverseLR
from .predictor import PredictorConfig, RhythmPredictor
from .synthetic import alignment_from_vectors, generate_synthetic_pair
from .visual import FrameSequence, extract_video_features

log = logging.getLogger(__name__)

FEATURES_NAME = "features.v2mf"
KIND_CODES = {RhythmKind.MEL: 0, RhythmKind.TEMPOGRAM: 1, RhythmKind.ODF: 2}
CSV_COLUMNS = ["epoch", "ldm_loss", "predictor_loss", "p_pred"]
COMPARE_COLUMNS = ["repr", "ldm_loss", "pred_loss", "align_score", "steps"]


class PipelineError(RuntimeError):
    pass


# -- extraction --------------------------------------------------------------------

def extract_features(fs: FrameSequence, audio: Waveform, kind: RhythmKind | str,
                     cfg: RunConfig = RunConfig()) -> dict[str, np.ndarray]:
    kind = RhythmKind(kind)
    M = fs.M
    if audio.seconds != M:
        raise PipelineError(f"length mismatch: frames give M={M}, audio gives M={audio.seconds}")
    audio = audio.whole_seconds()
    video = extract_video_features(fs, cfg.semantic_dim, cfg.seed, cfg.hist_bins)
    rhythm = rhythm_representation(audio, kind)
    odf = rhythm if kind is RhythmKind.ODF else odf_lr_audio(audio)
    return {
        "semantic": video.semantic,
        "emotional": video.emotional,
        "scene": video.scene,
        "beats": video.beats,
        "rhythm_gt": rhythm.matrix.astype(np.float32),
        "odf_gt": odf.matrix.astype(np.float32),
        "latent": latent_encode(audio).z,
        "rhythm_kind": np.array([KIND_CODES[kind]], dtype=np.float32),
    }


def cmd_extract(video_dir, audio_path, repr_kind, out_path, cfg: RunConfig = RunConfig(),
                csv_path=None):
    fs = read_frames(video_dir)
    audio = read_wav(audio_path)
    sections = extract_features(fs, audio, repr_kind, cfg)
    write_features(out_path, sections)
    if csv_path is not None:
        write_features_csv(csv_path, sections)
    return sections


def write_features_csv(path, sections) -> None:
    """One row per second: scene, beat, then the rhythm representation columns."""
    r = sections["rhythm_gt"]
    header = ["second", "scene", "beat"] + [f"r{j}" for j in range(r.shape[1])]
    rows = [[str(m), repr(float(sections["scene"][m])), repr(float(sections["beats"][m]))]
            + [repr(float(x)) for x in r[m]] for m in range(r.shape[0])]
    _write_csv(path, header, rows)


def feature_kind(sections) -> RhythmKind:
    code = int(sections["rhythm_kind"][0])
    return {v: k for k, v in KIND_CODES.items()}[code]


def write_synthetic_dataset(data_dir, n: int, M: int, n_events: int, seed: int) -> list[Path]:
    data_dir = Path(data_dir)
    out = []
    for i in range(n):
        pair = generate_synthetic_pair(M, n_events, seed + i)
        clip = data_dir / f"clip_{i:03d}"
        write_frames(clip / "frames", pair.frames)
        write_wav(clip / "audio.wav", pair.audio, peak_dbfs=None)
        out.append(clip)
    return out


def clip_dirs(data_dir) -> list[Path]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise PipelineError(f"{data_dir}: not a directory")
    return sorted(p for p in data_dir.iterdir() if (p / "frames").is_dir() and (p / "audio.wav").is_file())


def extract_dataset(data_dir, kind, cfg: RunConfig = RunConfig(), workers: int | None = None) -> list[Path]:
    """Write ``features.v2mf`` into every clip directory of ``data_dir``.

    Clips are independent, so they are extracted on a thread pool; each file
    depends only on its own clip, so the output does not depend on ``workers``.
    """
    clips = clip_dirs(data_dir)

    def one(clip: Path) -> Path:
        cmd_extract(clip / "frames", clip / "audio.wav", kind, clip / FEATURES_NAME, cfg)
        return clip / FEATURES_NAME

    with ThreadPoolExecutor(max_workers=workers or min(8, os.cpu_count() or 1)) as pool:
        return list(pool.map(one, clips))


# -- models and checkpoints --------------------------------------------------------------

@dataclass
class Models:
    cfg: RunConfig
    predictor: RhythmPredictor
    generator: Generator
    optimizer: AdamW

    def named_parameters(self):
        for n, p in self.predictor.named_parameters("predictor."):
            yield n, p
        for n, p in self.generator.named_parameters("generator."):
            yield n, p


def build_models(cfg: RunConfig) -> Models:
    kind = RhythmKind(cfg.rhythm_kind)
    rng = np.random.default_rng(cfg.seed)
    pcfg = PredictorConfig(d_model=cfg.pred_d_model, n_layers=cfg.pred_layers,
                           n_heads=cfg.pred_heads, out_dim=kind.dim, max_len=cfg.max_seconds,
                           semantic_dim=cfg.semantic_dim)
    gcfg = GeneratorConfig(d_model=cfg.d_model, n_blocks=cfg.n_blocks, n_heads=cfg.n_heads,
                           ffn_mult=cfg.ffn_mult,
                           strategy=FusionStrategy(FusionKind(cfg.strategy), cfg.t0),
                           cond_drop_prob=cfg.cond_drop_prob, semantic_dim=cfg.semantic_dim,
                           emotion_dim=3 * cfg.hist_bins, rhythm_dim=kind.dim,
                           max_len=latent_frames(cfg.max_seconds), max_seconds=cfg.max_seconds)
    predictor = RhythmPredictor(pcfg, rng)
    generator = Generator(gcfg, rng)
    models = Models(cfg, predictor, generator, None)
    models.optimizer = AdamW(list(models.named_parameters()), lr=cfg.lr,
                             betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay,
                             schedule=InverseLR(cfg.inv_gamma, cfg.power, cfg.warmup))
    return models


def make_checkpoint(models: Models, trainer: Trainer, epoch: int) -> Checkpoint:
    tensors = {n: p.data for n, p in models.named_parameters()}
    tensors.update({f"opt.{k}": v for k, v in models.optimizer.state_dict().items()})
    return Checkpoint(models.cfg.to_text(), models.cfg.strategy, epoch,
                      models.optimizer.step_count, trainer.rng.bit_generator.state, tensors)


def restore(ckpt: Checkpoint) -> tuple[Models, Trainer]:
    cfg = RunConfig.from_text(ckpt.config_text, "checkpoint config")
    if cfg.strategy != ckpt.strategy:
        raise PipelineError(f"checkpoint strategy {ckpt.strategy!r} does not match its config "
                            f"strategy {cfg.strategy!r}")
    models = build_models(cfg)
    params = {k: v for k, v in ckpt.tensors.items() if not k.startswith("opt.")}
    own = dict(models.named_parameters())
    missing = sorted(set(own) - set(params))
    extra = sorted(set(params) - set(own))
    if missing or extra:
        raise PipelineError(f"checkpoint parameters mismatch: missing={missing[:5]} extra={extra[:5]}")
    for name, p in own.items():
        p.data = params[name].astype(p.dtype, copy=True)
    models.optimizer.load_state_dict({k[4:]: v for k, v in ckpt.tensors.items()
                                      if k.startswith("opt.")}, ckpt.opt_step)
    trainer = make_trainer(models)
    trainer.rng.bit_generator.state = ckpt.rng_state
    trainer.global_step = ckpt.opt_step
    return models, trainer


def make_trainer(models: Models) -> Trainer:
    cfg = models.cfg
    return Trainer(models.predictor, models.generator, models.optimizer,
                   ScheduleParams(cfg.e1, cfg.e2), cfg.pred_weight, seed=cfg.seed)


# -- training ----------------------------------------------------------------------

def batch_from_sections(s: dict[str, np.ndarray]) -> Batch:
    M = s["semantic"].shape[0]
    return Batch(
        semantic=s["semantic"][None], emotional=s["emotional"][None],
        scene=s["scene"][None], beats=s["beats"][None], rhythm_gt=s["rhythm_gt"][None],
        z0=s["latent"][None], g_start=np.zeros(1), g_dur=np.full(1, float(M)),
    )


def load_training_set(data_dir, kind: RhythmKind) -> list[Batch]:
    paths = sorted(Path(data_dir).glob(f"*/{FEATURES_NAME}"))
    if not paths:
        raise PipelineError(f"{data_dir}: no */{FEATURES_NAME} files; run extract first")
    out = []
    for p in paths:
        s = read_features(p)
        if feature_kind(s) is not kind:
            raise PipelineError(f"{p}: rhythm kind {feature_kind(s).value} != config {kind.value}")
        out.append(batch_from_sections(s))
    return out


def _check_same_length(clips: list[Batch]) -> None:
    lengths = sorted({c.semantic.shape[1] for c in clips})
    if len(lengths) > 1:
        raise PipelineError(f"batched training needs equal clip lengths, got M in {lengths}")


@dataclass
class EpochRow:
    epoch: int
    ldm_loss: float
    predictor_loss: float
    p_pred: float

    def cells(self) -> list[str]:
        return [str(self.epoch), repr(self.ldm_loss), repr(self.predictor_loss), repr(self.p_pred)]


def run_epochs(models: Models, trainer: Trainer, clips: list[Batch], start_epoch: int,
               end_epoch: int, on_epoch=None) -> list[EpochRow]:
    cfg = models.cfg
    if cfg.batch_size > 1:
        _check_same_length(clips)
    rows = []
    for epoch in range(start_epoch, end_epoch):
        ldm, pl = [], []
        for _ in range(cfg.steps_per_epoch):
            k = min(cfg.batch_size, len(clips))
            idx = np.sort(trainer.rng.choice(len(clips), size=k, replace=False))
            batch = clips[idx[0]] if k == 1 else Batch.stack([clips[i] for i in idx])
            res = trainer.step(batch, epoch)
            ldm.append(res.ldm_loss)
            pl.append(res.predictor_loss)
        row = EpochRow(epoch, float(np.mean(ldm)), float(np.mean(pl)), p_pred(epoch, trainer.sched))
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return rows


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _read_csv_rows(path) -> list[list[str]]:
    with open(path, newline="") as f:
        return list(csv.reader(f))[1:]


RESUMABLE_KEYS = ("epochs", "save_every")


def _extend(saved: RunConfig, new: RunConfig) -> RunConfig:
    """Config for a resumed run: only the epoch budget and save interval may change."""
    diff = [k for k, v in vars(saved).items() if k not in RESUMABLE_KEYS and getattr(new, k) != v]
    if diff:
        raise ConfigError(f"resume config differs from checkpoint in: {', '.join(sorted(diff))}")
    return saved.replace(**{k: getattr(new, k) for k in RESUMABLE_KEYS})


def cmd_train(config_path, data_dir, ckpt_out, resume=None, csv_path=None,
              cfg: RunConfig | None = None) -> tuple[Models, list[list[str]]]:
    """Train, saving ``ckpt_out`` every ``save_every`` epochs and at the end.

    The per-epoch CSV defaults to ``ckpt_out`` with a ``.csv`` suffix. With
    ``resume`` the run continues from the checkpoint's epoch and rows already
    logged for earlier epochs are kept.
    """
    ckpt_out = Path(ckpt_out)
    csv_path = Path(csv_path) if csv_path else ckpt_out.with_suffix(".csv")
    if resume is not None:
        ckpt = Checkpoint.load(resume)
        models, trainer = restore(ckpt)
        start = ckpt.epoch
        if cfg is None and config_path is not None:
            cfg = RunConfig.load(config_path)
        if cfg is not None:
            models.cfg = _extend(models.cfg, cfg)
        cfg = models.cfg
        rows = [r for r in _read_csv_rows(csv_path) if int(r[0]) < start] if csv_path.exists() else []
    else:
        cfg = cfg if cfg is not None else RunConfig.load(config_path)
        models = build_models(cfg)
        trainer = make_trainer(models)
        start, rows = 0, []
    clips = load_training_set(data_dir, RhythmKind(cfg.rhythm_kind))

    def on_epoch(row: EpochRow):
        rows.append(row.cells())
        _write_csv(csv_path, CSV_COLUMNS, rows)
        done = row.epoch + 1
        if done % cfg.save_every == 0 or done == cfg.epochs:
            make_checkpoint(models, trainer, done).save(ckpt_out)
        log.info("epoch %d ldm=%.5f pred=%.5f p_pred=%.3f",
                 row.epoch, row.ldm_loss, row.predictor_loss, row.p_pred)

    run_epochs(models, trainer, clips, start, cfg.epochs, on_epoch)
    return models, rows


# -- generation ---------------------------------------------------------------------

def predict_rhythm(models: Models, sections) -> np.ndarray:
    with no_grad():
        return models.predictor.predict(sections["semantic"], sections["scene"],
                                        sections["beats"]).data[0]


def sample_audio(models: Models, sections, rhythm: np.ndarray, steps: int, scale: float,
                 seed: int) -> Waveform:
    g = models.generator
    M = sections["semantic"].shape[0]
    with no_grad():
        cond = g.encode_conditions(sections["emotional"][None], sections["semantic"][None],
                                   rhythm[None], [0.0], [float(M)])
        uncond = g.null_conditions(1, M, [0.0], [float(M)])
    T = latent_frames(M, g.cfg.latent_dim)
    z = ddim_sample(guided_v_fn(g, cond, uncond), (1, T, g.cfg.latent_dim), steps, scale, seed)
    return latent_decode(LatentClip(z[0], M, n_samples=M * SAMPLE_RATE))


def generate_from_sections(models: Models, sections, out_wav, steps: int, scale: float,
                           seed: int, reference_odf=None) -> dict:
    kind = RhythmKind(models.cfg.rhythm_kind)
    rhythm = predict_rhythm(models, sections)
    audio = sample_audio(models, sections, rhythm, steps, scale, seed)
    write_wav(out_wav, audio)
    written = read_wav(out_wav)
    ref = reference_odf
    if ref is None and kind is RhythmKind.ODF:
        ref = rhythm
    score = None
    if ref is not None:
        score = alignment_from_vectors(odf_lr_audio(written).matrix, ref)
    return {
        "wav": str(out_wav),
        "seconds": written.seconds,
        "samples": int(len(written.samples)),
        "rhythm_kind": kind.value,
        "steps": steps,
        "cfg_scale": scale,
        "seed": seed,
        "align_score": score,
        "align_reference": "predicted" if reference_odf is None else "reference",
    }


def cmd_generate(ckpt, video_dir, out_wav, steps: int = 50, scale: float = 3.0, seed: int = 0,
                 report_path=None) -> dict:
    models, _ = restore(Checkpoint.load(ckpt))
    cfg = models.cfg
    fs = read_frames(video_dir)
    video = extract_video_features(fs, cfg.semantic_dim, cfg.seed, cfg.hist_bins)
    sections = {"semantic": video.semantic, "emotional": video.emotional,
                "scene": video.scene, "beats": video.beats}
    report = generate_from_sections(models, sections, out_wav, steps, scale, seed)
    report_path = Path(report_path) if report_path else Path(str(out_wav) + ".json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# -- evaluation ----------------------------------------------------------------------

def evaluate_models(models: Models, clips: list[Batch], seed: int = 1234) -> tuple[float, float]:
    trainer = make_trainer(models)
    vals = [trainer.evaluate(c, seed=seed) for c in clips]
    return float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals]))


def cmd_compare_rhythm(config_path, data_dir, out_csv, cfg: RunConfig | None = None,
                       work_dir=None) -> list[list[str]]:
    """Train one model per rhythm representation under identical budgets and score them."""
    base = cfg if cfg is not None else RunConfig.load(config_path)
    clips = clip_dirs(data_dir)
    if len(clips) < 10:
        raise PipelineError(f"{data_dir}: compare-rhythm needs >= 10 clips, found {len(clips)}")
    media = [(read_frames(c / "frames"), read_wav(c / "audio.wav")) for c in clips]
    work = Path(work_dir) if work_dir else Path(out_csv).with_suffix(".work")
    work.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in (RhythmKind.MEL, RhythmKind.TEMPOGRAM, RhythmKind.ODF):
        cfg = base.replace(rhythm_kind=kind.value, strategy=FusionKind.ADDITIVE.value)
        sections = [extract_features(fs, a, kind, cfg) for fs, a in media]
        batches = [batch_from_sections(s) for s in sections]
        models = build_models(cfg)
        trainer = make_trainer(models)
        run_epochs(models, trainer, batches, 0, cfg.epochs)
        ldm, pl = evaluate_models(models, batches)
        scores = []
        for i, s in enumerate(sections):
            rep = generate_from_sections(models, s, work / f"{kind.value}_{i:03d}.wav",
                                         cfg.sample_steps, cfg.cfg_scale, cfg.seed + i,
                                         reference_odf=s["odf_gt"])
            scores.append(rep["align_score"])
        rows.append([kind.value, repr(ldm), repr(pl), repr(float(np.mean(scores))),
                     str(trainer.global_step)])
        log.info("compare %s ldm=%.5f pred=%.5f align=%.4f", kind.value, ldm, pl, np.mean(scores))
    _write_csv(out_csv, COMPARE_COLUMNS, rows)
    return rows
