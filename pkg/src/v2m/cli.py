"""Command-line entry point.

Failures exit with status 1 and print one JSON line on stderr::

    {"error": "FormatError", "message": "..."}
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import pipeline
from .config import RunConfig

DEFAULT_SEED = 0


def default_seed() -> int:
    env = os.environ.get("V2M_SEED")
    if env is None or env == "":
        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"V2M_SEED must be an integer, got {env!r}") from None


def load_config(path) -> RunConfig:
    """Config file; ``V2M_SEED`` fills ``seed`` when the file leaves it unset."""
    if path is None:
        return RunConfig(seed=default_seed())
    cfg = RunConfig.load(path)
    if not any(line.split("#", 1)[0].split("=", 1)[0].strip() == "seed"
               for line in open(path).read().splitlines()):
        cfg = cfg.replace(seed=default_seed())
    return cfg


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_extract(a) -> None:
    cfg = load_config(a.config)
    s = pipeline.cmd_extract(a.frames, a.audio, a.repr, a.out, cfg, a.csv)
    _print_json({"out": a.out, "M": int(s["semantic"].shape[0]),
                 "rhythm_gt": list(s["rhythm_gt"].shape)})


def cmd_extract_dir(a) -> None:
    cfg = load_config(a.config)
    paths = pipeline.extract_dataset(a.data, a.repr, cfg, a.workers)
    _print_json({"extracted": len(paths)})


def cmd_synth(a) -> None:
    seed = a.seed if a.seed is not None else default_seed()
    clips = pipeline.write_synthetic_dataset(a.out, a.n, a.seconds, a.events, seed)
    _print_json({"clips": [str(c) for c in clips]})


def cmd_train(a) -> None:
    cfg = load_config(a.config) if a.config or not a.resume else None
    _, rows = pipeline.cmd_train(a.config, a.data, a.out, resume=a.resume, csv_path=a.csv, cfg=cfg)
    _print_json({"checkpoint": a.out, "epochs": len(rows),
                 "last": dict(zip(pipeline.CSV_COLUMNS, rows[-1])) if rows else None})


def cmd_generate(a) -> None:
    seed = a.seed if a.seed is not None else default_seed()
    rep = pipeline.cmd_generate(a.ckpt, a.frames, a.out, a.steps, a.scale, seed, a.report)
    _print_json(rep)


def cmd_compare(a) -> None:
    cfg = load_config(a.config)
    rows = pipeline.cmd_compare_rhythm(a.config, a.data, a.out, cfg=cfg)
    for r in rows:
        _print_json(dict(zip(pipeline.COMPARE_COLUMNS, r)))


def cmd_gradcheck(a) -> None:
    from .checks import gradient_suite
    results = gradient_suite(seed=a.seed if a.seed is not None else default_seed())
    worst = 0.0
    for name, err in results:
        worst = max(worst, err)
        print(f"{name:32s} max_rel_err={err:.3e}")
    ok = worst < a.tol
    print(f"gradcheck {'PASS' if ok else 'FAIL'} worst={worst:.3e} tol={a.tol:g}")
    if not ok:
        raise RuntimeError(f"gradient check failed: worst relative error {worst:.3e}")


def cmd_selftest(a) -> None:
    from .checks import selftest
    failures = 0
    for name, ok, detail in selftest():
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    if failures:
        raise RuntimeError(f"{failures} self-test check(s) failed")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="v2m", description="Video-to-music diffusion at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", help="features for one clip")
    s.add_argument("--frames", required=True, help="directory of frame_%%05d.ppm")
    s.add_argument("--audio", required=True)
    s.add_argument("--repr", default="odf", choices=["mel", "tempogram", "odf"])
    s.add_argument("--out", required=True)
    s.add_argument("--csv", help="also write per-second features as CSV")
    s.add_argument("--config")
    s.set_defaults(fn=cmd_extract)

    s = sub.add_parser("extract-dir", help="features for every clip in a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--repr", default="odf", choices=["mel", "tempogram", "odf"])
    s.add_argument("--config")
    s.add_argument("--workers", type=int, help="extraction threads (default: min(8, cpus))")
    s.set_defaults(fn=cmd_extract_dir)

    s = sub.add_parser("synth", help="write synthetic paired clips")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seconds", type=int, default=10)
    s.add_argument("--events", type=int, default=4)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--csv", help="per-epoch loss CSV (default: checkpoint path with .csv)")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("generate")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--scale", type=float, default=3.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--report", help="JSON report path (default: <out>.json)")
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("compare-rhythm")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("gradcheck")
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("selftest")
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        args.fn(args)
    except Exception as e:  # noqa: BLE001 - reported as a machine-readable line
        print(json.dumps({"error": type(e).__name__, "message": str(e),
                          "command": args.command}), file=sys.stderr)
        return 1
    logging.getLogger(__name__).info("%s done in %.1fs", args.command, time.perf_counter() - t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
