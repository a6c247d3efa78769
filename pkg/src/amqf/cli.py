"""``amqf`` command line: synth, train, score, eval, plot.

Exit codes: 0 success, 2 validation/config error, 3 I/O error, 4 numeric error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from .config import load_run_config, to_dict
from .data import KINDS, load_image, load_manifest, synth_dataset
from .errors import NumericError, ValidationError
from .report import emit_scatter, load_result, run_eval_report
from .training import model_from_checkpoint, score_pair, train_model
from .checkpoint import Checkpoint

log = logging.getLogger("amqf")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _env_seed(default: int = 0) -> int:
    raw = os.environ.get("AMQF_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValidationError("AMQF_SEED must be an integer") from None


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    manifest = synth_dataset(args.refs, kinds, args.levels, args.out, seed=seed, size=args.size)
    print(f"wrote {len(manifest)} pairs to {Path(args.out) / 'manifest.csv'}")
    return EXIT_OK


def _inside(out_dir: Path, name: str) -> Path:
    p = Path(name)
    if p.is_absolute() or ".." in p.parts:
        raise ValidationError(f"{name!r} must be a relative path inside out_dir")
    return out_dir / p


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.override)
    if not cfg.manifest:
        raise ValidationError("config sets no manifest")
    out_dir = Path(cfg.out_dir)
    ckpt_path = _inside(out_dir, cfg.checkpoint)
    manifest = load_manifest(cfg.manifest, cfg.mos_scale, cfg.invert_mos)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True), encoding="utf-8")

    ckpt = train_model(manifest, cfg.train, progress=lambda r: log.info(
        "epoch %d  step %d  total %.5f  mos %.5f  re %.5f  decov %.5f",
        r["epoch"], r["steps"], r["total"], r["mos"], r["re"], r["decov"]))
    ckpt.save(ckpt_path)
    with open(out_dir / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "steps", "total", "mos", "re", "decov"])
        for r in ckpt.history:
            w.writerow([r["epoch"], r["steps"]] + [repr(r[k]) for k in ("total", "mos", "re", "decov")])
    print(f"checkpoint: {ckpt_path}")
    if cfg.eval_after_train:
        res = run_eval_report(manifest, ckpt, out_dir / "eval", baselines=cfg.baselines)
        print(f"train-set SROCC {res.srocc:.4f}  PLCC {res.plcc:.4f}  n={res.n}")
    return EXIT_OK


def cmd_score(args) -> int:
    model = model_from_checkpoint(Checkpoint.load(args.ckpt))
    q, per_factor = score_pair(model, load_image(args.ref), load_image(args.dist))
    print(json.dumps({"q": q, "per_factor": per_factor}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    manifest = load_manifest(args.manifest, tuple(args.mos_scale), args.invert_mos)
    res = run_eval_report(manifest, ckpt, args.out, baselines=args.baselines)
    for note in res.notes:
        print(f"note: {note}")
    print(f"AMqF  SROCC {res.srocc:.4f}  PLCC raw {res.plcc:.4f}  "
          f"PLCC calibrated {res.plcc_calibrated:.4f}  n={res.n}")
    return EXIT_OK


def cmd_plot(args) -> int:
    res = load_result(args.result, args.method)
    table, image = emit_scatter(res, args.out)
    print(f"wrote {table} and {image}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amqf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic distortion dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--refs", type=int, default=8)
    s.add_argument("--levels", type=int, default=4)
    s.add_argument("--seed", type=int, default=None, help="defaults to $AMQF_SEED, then 0")
    s.add_argument("--kinds", default="gaussian_blur,gaussian_noise",
                   help=f"comma-separated subset of {','.join(KINDS)} (aliases: blur, noise, ...)")
    s.add_argument("--size", type=int, default=80, help="reference image side length")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", default=None)
    t.add_argument("--override", "-o", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config key, e.g. train.max_steps=500 (repeatable)")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("score", help="score one reference/distorted pair")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--ref", required=True)
    c.add_argument("--dist", required=True)
    c.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="score a manifest and write correlation reports")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--baselines", action="store_true", help="add PSNR and SSIM correlation rows to the summary")
    e.add_argument("--mos-scale", type=float, nargs=2, default=(0.0, 1.0), metavar=("LO", "HI"))
    e.add_argument("--invert-mos", action="store_true", help="MOS column is DMOS (lower is better)")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("plot", help="scatter plot from an eval result.json")
    g.add_argument("--result", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--method", default="AMqF")
    g.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
