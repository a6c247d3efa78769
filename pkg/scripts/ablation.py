"""Ablation table on the desk-scale set: full model, without the factor adapter,
without the dictionary branch. Desk-scale numbers only; no ordering is implied."""
from __future__ import annotations

import argparse
from pathlib import Path

from _common import desk_config, desk_data, monotone_fraction, setup

from amqf.report import run_eval_report
from amqf.training import model_from_checkpoint, train_model

VARIANTS = {
    "full": {},
    "no_amqf": {"enable_amqf": False},
    "no_rfds": {"enable_rfds": False},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--size", type=int, default=80)
    args = ap.parse_args()
    setup()
    out = Path(args.out)
    train, held = desk_data(out / "data", args.seed, args.size)
    print(f"{'variant':<10} {'SROCC':>7} {'PLCC':>7} {'PLCC_cal':>9} {'mono':>6} {'loss ratio':>10}")
    for name, flags in VARIANTS.items():
        ckpt = train_model(train, desk_config(args.seed, **flags))
        res = run_eval_report(train, ckpt, out / name)
        mono = monotone_fraction(model_from_checkpoint(ckpt), held)
        ratio = ckpt.history[-1]["total"] / ckpt.history[0]["total"]
        print(f"{name:<10} {res.srocc:7.4f} {res.plcc:7.4f} {res.plcc_calibrated:9.4f} {mono:6.0%} {ratio:10.3f}")


if __name__ == "__main__":
    main()
