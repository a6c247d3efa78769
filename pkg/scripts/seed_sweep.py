"""Spread of the desk-scale loss ratio and train SROCC over seeds and image sizes."""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from _common import desk_config, desk_data, setup

from amqf.metrics import srocc
from amqf.data import load_image
from amqf.training import model_from_checkpoint, score_pair, train_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/seed_sweep")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3])
    ap.add_argument("--sizes", type=int, nargs="+", default=[80])
    ap.add_argument("--batch-size", type=int, default=8)
    args = ap.parse_args()
    setup()
    for size in args.sizes:
        ratios, rhos = [], []
        for seed in args.seeds:
            train, _ = desk_data(Path(args.out) / f"size{size}", seed, size)
            ckpt = train_model(train, desk_config(seed, batch_size=args.batch_size))
            model = model_from_checkpoint(ckpt)
            qs = [score_pair(model, load_image(e.ref_path), load_image(e.dist_path))[0] for e in train]
            ratios.append(ckpt.history[-1]["total"] / ckpt.history[0]["total"])
            rhos.append(srocc(qs, [e.mos for e in train]))
            print(f"size {size} seed {seed}: ratio {ratios[-1]:.3f}  SROCC {rhos[-1]:.3f}", flush=True)
        print(f"size {size}: ratio mean {np.mean(ratios):.3f} max {np.max(ratios):.3f}; "
              f"SROCC mean {np.mean(rhos):.3f} min {np.min(rhos):.3f}")


if __name__ == "__main__":
    main()
