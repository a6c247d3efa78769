"""Shared helpers for the experiment scripts."""
from __future__ import annotations

import warnings
from pathlib import Path

import torch

from amqf.config import TrainConfig, from_dict
from amqf.data import load_image, synth_dataset

DESK = {
    "epochs": 1000, "max_steps": 500, "batch_size": 8, "crop_size": 64,
    "encoder": {"out_channels": 32}, "adapter": {"dim": 32}, "dictionary": {"n_words": 64},
}


def setup():
    torch.set_num_threads(1)
    warnings.filterwarnings("ignore", message="logistic fit rejected")


def desk_data(root: Path, seed: int, size: int):
    """Training set (8 refs x blur/noise x 4 levels) and 20 held-out blur ladders."""
    train = synth_dataset(8, ["blur", "noise"], 4, root / f"train_s{seed}", seed=seed, size=size)
    held = synth_dataset(20, ["blur"], 5, root / f"held_s{seed}", seed=1000 + seed, size=size)
    return train, held


def desk_config(seed: int, **overrides) -> TrainConfig:
    return from_dict(TrainConfig, {**DESK, "seed": seed, **overrides})


def monotone_fraction(model, held) -> float:
    from amqf.training import score_pair

    ladders: dict = {}
    for e in held:
        ladders.setdefault(e.ref_path, []).append((e.level, e.dist_path))
    hits = 0
    for ref_path, dists in ladders.items():
        ref = load_image(ref_path)
        qs = [score_pair(model, ref, load_image(p))[0] for _, p in sorted(dists)]
        hits += all(a > b for a, b in zip(qs, qs[1:]))
    return hits / len(ladders)
