"""Dataclass configs and strict dict/YAML conversion (unknown keys are errors)."""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .adapter import AdapterConfig
from .encoder import EncoderConfig
from .errors import ConfigError


@dataclass
class DictionaryConfig:
    n_words: int = 64
    seed: int | None = None  # None: reuse the training seed
    trainable: bool = True

    def __post_init__(self):
        if self.n_words < 1:
            raise ConfigError("n_words must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 1e-3
    seed: int = 0
    max_steps: int | None = None
    lambda_re: float = 0.1
    lambda_decov: float = 0.01
    crop_size: int = 224  # desk-scale runs set 64
    enable_amqf: bool = True
    enable_rfds: bool = True
    fusion_weights: dict[str, float] | None = None
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    dictionary: DictionaryConfig = field(default_factory=DictionaryConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be positive")
        for name in ("lambda_re", "lambda_decov"):
            v = getattr(self, name)
            if not (v >= 0 and v != float("inf")):
                raise ConfigError(f"{name} must be finite and >= 0")
        if not self.enable_amqf and not self.enable_rfds:
            raise ConfigError("enable_amqf and enable_rfds cannot both be false: nothing left to score with")
        if self.crop_size % self.encoder.downsample_factor:
            raise ConfigError(
                f"crop_size {self.crop_size} not divisible by downsample_factor {self.encoder.downsample_factor}"
            )

    @property
    def feature_dim(self) -> int:
        """Dimension D seen by the dictionary."""
        return self.adapter.dim if self.enable_amqf else self.encoder.out_channels

    @property
    def dictionary_seed(self) -> int:
        return self.seed if self.dictionary.seed is None else self.dictionary.seed


@dataclass
class RunConfig:
    manifest: str = ""
    out_dir: str = "runs/default"
    checkpoint: str = "checkpoint.amqf"
    mos_scale: tuple[float, float] = (0.0, 1.0)
    invert_mos: bool = False
    eval_after_train: bool = False
    baselines: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)


def from_dict(cls, data: dict | None, where: str = ""):
    """Build dataclass ``cls`` from a nested dict, rejecting unknown keys."""
    data = dict(data or {})
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys at {where or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be a mapping")
            value = from_dict(tp, value, f"{where}{key}.")
        elif key == "mos_scale":
            value = tuple(float(v) for v in value)
        elif key == "extra_factors":
            value = list(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def to_dict(obj) -> dict:
    d = dataclasses.asdict(obj)
    if "mos_scale" in d:
        d["mos_scale"] = list(d["mos_scale"])
    return d


def _set_path(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends into a non-mapping")
    node[keys[-1]] = value


def parse_overrides(overrides: list[str]) -> list[tuple[str, object]]:
    out = []
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out.append((key.strip(), yaml.safe_load(raw)))
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse override value in {item!r}") from None
    return out


def load_run_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults < config file < ``key=value`` overrides.

    ``AMQF_SEED`` supplies ``train.seed`` when neither the file nor an
    override sets it. Relative paths in the file resolve against the file's
    directory.
    """
    tree: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                tree = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    for key, value in parse_overrides(overrides or []):
        _set_path(tree, key, value)
    train = tree.setdefault("train", {})
    if not isinstance(train, dict):
        raise ConfigError("train must be a mapping")
    if "seed" not in train and os.environ.get("AMQF_SEED"):
        try:
            train["seed"] = int(os.environ["AMQF_SEED"])
        except ValueError:
            raise ConfigError("AMQF_SEED must be an integer") from None
    cfg = from_dict(RunConfig, tree)
    for key in ("manifest", "out_dir"):
        value = getattr(cfg, key)
        if value and not Path(value).is_absolute():
            setattr(cfg, key, str((base / value).resolve()))
    enc = cfg.train.encoder
    if enc.weights_path and not Path(enc.weights_path).is_absolute():
        enc.weights_path = str((base / enc.weights_path).resolve())
    return cfg
