"""Manifests, image I/O, synthetic distortions and paired cropping.

Images are float64 arrays in [0, 1], channel-last (H, W, 3).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, ValidationError

MAX_LEVEL = 8

KINDS = (
    "gaussian_blur",
    "gaussian_noise",
    "contrast_reduction",
    "brightness_shift",
    "block_quantization",
)

KIND_ALIASES = {
    "blur": "gaussian_blur",
    "noise": "gaussian_noise",
    "contrast": "contrast_reduction",
    "brightness": "brightness_shift",
    "quantization": "block_quantization",
    "block": "block_quantization",
}


def canonical_kind(kind: str) -> str:
    kind = KIND_ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ConfigError(f"unknown distortion kind {kind!r}; expected one of {KINDS}")
    return kind


def level_params(kind: str, level: int) -> dict:
    """Severity table: distortion parameters as a function of level."""
    kind = canonical_kind(kind)
    if kind == "gaussian_blur":
        return {"sigma": 0.5 * level}
    if kind == "gaussian_noise":
        return {"std": 0.04 * level}
    if kind == "contrast_reduction":
        return {"factor": 1.0 - 0.1 * level}
    if kind == "brightness_shift":
        return {"offset": 0.06 * level}
    return {"block": level + 1, "bits": max(8 - level, 1)}


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    level: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        if not isinstance(self.level, (int, np.integer)) or not 0 <= self.level <= MAX_LEVEL:
            raise ValidationError(f"level must be an integer in [0, {MAX_LEVEL}], got {self.level!r}")
        if not self.params:
            object.__setattr__(self, "params", level_params(self.kind, int(self.level)))


@dataclass
class ImagePair:
    ref: np.ndarray
    dist: np.ndarray
    mos: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        check_image(self.ref, "ref")
        check_image(self.dist, "dist")
        if self.ref.shape != self.dist.shape:
            raise ValidationError(f"ref {self.ref.shape} and dist {self.dist.shape} differ in shape")
        if not 0.0 <= self.mos <= 1.0:
            raise ValidationError(f"mos {self.mos} outside [0, 1]")


@dataclass(frozen=True)
class ManifestEntry:
    ref_path: Path
    dist_path: Path
    mos: float
    kind: str = ""
    level: int | None = None
    line: int = 0


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    mos_scale: tuple[float, float] = (0.0, 1.0)
    source_tag: str = ""

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def check_image(image: np.ndarray, name: str = "image") -> None:
    if not isinstance(image, np.ndarray) or image.ndim != 3 or image.shape[2] != 3:
        shape = getattr(image, "shape", None)
        raise ValidationError(f"{name} must be an H x W x 3 array, got shape {shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0 or not np.isfinite(image).all()):
        raise ValidationError(f"{name} values must lie in [0, 1]")


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            arr = np.repeat(arr[..., None], 3, axis=2)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)


def save_image(path: str | Path, image: np.ndarray) -> None:
    check_image(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(image * 255.0).astype(np.uint8), mode="RGB").save(path, format="PNG")


def to_gray(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an H x W x 3 array."""
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def load_manifest(
    path: str | Path,
    mos_scale: tuple[float, float] = (0.0, 1.0),
    invert: bool = False,
    delimiter: str = ",",
) -> DatasetManifest:
    """Read a ``ref_path,dist_path,mos[,kind,level]`` table.

    MOS values are rescaled linearly from ``mos_scale`` to [0, 1]. Set
    ``invert`` for DMOS-style columns where lower means better quality.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    lo, hi = map(float, mos_scale)
    if not hi > lo:
        raise ValidationError(f"mos_scale must be increasing, got {mos_scale}")
    root = path.parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty manifest")
        header = [h.strip() for h in header]
        missing = {"ref_path", "dist_path", "mos"} - set(header)
        if missing:
            raise ValidationError(f"{path}: header lacks columns {sorted(missing)}")
        col = {name: i for i, name in enumerate(header)}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                raw = float(row[col["mos"]])
                level = row[col["level"]].strip() if "level" in col else ""
                level = int(level) if level else None
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: cannot parse row ({exc})") from None
            if not (lo <= raw <= hi) or math.isnan(raw):
                raise ValidationError(f"{path}:{lineno}: mos {raw} outside scale ({lo}, {hi})")
            mos = (raw - lo) / (hi - lo)
            if invert:
                mos = 1.0 - mos
            entries.append(
                ManifestEntry(
                    ref_path=root / row[col["ref_path"]].strip(),
                    dist_path=root / row[col["dist_path"]].strip(),
                    mos=mos,
                    kind=row[col["kind"]].strip() if "kind" in col else "",
                    level=level,
                    line=lineno,
                )
            )
    if not entries:
        raise ValidationError(f"{path}: empty manifest")
    return DatasetManifest(entries, (lo, hi), source_tag=path.stem)


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    path = Path(path)
    root = path.parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["ref_path", "dist_path", "mos", "kind", "level"])
        for e in manifest.entries:
            writer.writerow([
                Path(e.ref_path).relative_to(root).as_posix(),
                Path(e.dist_path).relative_to(root).as_posix(),
                repr(float(e.mos)),
                e.kind,
                "" if e.level is None else e.level,
            ])


def _block_quantize(image, block, bits):
    h, w, _ = image.shape
    out = np.empty_like(image)
    for i in range(0, h, block):
        for j in range(0, w, block):
            out[i:i + block, j:j + block] = image[i:i + block, j:j + block].mean(axis=(0, 1))
    q = 2 ** bits - 1
    return np.round(out * q) / q


def apply_distortion(image: np.ndarray, spec: DistortionSpec, seed: int = 0) -> np.ndarray:
    """Deterministic in (image, spec, seed); output is clamped to [0, 1]."""
    check_image(image)
    if spec.level == 0:
        return image.copy()
    p = spec.params
    if spec.kind == "gaussian_blur":
        out = ndimage.gaussian_filter(image, sigma=(p["sigma"], p["sigma"], 0), mode="reflect")
    elif spec.kind == "gaussian_noise":
        rng = np.random.default_rng(seed)
        out = image + rng.normal(0.0, p["std"], size=image.shape)
    elif spec.kind == "contrast_reduction":
        mean = to_gray(image).mean()
        out = mean + (image - mean) * p["factor"]
    elif spec.kind == "brightness_shift":
        out = image + p["offset"]
    elif spec.kind == "block_quantization":
        out = _block_quantize(image, int(p["block"]), int(p["bits"]))
    else:  # pragma: no cover - guarded by DistortionSpec
        raise ConfigError(f"unknown distortion kind {spec.kind!r}")
    return np.clip(out, 0.0, 1.0)


def procedural_reference(size: int, rng: np.random.Generator) -> np.ndarray:
    """A random scene: colour gradient, a few flat shapes, a grating and smooth noise."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    c0, c1 = rng.uniform(0.1, 0.9, size=(2, 3))
    img = c0 + ramp[..., None] * (c1 - c0)

    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0, 1, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.08, 0.3)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < r * rng.uniform(0.4, 1.5))
        img[mask] = color

    freq = rng.uniform(4, 12)
    theta = rng.uniform(0, np.pi)
    grating = np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
    img = img + 0.08 * grating[..., None]

    texture = ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=rng.uniform(0.7, 2.0))
    texture /= texture.std() + 1e-12
    img = img + 0.06 * texture[..., None]
    return np.clip(img, 0.0, 1.0)


def _quantize8(image):
    return np.round(image * 255.0) / 255.0


def synth_dataset(
    n_refs: int,
    kinds: Sequence[str],
    levels: int,
    out_dir: str | Path,
    seed: int = 0,
    size: int = 96,
) -> DatasetManifest:
    """Generate references, distort each by every (kind, level), write PNGs and ``manifest.csv``.

    Pseudo-MOS is ``1 - level / levels``.
    """
    if n_refs < 1 or levels < 1:
        raise ValidationError("n_refs and levels must be >= 1")
    if levels > MAX_LEVEL:
        raise ValidationError(f"levels must be <= {MAX_LEVEL}")
    kinds = [canonical_kind(k) for k in kinds]
    if not kinds:
        raise ValidationError("at least one distortion kind is required")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for r in range(n_refs):
        rng = np.random.default_rng([seed, r])
        ref = _quantize8(procedural_reference(size, rng))
        ref_path = img_dir / f"ref{r:03d}.png"
        save_image(ref_path, ref)
        for k, kind in enumerate(kinds):
            for level in range(1, levels + 1):
                dseed = int(np.random.SeedSequence([seed, r, k, level]).generate_state(1)[0])
                dist = apply_distortion(ref, DistortionSpec(kind, level), seed=dseed)
                dist_path = img_dir / f"ref{r:03d}_{kind}_{level}.png"
                save_image(dist_path, dist)
                entries.append(ManifestEntry(ref_path, dist_path, 1.0 - level / levels, kind, level))
    manifest = DatasetManifest(entries, (0.0, 1.0), source_tag=f"synth-{seed}")
    write_manifest(out_dir / "manifest.csv", manifest)
    return manifest


def crop_offsets(shape: Iterable[int], size: int, seed: int) -> tuple[int, int]:
    h, w = list(shape)[:2]
    if h < size or w < size:
        raise ValidationError(f"image {h}x{w} smaller than crop size {size}")
    rng = np.random.default_rng(seed)
    return int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))


def paired_random_crop(pair: ImagePair, size: int, seed: int) -> ImagePair:
    top, left = crop_offsets(pair.ref.shape, size, seed)
    window = (slice(top, top + size), slice(left, left + size))
    return ImagePair(pair.ref[window].copy(), pair.dist[window].copy(), pair.mos, dict(pair.meta))


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ValidationError(f"image {h}x{w} smaller than crop size {size}")
    top, left = (h - size) // 2, (w - size) // 2
    return image[top:top + size, left:left + size]
