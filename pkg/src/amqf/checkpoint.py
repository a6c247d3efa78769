"""Tensor archive used for checkpoints and exported encoder weights.

Layout: a ZIP file (stored, no compression, every member timestamped
1980-01-01 00:00:00) holding

``manifest.json``
    UTF-8 JSON object with ``format_version``, free-form metadata, and a
    ``tensors`` list of ``{"name", "file", "shape", "dtype"}`` records in
    archive order.
``tensors/<name>.npy``
    one NumPy ``.npy`` (v1.0) file per tensor; the header carries shape,
    dtype (little-endian) and C ordering.

Members are written in sorted name order with sorted JSON keys, so equal
contents produce byte-identical files.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def write_archive(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = []
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        buf = io.BytesIO()
        np.lib.format.write_array(buf, arr, version=(1, 0), allow_pickle=False)
        fname = f"tensors/{name}.npy"
        records.append({"name": name, "file": fname, "shape": list(arr.shape), "dtype": arr.dtype.str})
        blobs.append((fname, buf.getvalue()))
    manifest = dict(meta)
    manifest["format_version"] = FORMAT_VERSION
    manifest["tensors"] = records
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8"))
        for fname, blob in blobs:
            _member(zf, fname, blob)


def read_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such archive: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
            if manifest.get("format_version") != FORMAT_VERSION:
                raise ValidationError(f"{path}: unsupported format_version {manifest.get('format_version')}")
            tensors = {}
            for rec in manifest.pop("tensors"):
                arr = np.lib.format.read_array(io.BytesIO(zf.read(rec["file"])), allow_pickle=False)
                if list(arr.shape) != rec["shape"]:
                    raise ValidationError(f"{path}: tensor {rec['name']} shape mismatch")
                tensors[rec["name"]] = arr
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ValidationError(f"{path}: not a valid archive ({exc})") from None
    return manifest, tensors


@dataclass
class Checkpoint:
    """Model parameters plus the configuration and history that produced them."""

    tensors: dict[str, np.ndarray]
    config: dict
    history: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        write_archive(path, {"kind": "amqf_checkpoint", "config": self.config, "history": self.history},
                      self.tensors)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        meta, tensors = read_archive(path)
        if meta.get("kind") != "amqf_checkpoint":
            raise ValidationError(f"{path}: not a model checkpoint")
        return cls(tensors, meta["config"], meta.get("history", []))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    ckpt.save(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return Checkpoint.load(path)
