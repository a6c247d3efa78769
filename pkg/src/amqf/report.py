"""Evaluation reports and scatter-plot artifacts."""
from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path

import numpy as np

from .data import DatasetManifest, load_image
from .errors import ValidationError
from .metrics import EvalResult, baseline_metric, evaluate, logistic4, logistic_calibrate
from .training import AMqF, model_from_checkpoint, score_pair

log = logging.getLogger(__name__)

SAMPLE_COLUMNS = ["ref_path", "dist_path", "mos", "q", "q_calibrated", "psnr", "ssim",
                  "factor_l", "factor_c", "factor_s"]
SUMMARY_COLUMNS = ["method", "plcc_raw", "plcc_calibrated", "srocc", "n"]
MAX_SKIP_FRACTION = 0.10

_FACTOR_COLUMNS = {"luminance": "factor_l", "contrast": "factor_c", "structure": "factor_s"}


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    return repr(float(x))


def _safe_evaluate(preds, mos, method) -> EvalResult:
    try:
        return evaluate(preds, mos, method)
    except ValidationError as exc:
        nan = float("nan")
        return EvalResult(nan, nan, len(preds), preds=list(map(float, preds)), mos=list(map(float, mos)),
                          method=method, notes=[f"degenerate: {exc}"])


def run_eval_report(manifest: DatasetManifest, ckpt, out_dir: str | Path, baselines: bool = False) -> EvalResult:
    """Score every pair, write ``per_sample.csv``, ``summary.csv`` and ``result.json`` under ``out_dir``.

    Per-pair PSNR and SSIM always go into the per-sample table; ``baselines``
    adds their correlation rows to the summary. Returns the AMqF result.
    Unreadable samples are skipped and counted; more than 10% skipped is an
    error.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = ckpt if isinstance(ckpt, AMqF) else model_from_checkpoint(ckpt)

    rows = []
    skipped = []
    for i, e in enumerate(manifest.entries):
        try:
            ref = load_image(e.ref_path)
            dist = load_image(e.dist_path)
        except (OSError, ValueError) as exc:
            skipped.append(f"line {e.line}: {exc}")
            continue
        q, per_factor = score_pair(model, ref, dist)
        row = {"ref_path": str(e.ref_path), "dist_path": str(e.dist_path), "mos": e.mos, "q": q,
               "psnr": baseline_metric("psnr", ref, dist), "ssim": baseline_metric("ssim", ref, dist)}
        for name, col in _FACTOR_COLUMNS.items():
            row[col] = per_factor.get(name, "")
        rows.append(row)
    if skipped:
        log.warning("skipped %d unreadable samples", len(skipped))
    if len(skipped) > MAX_SKIP_FRACTION * len(manifest.entries):
        raise OSError(f"{len(skipped)} of {len(manifest.entries)} samples unreadable: {skipped[:3]}")

    mos = np.array([r["mos"] for r in rows])
    preds = np.array([r["q"] for r in rows])
    result = _safe_evaluate(preds, mos, "AMqF")
    calibrated = preds
    if result.logistic_params is not None:
        calibrated = logistic4(preds, *result.logistic_params)
    for r, c in zip(rows, calibrated):
        r["q_calibrated"] = c
    if skipped:
        result.notes.append(f"skipped {len(skipped)} unreadable samples")

    results = [result]
    if baselines:
        for kind in ("psnr", "ssim"):
            results.append(_safe_evaluate([r[kind] for r in rows], mos, kind.upper()))

    with open(out_dir / "per_sample.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for r in rows:
            w.writerow([r["ref_path"], r["dist_path"]] + [_fmt(r[c]) for c in SAMPLE_COLUMNS[2:]])
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for res in results:
            w.writerow([res.method, _fmt(res.plcc), _fmt(res.plcc_calibrated), _fmt(res.srocc), res.n])
    doc = {
        "plcc_variants": {"plcc_raw": "Pearson on raw scores",
                          "plcc_calibrated": "Pearson after 4-parameter logistic fit"},
        "skipped": skipped,
        "results": [res.to_dict() for res in results],
    }
    (out_dir / "result.json").write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=True) + "\n",
                                         encoding="utf-8")
    return result


def load_result(path: str | Path, method: str = "AMqF") -> EvalResult:
    """Read an EvalResult from ``result.json`` (or a bare ``EvalResult.to_dict`` document)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "results" in doc:
        for d in doc["results"]:
            if d["method"] == method:
                return EvalResult.from_dict(d)
        raise ValidationError(f"{path}: no result for method {method!r}")
    return EvalResult.from_dict(doc)


def emit_scatter(result: EvalResult, out_path: str | Path) -> tuple[Path, Path]:
    """Write the prediction/MOS table (``.csv`` beside ``out_path``) and a PNG scatter with the logistic fit."""
    if len(result.preds) < 2:
        raise ValidationError("scatter plot needs at least 2 samples")
    out_path = Path(out_path)
    if out_path.suffix.lower() != ".png":
        out_path = out_path.with_suffix(".png")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    table = out_path.with_suffix(".csv")
    with open(table, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pred", "mos"])
        for p, m in zip(result.preds, result.mos):
            w.writerow([_fmt(p), _fmt(m)])

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    preds = np.asarray(result.preds, dtype=float)
    mos = np.asarray(result.mos, dtype=float)
    params = result.logistic_params
    if params is None and preds.size >= 5:
        params, _, ok = logistic_calibrate(preds, mos)
    fig, ax = plt.subplots(figsize=(4.5, 4.0), dpi=100)
    ax.scatter(preds, mos, s=12, alpha=0.7, edgecolors="none")
    if params is not None:
        xs = np.linspace(preds.min(), preds.max(), 200)
        ax.plot(xs, logistic4(xs, *params), color="tab:red", lw=1.5, label="logistic fit")
        ax.legend(loc="lower right", fontsize=8)
    title = result.method
    if not math.isnan(result.srocc):
        title += f"  SROCC={result.srocc:.3f}  PLCC={result.plcc:.3f}"
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("predicted score")
    ax.set_ylabel("MOS")
    fig.tight_layout()
    fig.savefig(out_path, format="png", metadata={"Software": None})
    plt.close(fig)
    return table, out_path
