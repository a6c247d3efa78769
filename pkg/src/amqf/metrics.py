"""Correlation metrics, logistic calibration and the PSNR / SSIM baselines."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from skimage.metrics import structural_similarity

from .data import to_gray
from .errors import ValidationError

PSNR_CAP = 100.0


@dataclass
class EvalResult:
    plcc: float
    srocc: float
    n: int
    plcc_calibrated: float = float("nan")
    logistic_params: tuple[float, float, float, float] | None = None
    preds: list[float] = field(default_factory=list)
    mos: list[float] = field(default_factory=list)
    method: str = "AMqF"
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "plcc": self.plcc,
            "plcc_calibrated": self.plcc_calibrated,
            "srocc": self.srocc,
            "n": self.n,
            "logistic_params": None if self.logistic_params is None else list(self.logistic_params),
            "preds": list(self.preds),
            "mos": list(self.mos),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        lp = d.get("logistic_params")
        return cls(
            plcc=d["plcc"], srocc=d["srocc"], n=d["n"],
            plcc_calibrated=d.get("plcc_calibrated", float("nan")),
            logistic_params=None if lp is None else tuple(lp),
            preds=list(d.get("preds", [])), mos=list(d.get("mos", [])),
            method=d.get("method", "AMqF"), notes=list(d.get("notes", [])),
        )


def _pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise ValidationError("need at least two samples")
    return x, y


def _pearson(x, y):
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx == 0 or syy == 0:
        raise ValidationError("constant input: correlation undefined")
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def plcc(x, y) -> float:
    return _pearson(*_pair(x, y))


def srocc(x, y) -> float:
    """Spearman correlation with average ranks for ties."""
    x, y = _pair(x, y)
    return _pearson(stats.rankdata(x), stats.rankdata(y))


def logistic4(x, b1, b2, b3, b4):
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(b2 * (x - b3)))) + b4


def logistic_calibrate(pred, mos, maxfev: int = 10000):
    """Fit the 4-parameter logistic mapping ``pred`` onto ``mos``.

    Returns ``(params, calibrated, ok)``. The fit is rejected (identity
    mapping, ``ok=False``, warning) when it fails to converge or when
    saturation collapses distinct predictions, since a calibration must
    preserve ranks.
    """
    pred, mos = _pair(pred, mos)
    if pred.size < 5:
        raise ValidationError("logistic calibration needs at least 5 samples")
    span = np.ptp(pred)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.corrcoef(pred, mos)[0, 1]
    sign = -1.0 if r < 0 else 1.0
    # slope chosen so the observed range spans roughly +-2 around the midpoint
    p0 = [sign * 1.3 * (np.ptp(mos) + 1e-6), 4.0 / (span + 1e-12), float(np.median(pred)), float(np.mean(mos))]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            params, _ = optimize.curve_fit(logistic4, pred, mos, p0=p0, maxfev=maxfev)
        calibrated = logistic4(pred, *params)
        ok = bool(np.all(np.isfinite(calibrated)))
        if ok:
            # reject fits that merge or reorder distinct predictions
            order = np.argsort(pred, kind="stable")
            steps = np.diff(calibrated[order]) * np.sign(params[0] * params[1])
            distinct = np.diff(pred[order]) > 0
            ok = bool(np.all(steps[distinct] > 0))
    except (RuntimeError, ValueError, optimize.OptimizeWarning):
        ok = False
    if not ok:
        warnings.warn("logistic fit rejected; using identity mapping", RuntimeWarning, stacklevel=2)
        return None, pred.copy(), False
    return tuple(float(p) for p in params), calibrated, True


def psnr(ref: np.ndarray, dist: np.ndarray) -> float:
    ref, dist = _images(ref, dist)
    mse = float(np.mean((ref - dist) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(ref: np.ndarray, dist: np.ndarray) -> float:
    """Single-scale SSIM on Rec.601 gray: Gaussian window 11x11, sigma 1.5, unit data range."""
    ref, dist = _images(ref, dist)
    if ref.ndim == 3:
        ref, dist = to_gray(ref), to_gray(dist)
    return float(structural_similarity(
        ref, dist, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
        K1=0.01, K2=0.03,
    ))


def _images(ref, dist):
    ref = np.asarray(ref, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    if ref.shape != dist.shape:
        raise ValidationError(f"shape mismatch {ref.shape} vs {dist.shape}")
    return ref, dist


def baseline_metric(kind: str, ref: np.ndarray, dist: np.ndarray) -> float:
    if kind == "psnr":
        return psnr(ref, dist)
    if kind == "ssim":
        return ssim(ref, dist)
    raise ValidationError(f"unknown baseline {kind!r}")


def evaluate(preds, mos, method: str = "AMqF") -> EvalResult:
    """SROCC, raw PLCC and logistic-calibrated PLCC for one method."""
    preds = np.asarray(preds, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    res = EvalResult(plcc(preds, mos), srocc(preds, mos), int(preds.size),
                     preds=preds.tolist(), mos=mos.tolist(), method=method)
    if preds.size >= 5:
        params, calibrated, ok = logistic_calibrate(preds, mos)
        res.logistic_params = params
        res.plcc_calibrated = plcc(calibrated, mos)
        if not ok:
            res.notes.append("logistic fit rejected; calibrated PLCC uses identity mapping")
    else:
        res.notes.append("fewer than 5 samples; no logistic calibration")
    return res
