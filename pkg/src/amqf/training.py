"""The assembled AMqF model, its training objective and checkpoint-based scoring."""
from __future__ import annotations

import logging
import math

import numpy as np
import torch
from torch import nn

from . import dictionary as dct
from .adapter import FACTORS, QualityAdapter
from .checkpoint import Checkpoint
from .config import TrainConfig, from_dict, to_dict
from .data import DatasetManifest, ImagePair, center_crop, check_image, load_image, paired_random_crop
from .encoder import build_encoder
from .errors import NumericError, ValidationError
from .reconstructor import FactorDecoder, factor_targets, reconstruction_loss

log = logging.getLogger(__name__)


class Calibration(nn.Module):
    """Learned affine map a*Q + b from fused cosine scores to the MOS range."""

    def __init__(self):
        super().__init__()
        self.a = nn.Parameter(torch.ones(()))
        self.b = nn.Parameter(torch.zeros(()))

    def forward(self, q):
        return self.a * q + self.b


class AMqF(nn.Module):
    def __init__(self, config: TrainConfig, state: dict | None = None):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.encoder = build_encoder(config.encoder, _prefixed(state, "encoder."))
            c = self.encoder.out_channels
            if config.enable_amqf:
                self.adapter = QualityAdapter(c, config.adapter)
                up = config.encoder.downsample_factor
                if config.adapter.shared_decoder:
                    self.decoder = nn.ModuleDict({"shared": FactorDecoder(config.adapter.dim, up)})
                else:
                    self.decoder = nn.ModuleDict({f: FactorDecoder(config.adapter.dim, up) for f in FACTORS})
                self.factor_names = tuple(self.adapter.factor_names)
            else:
                self.adapter = None
                self.decoder = None
                self.factor_names = FACTORS
            self.calibration = Calibration()
        words = dct.init_dictionary(config.dictionary.n_words, config.feature_dim, config.dictionary_seed).words
        self.dictionary = nn.Parameter(words, requires_grad=config.dictionary.trainable)
        weights = config.fusion_weights or {f: 1.0 for f in self.factor_names}
        if set(weights) != set(self.factor_names):
            raise ValidationError(f"fusion weights {sorted(weights)} do not match factors {list(self.factor_names)}")
        self.fusion_weights = weights

    def factor_features(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        """B x H x W x 3 -> factor -> B x h x w x D (channel-last)."""
        feats = self.encoder(images.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        if self.adapter is None:
            return {f: feats for f in self.factor_names}
        return self.adapter(feats)

    def coordinates(self, factor: torch.Tensor) -> torch.Tensor:
        if self.config.enable_rfds:
            return dct.pool_responses(dct.respond(dct.normalize_features(factor), self.dictionary))
        return factor.mean(dim=(1, 2))

    def forward(self, ref: torch.Tensor, dist: torch.Tensor, aux: bool = True) -> dict:
        """Score a batch of (ref, dist) pairs; with ``aux`` also return the auxiliary losses."""
        dtype = self.dictionary.dtype
        ref = torch.as_tensor(ref).to(dtype)
        dist = torch.as_tensor(dist).to(dtype)
        if ref.shape != dist.shape:
            raise ValidationError(f"ref {tuple(ref.shape)} and dist {tuple(dist.shape)} differ")
        b = ref.shape[0]
        both = torch.cat([ref, dist])
        factors = self.factor_features(both)
        scores = {}
        for name, feat in factors.items():
            p = self.coordinates(feat)
            scores[name] = dct.cosine_score(p[:b], p[b:])
        q = dct.fuse_factor_scores(scores, self.fusion_weights)
        out = {"q": q, "per_factor": scores, "q_cal": self.calibration(q)}
        if not aux:
            return out
        if self.decoder is not None:
            targets = factor_targets(both)
            recon = []
            for name in FACTORS:
                dec = self.decoder["shared" if "shared" in self.decoder else name]
                pred = dec(factors[name].permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
                recon.append(reconstruction_loss(pred, targets[name])[0])
            out["recon"] = torch.stack(recon)
        else:
            out["recon"] = torch.zeros(0, dtype=dtype)
        unique = {id(t): t for t in factors.values()}.values()
        out["decov"] = torch.stack([dct.decorrelation_loss(t.reshape(-1, t.shape[-1])) for t in unique])
        return out


def _prefixed(state, prefix):
    if state is None:
        return None
    return {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}


def assemble_loss(q_pred, mos, recon_losses, decov_losses, config: TrainConfig):
    """total = mean((q_pred - mos)^2) + lambda_re * mean(recon) + lambda_decov * mean(decov).

    ``q_pred`` is the calibrated score a*Q + b. With AMQF disabled the
    reconstruction weight is forced to zero.
    """
    q_pred = torch.as_tensor(q_pred)
    mos = torch.as_tensor(mos, dtype=q_pred.dtype)
    recon = torch.as_tensor(recon_losses, dtype=q_pred.dtype).reshape(-1)
    decov = torch.as_tensor(decov_losses, dtype=q_pred.dtype).reshape(-1)
    if q_pred.shape != mos.shape:
        raise ValidationError(f"q_pred {tuple(q_pred.shape)} and mos {tuple(mos.shape)} misaligned")
    lam_re = config.lambda_re if config.enable_amqf else 0.0
    terms = {
        "mos": ((q_pred - mos) ** 2).mean(),
        "re": recon.mean() if recon.numel() else q_pred.new_zeros(()),
        "decov": decov.mean() if decov.numel() else q_pred.new_zeros(()),
    }
    for name, t in terms.items():
        if not torch.isfinite(t):
            raise NumericError(f"loss term {name!r} is not finite")
    total = terms["mos"] + lam_re * terms["re"] + config.lambda_decov * terms["decov"]
    components = {k: float(v.detach()) for k, v in terms.items()}
    components["total"] = float(total.detach())
    return total, components


def _load_pairs(manifest: DatasetManifest) -> list[ImagePair]:
    cache: dict = {}
    pairs = []
    for i, e in enumerate(manifest.entries):
        imgs = []
        for p in (e.ref_path, e.dist_path):
            if p not in cache:
                try:
                    cache[p] = load_image(p)
                except (OSError, ValueError) as exc:
                    raise OSError(f"sample {i} (manifest line {e.line}): cannot read {p}: {exc}") from None
            imgs.append(cache[p])
        pairs.append(ImagePair(imgs[0], imgs[1], e.mos, {"index": i}))
    return pairs


def _to_batch(images, dtype):
    return torch.from_numpy(np.stack(images)).to(dtype)


def build_model(config: TrainConfig) -> AMqF:
    return AMqF(config)


def model_from_checkpoint(ckpt: Checkpoint) -> AMqF:
    config = from_dict(TrainConfig, ckpt.config)
    state = {k: torch.from_numpy(np.array(v)) for k, v in ckpt.tensors.items()}
    model = AMqF(config, state=state)
    model.load_state_dict(state)
    model.eval()
    return model


def model_to_checkpoint(model: AMqF, history: list[dict] | None = None) -> Checkpoint:
    tensors = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
    return Checkpoint(tensors, to_dict(model.config), list(history or []))


def init_calibration(model: AMqF, pairs: list[ImagePair]) -> None:
    """Least-squares fit of a, b on the untrained model's centre-crop scores.

    Untrained scores cluster just below 1, far from the MOS range; starting
    from a=1, b=0 the optimiser would spend its first steps (and the initial
    ranking) stretching them.
    """
    size = model.config.crop_size
    dtype = model.dictionary.dtype
    qs = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(pairs), 32):
            chunk = pairs[start:start + 32]
            ref = _to_batch([center_crop(p.ref, size) for p in chunk], dtype)
            dist = _to_batch([center_crop(p.dist, size) for p in chunk], dtype)
            qs.append(model(ref, dist, aux=False)["q"].double().numpy())
    q = np.concatenate(qs)
    mos = np.array([p.mos for p in pairs])
    var = q.var()
    a = ((q - q.mean()) * (mos - mos.mean())).mean() / var if var > 0 else 0.0
    if not a > 0:
        a = 1.0
    b = mos.mean() - a * q.mean()
    with torch.no_grad():
        model.calibration.a.fill_(a)
        model.calibration.b.fill_(b)


def train_model(manifest: DatasetManifest, config: TrainConfig, progress=None) -> Checkpoint:
    """Mini-batch Adam over every trainable parameter.

    Crops are re-drawn each epoch from seeds derived from ``(seed, epoch)``.
    ``progress`` is an optional callback receiving each epoch's record.
    """
    if len(manifest) == 0:
        raise ValidationError("empty manifest")
    pairs = _load_pairs(manifest)
    model = AMqF(config)
    init_calibration(model, pairs)
    model.train()
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    dtype = model.dictionary.dtype
    history = []
    step = 0
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(pairs))
        sums = {"total": 0.0, "mos": 0.0, "re": 0.0, "decov": 0.0}
        seen = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            crop_seeds = rng.integers(0, 2 ** 31 - 1, size=len(idx))
            crops = [paired_random_crop(pairs[i], config.crop_size, int(s)) for i, s in zip(idx, crop_seeds)]
            ref = _to_batch([c.ref for c in crops], dtype)
            dist = _to_batch([c.dist for c in crops], dtype)
            mos = torch.tensor([c.mos for c in crops], dtype=dtype)
            out = model(ref, dist)
            try:
                total, comps = assemble_loss(out["q_cal"], mos, out["recon"], out["decov"], config)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from None
            opt.zero_grad()
            total.backward()
            opt.step()
            step += 1
            for k in sums:
                sums[k] += comps[k] * len(idx)
            seen += len(idx)
            if config.max_steps is not None and step >= config.max_steps:
                break
        record = {"epoch": epoch, "steps": step, **{k: v / seen for k, v in sums.items()}}
        if not math.isfinite(record["total"]):
            raise NumericError(f"epoch {epoch}: total loss diverged")
        history.append(record)
        log.info("epoch %d step %d total %.5f", epoch, step, record["total"])
        if progress is not None:
            progress(record)
        if config.max_steps is not None and step >= config.max_steps:
            break
    model.eval()
    return model_to_checkpoint(model, history)


def _as_model(ckpt) -> AMqF:
    return ckpt if isinstance(ckpt, AMqF) else model_from_checkpoint(ckpt)


def score_pair(ckpt, ref: np.ndarray, dist: np.ndarray) -> tuple[float, dict[str, float]]:
    """Fused quality score and per-factor cosines for one pair, on a centre crop.

    ``ckpt`` may be a :class:`Checkpoint` or an already built :class:`AMqF`.
    """
    model = _as_model(ckpt)
    check_image(ref, "ref")
    check_image(dist, "dist")
    if ref.shape != dist.shape:
        raise ValidationError(f"ref {ref.shape} and dist {dist.shape} differ in shape")
    size = model.config.crop_size
    ref_c = center_crop(ref, size)
    dist_c = center_crop(dist, size)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(ref_c[None].copy()), torch.from_numpy(dist_c[None].copy()), aux=False)
    model.train(was_training)
    return float(out["q"][0]), {k: float(v[0]) for k, v in out["per_factor"].items()}
