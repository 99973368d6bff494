"""Training loop, model bundles, and test-split evaluation.

Training minimizes a magnitude SSIM loss with Adam. Runs are
deterministic for a fixed seed: the model init, the per-epoch shuffle,
and the batch order all derive from TrainConfig.seed, so two identical
runs produce identical loss curves.
"""

import csv
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .data import ARCHS
from .errors import (FormatError, MissingInputError, NumericalError,
                     ValidationError)
from .losses import ssim, ssim_loss
from .models import ModelConfig, build_model

DEFAULT_EPOCHS = {"varnet": 100, "unet3d": 200, "fastdvdnet": 200}

METRICS_COLUMNS = ("dataset", "method", "mse", "psnr_db", "ssim",
                   "snr_db", "es_mean", "es_std_t")

BUNDLE_FORMAT = "ktrain-bundle"
BUNDLE_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    arch: str
    epochs: int = 0          # 0 picks the per-arch default
    lr: float = 1e-4
    batch_size: int = 2
    seed: int = 0
    coils: int = 3
    unrolls: int = 6
    varnet_widths: tuple = (8, 16)
    unet3d_widths: tuple = (16, 32, 64)
    fastdvdnet_widths: tuple = (16, 32)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValidationError(f"unknown arch {self.arch!r}")
        if self.epochs == 0:
            self.epochs = DEFAULT_EPOCHS[self.arch]
        for name in ("epochs", "batch_size", "coils"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.unrolls < 0:
            raise ValidationError("unrolls must be >= 0")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        self.varnet_widths = tuple(self.varnet_widths)
        self.unet3d_widths = tuple(self.unet3d_widths)
        self.fastdvdnet_widths = tuple(self.fastdvdnet_widths)

    def model_config(self):
        return ModelConfig(
            arch=self.arch, coils=self.coils, unrolls=self.unrolls,
            varnet_widths=tuple(self.varnet_widths),
            unet3d_widths=tuple(self.unet3d_widths),
            fastdvdnet_widths=tuple(self.fastdvdnet_widths))

    def as_dict(self):
        d = asdict(self)
        for key in ("varnet_widths", "unet3d_widths", "fastdvdnet_widths"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def collate(arch, examples):
    """Stack a list of loaded examples into a batch of torch tensors."""
    def stack(name, dtype):
        arrs = [np.ascontiguousarray(ex.arrays[name]) for ex in examples]
        return torch.from_numpy(np.stack(arrs).astype(dtype, copy=False))

    if arch == "varnet":
        return {
            "kspace": stack("kspace", np.complex64),
            "mask": stack("mask", np.uint8).bool(),
            "sens": stack("sens", np.complex64),
            "zf": stack("zf", np.complex64),
            "target": stack("target", np.float32),
        }
    if arch == "unet3d":
        return {
            "coil_images": stack("coil_images", np.complex64),
            "target": stack("target", np.float32),
        }
    if arch == "fastdvdnet":
        return {
            "frames": stack("frames", np.float32),
            "target": stack("target", np.float32),
        }
    raise ValidationError(f"unknown arch {arch!r}")


def predict(model, arch, batch):
    """Run the arch-appropriate forward pass; output matches target shape."""
    try:
        if arch == "varnet":
            return model(batch["kspace"], batch["mask"], batch["sens"],
                         batch["zf"])
        if arch == "unet3d":
            return model(batch["coil_images"])
        if arch == "fastdvdnet":
            return model(batch["frames"])
    except ValueError as exc:
        # a record whose shapes violate the architecture contract
        raise ValidationError(str(exc)) from exc
    raise ValidationError(f"unknown arch {arch!r}")


def mean_ssim(model, arch, examples, batch_size=4):
    """Mean per-example SSIM of model predictions over a split."""
    if not examples:
        raise ValidationError("no examples to evaluate")
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            batch = collate(arch, chunk)
            pred = predict(model, arch, batch)
            for i in range(len(chunk)):
                total += float(ssim(pred[i:i + 1], batch["target"][i:i + 1]))
    return total / len(examples)


@dataclass
class ModelBundle:
    """A trained model with everything needed to rebuild and audit it.

    curve rows are dicts {epoch, train_loss, val_ssim}.
    """

    cfg: TrainConfig
    weights: dict
    manifest_hash: str
    config_hash: str
    curve: list = field(default_factory=list)

    def build(self):
        model = build_model(self.cfg.model_config())
        model.load_state_dict(self.weights)
        model.eval()
        return model

    def save(self, path):
        torch.save({
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "cfg": self.cfg.as_dict(),
            "weights": self.weights,
            "manifest_hash": self.manifest_hash,
            "config_hash": self.config_hash,
            "curve": self.curve,
        }, path)

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise MissingInputError(f"model bundle not found: {path}")
        try:
            payload = torch.load(path, map_location="cpu",
                                 weights_only=True)
        except Exception as exc:
            raise FormatError(f"cannot load bundle {path}: {exc}") from exc
        if not isinstance(payload, dict) \
                or payload.get("format") != BUNDLE_FORMAT:
            raise FormatError(f"{path} is not a model bundle")
        if payload.get("version") != BUNDLE_VERSION:
            raise FormatError(f"unsupported bundle version "
                              f"{payload.get('version')!r}")
        cfg_dict = dict(payload["cfg"])
        for key in ("varnet_widths", "unet3d_widths", "fastdvdnet_widths"):
            cfg_dict[key] = tuple(cfg_dict[key])
        return cls(cfg=TrainConfig.from_dict(cfg_dict),
                   weights=payload["weights"],
                   manifest_hash=payload["manifest_hash"],
                   config_hash=payload["config_hash"],
                   curve=list(payload["curve"]))


def write_curve_csv(path, curve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_ssim"])
        for row in curve:
            writer.writerow([row["epoch"], repr(float(row["train_loss"])),
                             repr(float(row["val_ssim"]))])


def train(train_examples, val_examples, cfg, manifest_hash="",
          config_hash="", log=None):
    """Train one model; returns a ModelBundle with the full loss curve.

    A non-finite loss aborts immediately with the offending epoch/batch
    in the message.
    """
    if not train_examples:
        raise ValidationError("training split is empty")
    if not val_examples:
        raise ValidationError("validation split is empty")
    torch.manual_seed(cfg.seed)
    model = build_model(cfg.model_config())
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    shuffle = np.random.default_rng(cfg.seed)
    curve = []
    for epoch in range(cfg.epochs):
        model.train()
        order = shuffle.permutation(len(train_examples))
        total = 0.0
        for bidx, start in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = [train_examples[i]
                     for i in order[start:start + cfg.batch_size]]
            batch = collate(cfg.arch, chunk)
            pred = predict(model, cfg.arch, batch)
            loss = ssim_loss(pred, batch["target"])
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, "
                    f"batch {bidx} ({cfg.arch}, lr={cfg.lr})")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(chunk)
        train_loss = total / len(train_examples)
        val_ssim = mean_ssim(model, cfg.arch, val_examples,
                             batch_size=cfg.batch_size)
        curve.append({"epoch": epoch, "train_loss": train_loss,
                      "val_ssim": val_ssim})
        if log is not None:
            log(f"epoch {epoch:3d}  train_loss {train_loss:.5f}  "
                f"val_ssim {val_ssim:.5f}")
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    return ModelBundle(cfg=cfg, weights=state, manifest_hash=manifest_hash,
                       config_hash=config_hash, curve=curve)


def evaluate_model(bundle, examples, method=None):
    """Per-record metric rows in the shared CSV schema.

    mse/psnr_db/ssim are computed; the acquisition-side columns
    (snr_db, es_mean, es_std_t) do not apply here and are written as nan.
    """
    if not examples:
        raise ValidationError("no examples to evaluate")
    model = bundle.build()
    label = method or bundle.cfg.arch
    rows = []
    with torch.no_grad():
        for ex in examples:
            batch = collate(bundle.cfg.arch, [ex])
            pred = predict(model, bundle.cfg.arch, batch)
            if pred.shape != batch["target"].shape:
                raise ValidationError(
                    f"{ex.record_id}: prediction shape {tuple(pred.shape)} "
                    f"!= target {tuple(batch['target'].shape)}")
            p = pred.double().numpy()
            t = batch["target"].double().numpy()
            err = float(np.mean((p - t) ** 2))
            peak = float(t.max())
            if err == 0.0:
                psnr_db = math.inf
            elif peak <= 0:
                raise NumericalError(f"{ex.record_id}: non-positive target")
            else:
                psnr_db = 10.0 * math.log10(peak * peak / err)
            rows.append({
                "dataset": ex.record_id,
                "method": label,
                "mse": err,
                "psnr_db": psnr_db,
                "ssim": float(ssim(pred, batch["target"])),
                "snr_db": math.nan,
                "es_mean": math.nan,
                "es_std_t": math.nan,
            })
    return rows


def write_metrics_csv(path, rows, append=False):
    """Write metric rows in the shared schema; append skips the header."""
    need_header = True
    mode = "w"
    if append:
        mode = "a"
        need_header = not (os.path.exists(path) and os.path.getsize(path) > 0)
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if need_header:
            writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([row["dataset"], row["method"]] +
                            [repr(float(row[k])) for k in METRICS_COLUMNS[2:]])
