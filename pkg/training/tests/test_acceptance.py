"""Acceptance gates for the training harness on a 20-video toy set.

The heavyweight fixtures build the dataset end to end through the
producer's CLI (video synthesis, simulation, export) and then train all
three architectures on the exported records. Every ordering the tests
assert is deterministic: fixed seeds everywhere, single-threaded torch.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch
from PIL import Image

from ktrain.data import load_examples
from ktrain.losses import ssim, ssim_loss
from ktrain.models import build_model
from ktrain.train import (TrainConfig, collate, evaluate_model, mean_ssim,
                          train)

torch.set_num_threads(1)

N_VIDEOS = 20
FRAMES = 24
CFG_TEXT = """\
seed = 0
image_size = 64
frames = 24
n_coils = 3
"""

TRAIN_SETTINGS = {
    "varnet": dict(epochs=8, lr=1e-3, batch_size=2, unrolls=4),
    "unet3d": dict(epochs=15, lr=1e-3, batch_size=2),
    "fastdvdnet": dict(epochs=40, lr=1e-3, batch_size=2),
}

TIME_BUDGET_S = 1800.0


def _write_videos(root, rng):
    size = 96
    yy, xx = np.mgrid[0:size, 0:size] / size
    for v in range(N_VIDEOS):
        d = os.path.join(root, "videos", f"vid{v:03d}")
        os.makedirs(d)
        by, bx = 0.35 + 0.3 * rng.random(2)
        base = 0.3 + 0.3 * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / 0.08)
        radius = 0.10 + 0.08 * rng.random()
        width = 0.008 + 0.006 * rng.random()
        phase = 2 * np.pi * rng.random()
        tint = np.array([1.0, 0.7 + 0.3 * rng.random(), 0.6])
        for t in range(FRAMES):
            a = 2 * np.pi * t / FRAMES + phase
            cy = 0.5 + radius * np.sin(a)
            cx = 0.5 + radius * np.cos(a)
            blob = 0.35 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / width)
            img = np.clip(base + blob, 0.0, 1.0)[..., None] * tint
            Image.fromarray((img * 255).astype(np.uint8), "RGB").save(
                os.path.join(d, f"frame{t:04d}.png"))


def _producer(args, cwd):
    proc = subprocess.run([sys.executable, "-m", "kforge.cli"] + args,
                          cwd=cwd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise AssertionError(f"kforge {' '.join(args)} failed "
                             f"({proc.returncode}):\n{proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def toyset(tmp_path_factory):
    base = str(tmp_path_factory.mktemp("toyset"))
    t0 = time.time()
    _write_videos(base, np.random.default_rng(42))
    cfg = os.path.join(base, "pipeline.cfg")
    with open(cfg, "w") as fh:
        fh.write(CFG_TEXT)
    common = ["--config", cfg, "--video-dir", os.path.join(base, "videos"),
              "--out", os.path.join(base, "out")]
    _producer(["simulate"] + common, base)
    _producer(["export"] + common, base)
    return {"manifest": os.path.join(base, "out", "export", "manifest.json"),
            "seconds": time.time() - t0}


def _zero_filled_prediction(arch, example):
    """The do-nothing baseline each network must beat."""
    if arch == "varnet":
        return np.abs(example.arrays["zf"])
    if arch == "unet3d":
        return np.sqrt((np.abs(example.arrays["coil_images"]) ** 2).sum(1))
    return example.arrays["frames"][-1:]


def _mean_zero_filled_ssim(arch, examples):
    vals = []
    for ex in examples:
        pred = torch.from_numpy(
            np.ascontiguousarray(_zero_filled_prediction(arch, ex)))
        vals.append(float(ssim(pred, torch.from_numpy(ex.arrays["target"]))))
    return float(np.mean(vals))


def _psnr(pred, target):
    err = float(np.mean((np.asarray(pred, dtype=np.float64)
                         - np.asarray(target, dtype=np.float64)) ** 2))
    peak = float(target.max())
    return 10.0 * np.log10(peak * peak / err)


@pytest.fixture(scope="module")
def trained(toyset):
    out = {"seconds": 0.0, "archs": {}}
    for arch, settings in TRAIN_SETTINGS.items():
        t0 = time.time()
        train_ex = load_examples(toyset["manifest"], arch,
                                 splits=("train",))
        val_ex = load_examples(toyset["manifest"], arch, splits=("val",))
        test_ex = load_examples(toyset["manifest"], arch, splits=("test",))
        cfg = TrainConfig(arch=arch, seed=0, coils=3, **settings)
        torch.manual_seed(cfg.seed)
        untrained_val = mean_ssim(build_model(cfg.model_config()), arch,
                                  val_ex, batch_size=cfg.batch_size)
        bundle = train(train_ex, val_ex, cfg)
        out["archs"][arch] = {
            "bundle": bundle,
            "val": val_ex,
            "test": test_ex,
            "untrained_val_ssim": untrained_val,
            "zf_val_ssim": _mean_zero_filled_ssim(arch, val_ex),
            "test_rows": evaluate_model(bundle, test_ex),
        }
        out["seconds"] += time.time() - t0
    return out


@pytest.mark.parametrize("arch", sorted(TRAIN_SETTINGS))
def test_trained_validation_ssim_beats_untrained_and_zero_filled(trained,
                                                                 arch):
    entry = trained["archs"][arch]
    final_val = entry["bundle"].curve[-1]["val_ssim"]
    assert final_val > entry["untrained_val_ssim"]
    assert final_val > entry["zf_val_ssim"]


def test_ssim_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    target = torch.tensor(rng.random((1, 8, 8)), dtype=torch.float64)
    pred = torch.tensor(rng.random((1, 8, 8)), dtype=torch.float64,
                        requires_grad=True)
    ssim_loss(pred, target, data_range=1.0).backward()
    grad = pred.grad.detach().clone()
    h = 1e-6
    fd = torch.zeros_like(grad)
    flat = pred.detach().reshape(-1)
    for i in range(flat.numel()):
        for sign in (1.0, -1.0):
            bumped = flat.clone()
            bumped[i] += sign * h
            fd.reshape(-1)[i] += sign * float(
                ssim_loss(bumped.reshape(pred.shape), target,
                          data_range=1.0)) / (2 * h)
    rel = float((fd - grad).abs().max()) / float(grad.abs().max())
    assert rel <= 1e-3


def test_varnet_dc_blocks_never_increase_residual(trained):
    entry = trained["archs"]["varnet"]
    batch = collate("varnet", entry["val"])
    model = entry["bundle"].build()
    with torch.no_grad():
        _, residuals = model(batch["kspace"], batch["mask"], batch["sens"],
                             batch["zf"], track_residuals=True)
    assert len(residuals) == TRAIN_SETTINGS["varnet"]["unrolls"]
    for before, after in residuals:
        assert after <= before * (1.0 + 1e-6)


@pytest.mark.parametrize("arch", sorted(TRAIN_SETTINGS))
def test_trained_beats_zero_filled_on_ninety_percent_of_test_records(
        trained, arch):
    entry = trained["archs"][arch]
    wins = 0
    for example, row in zip(entry["test"], entry["test_rows"]):
        zf_psnr = _psnr(_zero_filled_prediction(arch, example),
                        example.arrays["target"])
        wins += row["psnr_db"] > zf_psnr
    assert wins / len(entry["test"]) >= 0.9


def test_trained_fastdvdnet_psnr_beats_zero_filled(trained):
    entry = trained["archs"]["fastdvdnet"]
    net = float(np.mean([row["psnr_db"] for row in entry["test_rows"]]))
    zf = float(np.mean([_psnr(_zero_filled_prediction("fastdvdnet", ex),
                              ex.arrays["target"])
                        for ex in entry["test"]]))
    assert net > zf


def test_runtime_within_budget(toyset, trained):
    assert toyset["seconds"] + trained["seconds"] < TIME_BUDGET_S
