"""End-to-end CLI runs in subprocesses, including exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from kforge.dataset import write_record


def _run(args, check=True):
    proc = subprocess.run([sys.executable, "-m", "ktrain.cli"] + args,
                          capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"ktrain {' '.join(args)} failed "
                             f"({proc.returncode}):\n{proc.stderr}")
    return proc


def _build_dataset(base, nan_video=None, n_frames=5):
    rng = np.random.default_rng(0)
    (base / "fastdvdnet").mkdir(parents=True)
    records = []
    split = {"train": ["vid000"], "val": ["vid001"], "test": ["vid002"]}
    for video, starts in [("vid000", (0, 5)), ("vid001", (0,)),
                          ("vid002", (0, 5))]:
        for start in starts:
            frames = rng.random((n_frames, 8, 8)).astype(np.float32)
            if video == nan_video:
                frames[0, 0, 0] = np.nan
            rel = f"fastdvdnet/{video}-w{start:03d}.kfrg"
            write_record(base / rel, "fastdvdnet",
                         {"frames": frames, "target": frames[-1:].copy()},
                         {"video": video, "window_start": start})
            records.append({"path": rel, "video": video,
                            "arch": "fastdvdnet", "window_start": start})
    manifest = {"config_hash": "feed0123", "split": split,
                "records": records}
    path = base / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    base = tmp_path_factory.mktemp("ktcli")
    manifest = _build_dataset(base / "export")
    out = base / "models"
    _run(["train", "--manifest", str(manifest), "--arch", "fastdvdnet",
          "--epochs", "3", "--out", str(out), "--quiet"])
    return {"base": base, "manifest": manifest, "out": out}


class TestTrain:
    def test_outputs_written(self, workspace):
        assert (workspace["out"] / "fastdvdnet.pt").is_file()
        curve = workspace["out"] / "fastdvdnet-curve.csv"
        with open(curve, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "train_loss", "val_ssim"]
        assert len(rows) == 4

    def test_progress_lines(self, workspace, tmp_path):
        proc = _run(["train", "--manifest", str(workspace["manifest"]),
                     "--arch", "fastdvdnet", "--epochs", "2",
                     "--out", str(tmp_path)])
        assert "epoch   0" in proc.stdout
        assert "epoch   1" in proc.stdout

    def test_deterministic_across_runs(self, workspace, tmp_path):
        curves = []
        for name in ("a", "b"):
            out = tmp_path / name
            _run(["train", "--manifest", str(workspace["manifest"]),
                  "--arch", "fastdvdnet", "--epochs", "3", "--seed", "4",
                  "--out", str(out), "--quiet"])
            curves.append((out / "fastdvdnet-curve.csv").read_bytes())
        assert curves[0] == curves[1]


class TestEvaluate:
    def test_csv_rows(self, workspace, tmp_path):
        out_csv = tmp_path / "metrics.csv"
        proc = _run(["evaluate", "--weights",
                     str(workspace["out"] / "fastdvdnet.pt"),
                     "--manifest", str(workspace["manifest"]),
                     "--split", "test", "--csv", str(out_csv),
                     "--method", "fastdvdnet-spiral"])
        assert "2 records" in proc.stdout
        with open(out_csv, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3
        assert {r[0] for r in rows[1:]} == {"vid002-w000", "vid002-w005"}
        assert {r[1] for r in rows[1:]} == {"fastdvdnet-spiral"}
        assert all(r[5] == "nan" for r in rows[1:])

    def test_val_split(self, workspace):
        proc = _run(["evaluate", "--weights",
                     str(workspace["out"] / "fastdvdnet.pt"),
                     "--manifest", str(workspace["manifest"]),
                     "--split", "val"])
        assert "1 records" in proc.stdout


class TestExitCodes:
    def test_missing_manifest(self, tmp_path):
        proc = _run(["train", "--manifest", str(tmp_path / "no.json"),
                     "--arch", "fastdvdnet", "--out", str(tmp_path)],
                    check=False)
        assert proc.returncode == 2
        assert "not found" in proc.stderr

    def test_bad_manifest_json(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text("{]")
        proc = _run(["train", "--manifest", str(bad), "--arch", "fastdvdnet",
                     "--out", str(tmp_path)], check=False)
        assert proc.returncode == 1

    def test_arch_without_records(self, workspace, tmp_path):
        proc = _run(["train", "--manifest", str(workspace["manifest"]),
                     "--arch", "unet3d", "--out", str(tmp_path)],
                    check=False)
        assert proc.returncode == 1
        assert "empty" in proc.stderr

    def test_nan_data_exits_3(self, tmp_path):
        manifest = _build_dataset(tmp_path / "export", nan_video="vid000")
        proc = _run(["train", "--manifest", str(manifest), "--arch",
                     "fastdvdnet", "--epochs", "2", "--out", str(tmp_path),
                     "--quiet"], check=False)
        assert proc.returncode == 3
        assert "non-finite" in proc.stderr

    def test_contract_violating_window_exits_1(self, tmp_path):
        # four-frame windows cannot feed a five-frame architecture
        manifest = _build_dataset(tmp_path / "export", n_frames=4)
        proc = _run(["train", "--manifest", str(manifest), "--arch",
                     "fastdvdnet", "--epochs", "1", "--out", str(tmp_path),
                     "--quiet"], check=False)
        assert proc.returncode == 1
        assert "5 frames" in proc.stderr
        assert "Traceback" not in proc.stderr

    def test_missing_weights(self, workspace, tmp_path):
        proc = _run(["evaluate", "--weights", str(tmp_path / "no.pt"),
                     "--manifest", str(workspace["manifest"])], check=False)
        assert proc.returncode == 2

    def test_weights_not_a_bundle(self, workspace, tmp_path):
        bad = tmp_path / "weights.pt"
        bad.write_bytes(b"not a checkpoint")
        proc = _run(["evaluate", "--weights", str(bad),
                     "--manifest", str(workspace["manifest"])], check=False)
        assert proc.returncode == 1
