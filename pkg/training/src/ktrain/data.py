"""Manifest-driven loading of exported training records.

The export manifest is JSON: a config hash, the producing config, split
membership (train/val/test lists of video ids), and a record index with
per-record relative paths. Arrays keep the producer's axis order,
(T, C, H, W) for k-space and coil images.
"""

import hashlib
import json
import os
from dataclasses import dataclass

from .errors import FormatError, MissingInputError
from .records import read_record

ARCHS = ("varnet", "unet3d", "fastdvdnet")
SPLITS = ("train", "val", "test")

REQUIRED_ARRAYS = {
    "varnet": {"kspace", "mask", "sens", "zf", "target"},
    "unet3d": {"coil_images", "target"},
    "fastdvdnet": {"frames", "target"},
}


@dataclass
class Example:
    record_id: str      # "<video>-w<start>", unique per record
    video: str
    split: str
    arrays: dict


def load_manifest(path):
    """Read and validate an export manifest; returns (manifest, base_dir)."""
    if not os.path.isfile(path):
        raise MissingInputError(f"manifest not found: {path}")
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}")
    for key in ("split", "records", "config_hash"):
        if key not in manifest:
            raise FormatError(f"{path}: missing manifest key {key!r}")
    split = manifest["split"]
    if not all(isinstance(split.get(s), list) for s in SPLITS):
        raise FormatError(f"{path}: split must list train/val/test videos")
    return manifest, os.path.dirname(os.path.abspath(path))


def manifest_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _video_split(manifest):
    assignment = {}
    for name in SPLITS:
        for vid in manifest["split"][name]:
            assignment[vid] = name
    return assignment


def load_examples(manifest_path, arch, splits=SPLITS):
    """Load every record of one architecture in the requested splits.

    Records are checksum-verified on read; a manifest entry whose file is
    missing is an error, not a skip.
    """
    if arch not in ARCHS:
        raise FormatError(f"unknown arch {arch!r}")
    manifest, base = load_manifest(manifest_path)
    assignment = _video_split(manifest)
    wanted = set(splits)
    examples = []
    for entry in manifest["records"]:
        if entry.get("arch") != arch:
            continue
        video = entry.get("video")
        split = assignment.get(video)
        if split is None:
            raise FormatError(f"record video {video!r} missing from split")
        if split not in wanted:
            continue
        path = os.path.join(base, entry["path"])
        if not os.path.isfile(path):
            raise MissingInputError(f"manifest lists missing file: {path}")
        record = read_record(path)
        if record.kind != arch:
            raise FormatError(f"{path}: kind {record.kind!r}, expected {arch!r}")
        missing = REQUIRED_ARRAYS[arch] - set(record.arrays)
        if missing:
            raise FormatError(f"{path}: missing arrays {sorted(missing)}")
        record_id = f"{video}-w{int(entry['window_start']):03d}"
        examples.append(Example(record_id, video, split, record.arrays))
    return examples
