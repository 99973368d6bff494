"""Binary dataset records (.kfrg) and train/val/test splits.

A .kfrg file stores named arrays plus a JSON metadata block in a small
little-endian container. Every byte is covered by a CRC32: one over the
file header plus metadata, one per array over its header plus payload.
Records are built per network flavor: masked Cartesian k-space windows,
gridded multi-coil complex series, or magnitude frame windows.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumError, FormatError, ValidationError

KFRG_MAGIC = b"KFRG"
KFRG_VERSION = 1

RECORD_KINDS = {
    "fullksp": 0,
    "varnet": 1,
    "unet3d": 2,
    "fastdvdnet": 3,
    "imageseries": 4,
}
_KIND_NAMES = {v: k for k, v in RECORD_KINDS.items()}

# on-disk dtype codes
_DTYPES = {
    0: np.dtype("<c8"),
    1: np.dtype("<f4"),
    2: np.dtype("<u1"),
    3: np.dtype("<i4"),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


@dataclass
class RecordData:
    """In-memory form of one .kfrg file."""
    kind: str
    arrays: dict
    meta: dict


def _storage_dtype(arr):
    if np.iscomplexobj(arr):
        return np.dtype("<c8")
    if arr.dtype == np.bool_ or arr.dtype.kind == "u":
        return np.dtype("<u1")
    if arr.dtype.kind == "i":
        return np.dtype("<i4")
    return np.dtype("<f4")


def _pad_dims(shape):
    if len(shape) > 4:
        raise ValidationError(f"arrays are limited to 4 dims, got {shape}")
    return (1,) * (4 - len(shape)) + tuple(shape)


def write_record(path, kind, arrays, meta=None):
    """Serialize named arrays and metadata to one .kfrg file.

    Array order and names are preserved; names are recorded in the
    metadata block so readers can address arrays without guessing.
    """
    if kind not in RECORD_KINDS:
        raise ValidationError(f"unknown record kind {kind!r}")
    if not arrays:
        raise ValidationError("record needs at least one array")
    if len(arrays) > 255:
        raise ValidationError("too many arrays for one record")
    meta = dict(meta or {})
    meta["arrays"] = [
        {"name": name, "shape": list(np.asarray(a).shape)}
        for name, a in arrays.items()
    ]
    meta_bytes = json.dumps(meta, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")

    header = (KFRG_MAGIC
              + struct.pack("<IBBH", KFRG_VERSION, RECORD_KINDS[kind],
                            len(arrays), 0)
              + struct.pack("<I", len(meta_bytes)))
    # the checksum covers header + metadata so no byte escapes detection
    parts = [header, meta_bytes,
             struct.pack("<I", zlib.crc32(header + meta_bytes))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        stored = np.ascontiguousarray(arr, dtype=_storage_dtype(arr))
        payload = stored.tobytes()
        arr_header = (struct.pack("<B", _DTYPE_CODES[stored.dtype])
                      + struct.pack("<4I", *_pad_dims(arr.shape)))
        parts.append(arr_header)
        parts.append(payload)
        parts.append(struct.pack("<I", zlib.crc32(arr_header + payload)))
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Cursor:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n):
        if n < 0 or self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_record(path):
    """Parse a .kfrg file, verifying structure and checksums.

    Payload sizes are validated against the actual file length before any
    array is materialized, so a corrupt header cannot trigger a huge
    allocation.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data, str(path))
    if cur.take(4) != KFRG_MAGIC:
        raise FormatError(f"{path}: not a .kfrg file (bad magic)")
    version, kind_code, n_arrays, _reserved = cur.unpack("<IBBH")
    if version != KFRG_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind_code not in _KIND_NAMES:
        raise FormatError(f"{path}: unknown record kind code {kind_code}")
    (meta_len,) = cur.unpack("<I")
    meta_bytes = cur.take(meta_len)
    (meta_crc,) = cur.unpack("<I")
    if zlib.crc32(data[:16] + meta_bytes) != meta_crc:
        raise ChecksumError(f"{path}: header/metadata checksum mismatch")
    try:
        meta = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: metadata is not valid JSON") from exc
    names = [entry["name"] for entry in meta.get("arrays", [])]
    if len(names) != n_arrays:
        raise FormatError(f"{path}: metadata lists {len(names)} arrays, "
                          f"header declares {n_arrays}")

    arrays = {}
    for index in range(n_arrays):
        header_start = cur.pos
        (dtype_code,) = cur.unpack("<B")
        if dtype_code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {dtype_code}")
        dims = cur.unpack("<4I")
        dtype = _DTYPES[dtype_code]
        n_items = 1
        for d in dims:
            n_items *= int(d)  # python ints: no overflow on hostile headers
        payload_len = n_items * dtype.itemsize
        if cur.pos + payload_len + 4 > len(data):
            raise FormatError(f"{path}: declared array size exceeds file")
        payload = cur.take(payload_len)
        (crc,) = cur.unpack("<I")
        if zlib.crc32(data[header_start:header_start + 17] + payload) != crc:
            raise ChecksumError(
                f"{path}: array {index} checksum mismatch")
        declared = meta["arrays"][index].get("shape", list(dims))
        if (not isinstance(declared, list)
                or any(not isinstance(d, int) or d < 0 for d in declared)
                or len(declared) > 4
                or _pad_dims(tuple(declared)) != dims):
            raise FormatError(f"{path}: array {index} shape mismatch "
                              f"between header and metadata")
        arrays[names[index]] = np.frombuffer(
            payload, dtype=dtype).reshape(declared).copy()
    if cur.pos != len(data):
        raise FormatError(f"{path}: trailing bytes after last array")
    return RecordData(_KIND_NAMES[kind_code], arrays, meta)


def window_starts(total_frames, window):
    """Start indices tiling a video with stride equal to window length."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    if total_frames < window:
        raise ValidationError(
            f"video has {total_frames} frames, needs at least {window}")
    return list(range(0, total_frames - window + 1, window))


def build_varnet_records(masked_ksp, mask, maps, zf_init, target, window=24):
    """Windowed masked-Cartesian records: k-space, mask, maps, init, target."""
    masked_ksp = np.asarray(masked_ksp)
    records = []
    for start in window_starts(masked_ksp.shape[0], window):
        stop = start + window
        arrays = {
            "kspace": masked_ksp[start:stop].astype(np.complex64),
            "mask": np.asarray(mask[start:stop], dtype=np.uint8),
            "sens": np.asarray(maps, dtype=np.complex64),
            "zf": np.asarray(zf_init[start:stop], dtype=np.complex64),
            "target": np.asarray(target[start:stop], dtype=np.float32),
        }
        records.append((arrays, {"window_start": start}))
    return records


def build_unet3d_records(coil_images, target, window=24):
    """Windowed gridded multi-coil complex image records."""
    coil_images = np.asarray(coil_images)
    records = []
    for start in window_starts(coil_images.shape[0], window):
        stop = start + window
        arrays = {
            "coil_images": coil_images[start:stop].astype(np.complex64),
            "target": np.asarray(target[start:stop], dtype=np.float32),
        }
        records.append((arrays, {"window_start": start}))
    return records


def build_fastdvdnet_records(frames, target, window=5):
    """Windowed magnitude records; the target is the window's last frame."""
    frames = np.asarray(frames)
    records = []
    for start in window_starts(frames.shape[0], window):
        stop = start + window
        arrays = {
            "frames": frames[start:stop].astype(np.float32),
            "target": np.asarray(target[stop - 1:stop], dtype=np.float32),
        }
        records.append((arrays, {"window_start": start,
                                 "target_frame": stop - 1}))
    return records


@dataclass
class SplitManifest:
    train: list
    val: list
    test: list

    def as_dict(self):
        return {"train": list(self.train), "val": list(self.val),
                "test": list(self.test)}


def make_split(ids, fractions=(0.75, 0.10, 0.15), seed=0):
    """Deterministic shuffled train/val/test partition of video ids.

    Train and val sizes are floor(n * fraction); test takes the remainder,
    so 692 ids at the default fractions split 519/69/104.
    """
    ids = list(ids)
    if not ids:
        raise ValidationError("cannot split an empty id list")
    if len(set(ids)) != len(ids):
        raise ValidationError("ids must be unique")
    if len(fractions) != 3:
        raise ValidationError("fractions must be (train, val, test)")
    if any(f < 0 for f in fractions):
        raise ValidationError("fractions must be >= 0")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError("fractions must sum to 1")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n = len(ids)
    n_train = int(np.floor(n * fractions[0] + 1e-9))
    n_val = int(np.floor(n * fractions[1] + 1e-9))
    return SplitManifest(shuffled[:n_train],
                         shuffled[n_train:n_train + n_val],
                         shuffled[n_train + n_val:])
