"""Reader for .kfrg dataset records.

Independent implementation of the container produced by the export
pipeline: little-endian, magic "KFRG", a version/kind/count header, a JSON
metadata block, then per-array dtype + dims + payload. Every byte is
covered by a CRC32 (header+metadata; each array's header+payload), and
this reader refuses files whose checks fail, so silent corruption cannot
reach training.
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumError, FormatError

MAGIC = b"KFRG"
VERSION = 1

KIND_NAMES = {
    0: "fullksp",
    1: "varnet",
    2: "unet3d",
    3: "fastdvdnet",
    4: "imageseries",
}

DTYPES = {
    0: np.dtype("<c8"),
    1: np.dtype("<f4"),
    2: np.dtype("<u1"),
    3: np.dtype("<i4"),
}


@dataclass
class Record:
    kind: str
    arrays: dict
    meta: dict


def read_record(path):
    """Parse one .kfrg file into a Record, verifying every checksum."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a .kfrg file")
    version, kind_code, n_arrays, _reserved = struct.unpack_from("<IBBH", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind_code not in KIND_NAMES:
        raise FormatError(f"{path}: unknown record kind {kind_code}")
    (meta_len,) = struct.unpack_from("<I", data, 12)
    pos = 16
    if pos + meta_len + 4 > len(data):
        raise FormatError(f"{path}: truncated metadata")
    meta_bytes = data[pos:pos + meta_len]
    pos += meta_len
    (meta_crc,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if zlib.crc32(data[:16] + meta_bytes) != meta_crc:
        raise ChecksumError(f"{path}: header/metadata checksum mismatch")
    try:
        meta = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: metadata is not valid JSON: {exc}")
    entries = meta.get("arrays")
    if not isinstance(entries, list) or len(entries) != n_arrays:
        raise FormatError(f"{path}: metadata array list does not match header")

    arrays = {}
    for index, entry in enumerate(entries):
        header_start = pos
        if pos + 17 > len(data):
            raise FormatError(f"{path}: truncated array header")
        dtype_code = data[pos]
        if dtype_code not in DTYPES:
            raise FormatError(f"{path}: unknown dtype code {dtype_code}")
        dims = struct.unpack_from("<4I", data, pos + 1)
        pos += 17
        dtype = DTYPES[dtype_code]
        n_items = 1
        for d in dims:
            n_items *= int(d)  # python ints: immune to overflow tricks
        payload_len = n_items * dtype.itemsize
        if pos + payload_len + 4 > len(data):
            raise FormatError(f"{path}: declared array size exceeds file")
        payload = data[pos:pos + payload_len]
        pos += payload_len
        (crc,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if zlib.crc32(data[header_start:header_start + 17] + payload) != crc:
            raise ChecksumError(f"{path}: array {index} checksum mismatch")
        shape = entry.get("shape")
        if (not isinstance(shape, list)
                or any(not isinstance(d, int) or d < 0 for d in shape)
                or len(shape) > 4
                or tuple([1] * (4 - len(shape)) + shape) != dims):
            raise FormatError(f"{path}: array {index} shape mismatch")
        name = entry.get("name")
        if not isinstance(name, str) or name in arrays:
            raise FormatError(f"{path}: bad or duplicate array name {name!r}")
        arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes after last array")
    return Record(KIND_NAMES[kind_code], arrays, meta)
