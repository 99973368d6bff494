"""Frame-sequence ingestion and bilinear resampling.

Videos arrive as directories of pre-extracted frames (frame_%05d.png or
.ppm, sorted ascending); no codec handling here. Intensities are used raw,
normalized by the max code value of the file's bit depth. sRGB gamma is not
linearized.
"""

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import MissingInputError, ValidationError

FRAME_EXTENSIONS = (".png", ".ppm")


@dataclass
class RGBVideo:
    """A stack of same-size RGB frames with values in [0, 1]."""
    frames: np.ndarray  # (T, H, W, 3) float64
    frame_rate_hint: float | None = None
    source_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 4 or f.shape[-1] != 3:
            raise ValidationError(f"frames must be (T, H, W, 3), got {f.shape}")
        if f.shape[0] < 1:
            raise ValidationError("video needs at least one frame")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ValidationError("frame values must lie in [0, 1]")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape


def _read_frame(path):
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise ValidationError(f"unreadable frame file {path}: {exc}") from exc
    return np.clip(arr, 0.0, 1.0)


def load_frame_sequence(dir_path, limit=50, source_id=None):
    """Load the first `limit` frames of a directory, sorted by file name.

    Files past the limit are never opened, so corruption there is harmless.
    """
    if not os.path.isdir(dir_path):
        raise MissingInputError(f"frame directory not found: {dir_path}")
    names = sorted(n for n in os.listdir(dir_path)
                   if n.lower().endswith(FRAME_EXTENSIONS))
    if not names:
        raise MissingInputError(f"no .png/.ppm frames in {dir_path}")
    frames = []
    for name in names[:limit]:
        arr = _read_frame(os.path.join(dir_path, name))
        if frames and arr.shape != frames[0].shape:
            raise ValidationError(
                f"frame {name} has size {arr.shape[:2]}, expected "
                f"{frames[0].shape[:2]} (mixed dimensions)")
        frames.append(arr)
    sid = source_id if source_id is not None else os.path.basename(os.path.normpath(dir_path))
    return RGBVideo(np.stack(frames), source_id=sid)


def _bilinear_axis_coords(n_out, n_in):
    # pixel-center alignment, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i0 = np.minimum(i0, n_in - 2) if n_in > 1 else i0
    frac = src - i0
    return i0, frac


def resize_bilinear(arr, out_h, out_w):
    """Resample the last two axes of an array with pixel-center bilinear."""
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"target size must be positive, got {out_h}x{out_w}")
    arr = np.asarray(arr)
    H, W = arr.shape[-2], arr.shape[-1]
    y0, fy = _bilinear_axis_coords(out_h, H)
    x0, fx = _bilinear_axis_coords(out_w, W)
    top = np.take(arr, y0, axis=-2)
    bot = np.take(arr, np.minimum(y0 + 1, H - 1), axis=-2)
    rows = top * (1.0 - fy)[:, None] + bot * fy[:, None]
    left = np.take(rows, x0, axis=-1)
    right = np.take(rows, np.minimum(x0 + 1, W - 1), axis=-1)
    return left * (1.0 - fx) + right * fx


def downsample_bilinear(video, out_h, out_w):
    """Resample every frame of a video to out_h x out_w."""
    chan_first = np.moveaxis(video.frames, -1, 1)  # (T, 3, H, W)
    out = resize_bilinear(chan_first, out_h, out_w)
    return RGBVideo(np.clip(np.moveaxis(out, 1, -1), 0.0, 1.0),
                    frame_rate_hint=video.frame_rate_hint,
                    source_id=video.source_id)
