"""Pipeline configuration: plain-text key=value files with typed fields.

One config drives every subcommand, so a run is reproducible from a single
artifact. Library-level defaults (trajectory modules) carry protocol-scale
values; the pipeline defaults here are desk-scale so a bare config runs in
seconds on small videos.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass

from .errors import MissingInputError, ValidationError

SAMPLING_SCHEMES = ("cartesian", "radial", "spiral")
RECON_METHODS = ("zf", "cs")
EXPORT_ARCHS = ("varnet", "unet3d", "fastdvdnet")


@dataclass
class PipelineConfig:
    video_dir: str = "videos"
    out_dir: str = "out"
    seed: int = 0
    jobs: int = 1

    # simulation
    image_size: int = 64
    frames: int = 24
    n_coils: int = 4
    n_virtual_coils: int = 0      # 0 disables SVD coil compression
    noise: str = "gaussian"

    # sampling schemes used by recon/export/all
    samplings: tuple = SAMPLING_SCHEMES
    method: str = "cs"

    # Cartesian mask
    cart_center_lines: int = 8
    cart_random_lines: int = 9
    cart_band_fraction: float = 0.6
    cart_window: int = 3

    # radial
    radial_spokes: int = 13
    radial_samples: int = 128
    radial_angle: float = 23.8

    # spiral
    spiral_arms: int = 15
    spiral_samples: int = 128
    spiral_r_inner: float = 0.15
    spiral_r_outer: float = 0.56
    spiral_accel_inner: float = 1.1
    spiral_accel_outer: float = 15.0
    spiral_period: int = 12
    spiral_matrix: int = 64
    spiral_dcf_grid: int = 64

    # compressed sensing
    lambda_tv: float = 2e-3
    cs_iterations: int = 30
    cs_cg_iterations: int = 4

    # export
    split_fractions: tuple = (0.75, 0.10, 0.15)
    export_archs: tuple = EXPORT_ARCHS
    window_varnet: int = 24
    window_unet3d: int = 24
    window_fastdvdnet: int = 5

    emit_figures: bool = False

    def __post_init__(self):
        if self.seed < 0:
            raise ValidationError("seed must be >= 0")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.image_size < 32:
            raise ValidationError("image_size must be >= 32")
        if self.frames < 1:
            raise ValidationError("frames must be >= 1")
        if self.n_coils < 1:
            raise ValidationError("n_coils must be >= 1")
        if self.n_virtual_coils < 0 or self.n_virtual_coils > self.n_coils:
            raise ValidationError("n_virtual_coils must be in [0, n_coils]")
        if self.noise not in ("gaussian", "uniform", "none"):
            raise ValidationError(f"unknown noise kind {self.noise!r}")
        if self.method not in RECON_METHODS:
            raise ValidationError(f"method must be one of {RECON_METHODS}")
        bad = [s for s in self.samplings if s not in SAMPLING_SCHEMES]
        if bad or not self.samplings:
            raise ValidationError(f"unknown sampling schemes: {bad}")
        bad = [a for a in self.export_archs if a not in EXPORT_ARCHS]
        if bad or not self.export_archs:
            raise ValidationError(f"unknown export archs: {bad}")
        if len(self.split_fractions) != 3:
            raise ValidationError("split_fractions needs 3 values")
        if self.lambda_tv < 0:
            raise ValidationError("lambda_tv must be >= 0")


def _parse_value(name, raw, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(p) for p in parts)
            return tuple(parts)
        return raw
    except ValueError as exc:
        raise ValidationError(f"config key {name}: {exc}") from exc


def parse_config_text(text, path="<config>"):
    """Parse key = value lines into a raw dict; # starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValidationError(
                f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def load_config(path=None, overrides=None):
    """Build a PipelineConfig from an optional file plus override values.

    Overrides are applied after the file and take the same string form as
    file values (flag plumbing); typed values pass through unchanged.
    """
    defaults = PipelineConfig()
    known = {f.name: getattr(defaults, f.name)
             for f in dataclasses.fields(PipelineConfig)}
    values = {}
    if path is not None:
        if not os.path.isfile(path):
            raise MissingInputError(f"config file not found: {path}")
        with open(path) as fh:
            raw = parse_config_text(fh.read(), path)
        for key, value in raw.items():
            if key not in known:
                raise ValidationError(f"{path}: unknown config key {key!r}")
            values[key] = _parse_value(key, value, known[key])
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ValidationError(f"unknown config override {key!r}")
        if isinstance(value, str):
            value = _parse_value(key, value, known[key])
        values[key] = value
    return PipelineConfig(**values)


def config_as_dict(cfg):
    out = {}
    for field in dataclasses.fields(PipelineConfig):
        value = getattr(cfg, field.name)
        out[field.name] = list(value) if isinstance(value, tuple) else value
    return out


# fields that steer where/how work runs, not what gets computed
_OPERATIONAL_FIELDS = frozenset({"video_dir", "out_dir", "jobs",
                                 "emit_figures"})


def config_hash(cfg):
    """Short stable digest of the result-determining config fields.

    Operational knobs (paths, worker count, figure emission) are excluded
    so identical experiments hash identically regardless of where and how
    parallel they ran.
    """
    lines = []
    for field in sorted(dataclasses.fields(PipelineConfig), key=lambda f: f.name):
        if field.name in _OPERATIONAL_FIELDS:
            continue
        value = getattr(cfg, field.name)
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{field.name}={value!r}")
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:16]
