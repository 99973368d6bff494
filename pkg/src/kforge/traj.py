"""The three real-time undersampling schemes and their density weights.

Cartesian: per-frame phase-encode line masks, 8 always-on center lines plus
random low-band lines under a sliding no-repeat window. Radial: constant
tiny-golden-angle spoke schedule indexed globally across frames. Spiral:
one variable-density arm replicated by exact rotations, 15 arms per frame,
repeating every 12 frames.

k-space coordinates are (ky, kx) in cycles/pixel, range [-0.5, 0.5).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .nufft import NufftPlan

TRAJ_MAGIC = b"KTRJ"
MASK_MAGIC = b"KMSK"
FORMAT_VERSION = 1


@dataclass
class CartesianMask:
    """Per-frame phase-encode line selection."""
    mask: np.ndarray  # (T, H) bool
    n_center: int
    n_random: int

    @property
    def n_frames(self):
        return self.mask.shape[0]

    @property
    def n_lines(self):
        return self.mask.shape[1]


@dataclass
class Trajectory:
    """Non-Cartesian sample locations with density-compensation weights."""
    coords: np.ndarray  # (T, S, 2) float64, (ky, kx)
    dcf: np.ndarray     # (T, S) float64, nonnegative
    readout_structure: tuple = (1, 1)  # (readouts per frame, samples per readout)
    kind: str = "arbitrary"

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] != 2:
            raise ValidationError(f"coords must be (T, S, 2), got {c.shape}")
        if c.size and (c.min() < -0.5 or c.max() >= 0.5):
            raise ValidationError("trajectory coordinates must lie in [-0.5, 0.5)")
        d = np.asarray(self.dcf, dtype=np.float64)
        if d.shape != c.shape[:2]:
            raise ValidationError(f"dcf shape {d.shape} != {c.shape[:2]}")
        if not np.isfinite(d).all() or (d < 0).any():
            raise ValidationError("dcf must be finite and nonnegative")
        self.coords, self.dcf = c, d


@dataclass
class CartesianConfig:
    n_center: int = 8
    n_random: int = 9
    band_fraction: float = 0.6   # random lines come from the bottom fraction
    norepeat_window: int = 15    # no random line twice within this many frames


def center_line_block(H, n_center):
    lo = H // 2 - n_center // 2
    return np.arange(lo, lo + n_center)


def cartesian_mask(T, H, cfg=None, rng=None):
    """Random variable-density Cartesian line schedule.

    Every frame gets cfg.n_center contiguous lines straddling DC plus
    cfg.n_random lines drawn without replacement from the bottom
    cfg.band_fraction of line indices (center block excluded), with no
    random line reused within any cfg.norepeat_window consecutive frames.
    """
    cfg = cfg or CartesianConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if H < 32:
        raise ValidationError(f"need H >= 32 lines, got {H}")
    center = center_line_block(H, cfg.n_center)
    band = np.setdiff1d(np.arange(int(np.floor(cfg.band_fraction * H))), center)
    need = cfg.n_random * cfg.norepeat_window
    if len(band) < need:
        h_min = H
        while True:
            h_min += 1
            b = np.setdiff1d(np.arange(int(np.floor(cfg.band_fraction * h_min))),
                             center_line_block(h_min, cfg.n_center))
            if len(b) >= need:
                break
        raise ValidationError(
            f"band of {len(band)} lines cannot satisfy {cfg.n_random} draws "
            f"with a {cfg.norepeat_window}-frame no-repeat window; "
            f"need H >= {h_min} (or a smaller window)")
    mask = np.zeros((T, H), dtype=bool)
    mask[:, center] = True
    recent = []  # random-line sets of the last window-1 frames
    for t in range(T):
        blocked = set().union(*recent) if recent else set()
        eligible = np.array(sorted(set(band.tolist()) - blocked))
        picked = rng.choice(eligible, size=cfg.n_random, replace=False)
        mask[t, picked] = True
        recent.append(set(picked.tolist()))
        if len(recent) >= cfg.norepeat_window:
            recent.pop(0)
    return CartesianMask(mask, cfg.n_center, cfg.n_random)


def radial_trajectory(T, spokes=13, samples=256, angle_increment=23.8):
    """Tiny-golden-angle radial spokes with a global angle schedule.

    Spoke j of frame t is global spoke n = t*spokes + j at angle
    n*angle_increment mod 180 degrees; each spoke spans k in [-0.5, 0.5)
    through DC. dcf is the |k| ramp, DC getting the innermost nonzero
    weight, normalized to unit sum per frame.
    """
    if spokes < 1 or samples < 2:
        raise ValidationError("need spokes >= 1 and samples >= 2")
    n = np.arange(T * spokes, dtype=np.float64)
    theta = np.deg2rad(np.mod(n * angle_increment, 180.0))
    radii = (np.arange(samples) - samples // 2) / samples  # in [-0.5, 0.5)
    kx = radii[None, :] * np.cos(theta)[:, None]
    ky = radii[None, :] * np.sin(theta)[:, None]
    coords = np.stack([ky, kx], axis=-1).reshape(T, spokes * samples, 2)
    ramp = np.abs(radii)
    ramp[samples // 2] = 1.0 / samples  # DC: innermost nonzero weight
    dcf = np.tile(ramp, (T, spokes))
    dcf /= dcf.sum(axis=1, keepdims=True)
    return Trajectory(coords, dcf, readout_structure=(spokes, samples), kind="radial")


@dataclass
class SpiralConfig:
    arms: int = 15
    samples_per_arm: int = 512
    r_inner: float = 0.15   # fraction of k_max where dense sampling ends
    r_outer: float = 0.56   # fraction of k_max where sparse sampling starts
    accel_inner: float = 1.1
    accel_outer: float = 15.0
    frame_period: int = 12  # base rotation advances 1/frame_period turn per frame
    nominal_matrix: int = 224  # sets the arm's turn count via Nyquist spacing
    dcf_grid: int | None = 64  # image size for Pipe-Menon dcf; None skips


def _spiral_base_arm(cfg):
    # theta(r) in turns for one arm: d(theta)/dr = N / (arms * R(r)) with
    # R(r) the local acceleration, piecewise linear in radius
    kmax = 0.5
    ri, ro = cfg.r_inner * kmax, cfg.r_outer * kmax
    if ri >= ro:
        raise ValidationError(f"r_inner {cfg.r_inner} must be < r_outer {cfg.r_outer}")
    scale = cfg.nominal_matrix / cfg.arms

    def accel(r):
        r = np.asarray(r, dtype=np.float64)
        lin = cfg.accel_inner + (cfg.accel_outer - cfg.accel_inner) * (r - ri) / (ro - ri)
        return np.clip(lin, cfg.accel_inner, cfg.accel_outer)

    # integrate turns on a dense radius grid, then resample to uniform arc length
    r_dense = np.linspace(0.0, kmax * (1.0 - 1e-10), 20001)
    dtheta = scale / accel(r_dense)
    theta = np.concatenate([[0.0], np.cumsum((dtheta[1:] + dtheta[:-1]) / 2.0
                                             * np.diff(r_dense))])
    dr = np.gradient(r_dense)
    ds = np.sqrt(dr**2 + (2.0 * np.pi * r_dense * np.gradient(theta)) ** 2)
    s = np.cumsum(ds)
    s -= s[0]
    s_targets = np.linspace(0.0, s[-1], cfg.samples_per_arm)
    r_s = np.interp(s_targets, s, r_dense)
    th_s = np.interp(s_targets, s, theta)
    return r_s, th_s  # radius and angle (turns) per sample


def _rotate(points, angle):
    c, s = np.cos(angle), np.sin(angle)
    ky, kx = points[..., 0], points[..., 1]
    return np.stack([s * kx + c * ky, c * kx - s * ky], axis=-1)


def spiral_trajectory(T, cfg=None):
    """Variable-density spiral: 15 rotated copies of one arm per frame.

    Arms within a frame are exact rotations of arm 0 by 2*pi*j/arms; the
    base rotation advances by 1/frame_period turn each frame, so the
    trajectory repeats exactly every frame_period frames.
    """
    cfg = cfg or SpiralConfig()
    r_s, th_s = _spiral_base_arm(cfg)
    phase = 2.0 * np.pi * th_s
    base = np.stack([r_s * np.sin(phase), r_s * np.cos(phase)], axis=-1)  # (S, 2)
    period = cfg.frame_period
    frames = []
    for t in range(min(T, period)):
        shifted = _rotate(base, 2.0 * np.pi * t / period)
        arms = [_rotate(shifted, 2.0 * np.pi * j / cfg.arms) for j in range(cfg.arms)]
        frames.append(np.concatenate(arms, axis=0))
    coords = np.stack([frames[t % period] for t in range(T)], axis=0)
    # numerical safety: rotations can nudge a boundary sample onto +0.5
    np.clip(coords, -0.5, np.nextafter(0.5, 0.0), out=coords)
    S = coords.shape[1]
    traj = Trajectory(coords, np.full((T, S), 1.0 / S),
                      readout_structure=(cfg.arms, cfg.samples_per_arm), kind="spiral")
    if cfg.dcf_grid is not None:
        traj = density_compensation(traj, cfg.dcf_grid, method="pipe_menon",
                                    unique_frames=min(T, period))
    return traj


def pipe_menon_dcf(coords, image_size, iterations=10):
    """Iterative density weights: w <- w / (kernel-correlated w), unit sum.

    The denominator convolves the weights with the gridding kernel's
    autocorrelation, which is positive and compactly supported, so the
    iteration is stable. The unit-sum normalization makes the dcf-weighted
    adjoint of the forward transform of a centered delta peak at ~1.
    """
    plan = NufftPlan((image_size, image_size), coords)
    w = np.ones(len(coords), dtype=np.float64)
    for _ in range(iterations):
        w = w / np.maximum(plan.sample_density(w), 1e-30)
    return w / w.sum()


def density_compensation(traj, image_size, method="auto", unique_frames=None):
    """Fill a trajectory's dcf: analytic ramp for radial, Pipe-Menon else."""
    coords = traj.coords
    if coords.size == 0:
        raise ValidationError("empty trajectory")
    span = coords.reshape(-1, 2)
    if np.abs(span - span[0]).max() == 0.0:
        raise ValidationError("degenerate trajectory: all points identical")
    if method == "auto":
        method = "ramp" if traj.kind == "radial" else "pipe_menon"
    T, S = coords.shape[:2]
    if method == "ramp":
        radius = np.linalg.norm(coords, axis=-1)
        nonzero_min = np.where(radius > 0, radius, np.inf).min(axis=1, keepdims=True)
        dcf = np.where(radius > 0, radius, nonzero_min)
        dcf = dcf / dcf.sum(axis=1, keepdims=True)
    elif method == "pipe_menon":
        uniq = unique_frames or T
        per_frame = [pipe_menon_dcf(coords[t], image_size) for t in range(min(uniq, T))]
        dcf = np.stack([per_frame[t % len(per_frame)] for t in range(T)], axis=0)
    else:
        raise ValidationError(f"unknown dcf method {method!r}")
    return Trajectory(coords, dcf, traj.readout_structure, traj.kind)


def write_trajectory(traj, path):
    """KTRJ binary: header {magic, version, T, S}, coords f32 pairs, dcf f32."""
    T, S = traj.coords.shape[:2]
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, T, S))
        fh.write(traj.coords.astype("<f4").tobytes())
        fh.write(traj.dcf.astype("<f4").tobytes())


def read_trajectory(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TRAJ_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    version, T, S = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    need = 16 + T * S * 2 * 4 + T * S * 4
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    coords = np.frombuffer(blob[16:16 + T * S * 8], dtype="<f4").reshape(T, S, 2)
    dcf = np.frombuffer(blob[16 + T * S * 8:], dtype="<f4").reshape(T, S)
    return Trajectory(coords.astype(np.float64), dcf.astype(np.float64),
                      readout_structure=(1, S), kind="arbitrary")


def write_mask(cmask, path):
    """KMSK binary: header {magic, version, T, H}, packed line bits per frame."""
    T, H = cmask.mask.shape
    packed = np.packbits(cmask.mask, axis=1)
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, T, H))
        fh.write(packed.tobytes())


def read_mask(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MASK_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    version, T, H = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    row_bytes = (H + 7) // 8
    need = 16 + T * row_bytes
    if len(blob) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    packed = np.frombuffer(blob[16:], dtype=np.uint8).reshape(T, row_bytes)
    mask = np.unpackbits(packed, axis=1)[:, :H].astype(bool)
    # counts are not stored: always-on lines are the center block for T >= 2
    always_on = int(mask.all(axis=0).sum()) if T >= 2 else int(mask[0].sum())
    per_frame = int(mask[0].sum())
    return CartesianMask(mask, always_on, per_frame - always_on)


def mask_to_grid_trajectory(cmask, W):
    """Grid-point trajectory equivalent to a Cartesian line mask.

    Lines map to rows of k-space samples at exact grid frequencies; used to
    cross-check the non-Cartesian path against the Cartesian one.
    """
    T, H = cmask.mask.shape
    frames = []
    for t in range(T):
        lines = np.flatnonzero(cmask.mask[t])
        ky = (lines[:, None] - H // 2) / H * np.ones((1, W))
        kx = np.broadcast_to((np.arange(W) - W // 2) / W, (len(lines), W))
        frames.append(np.stack([ky, kx], axis=-1).reshape(-1, 2))
    coords = np.stack(frames, axis=0)
    S = coords.shape[1]
    return Trajectory(coords, np.full((T, S), 1.0 / S),
                      readout_structure=(len(lines), W), kind="cartesian-grid")
