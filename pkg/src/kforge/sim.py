"""Turn an RGB video into dynamic multi-coil Cartesian k-space.

The synthetic object is built from two randomly chosen color channels
(real + imaginary), phase-expanded, masked with a random ellipse and given
a smooth random background phase. Random Gaussian coil maps (RSS-normalized)
multiply the object; complex noise targets a drawn SNR; an orthonormal
centered FFT produces fully sampled k-space.

All randomness flows through one explicit numpy Generator per video, drawn
in a fixed order (channels, ellipse, background phase, coil maps, SNR,
noise), so a (video, config, seed) triple is bit-reproducible.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage

from .errors import ValidationError


@dataclass
class SimConfig:
    """Simulation parameters; defaults are the pipeline's standard values."""
    phase_scale: float = 4.0
    ellipse_long_axis_range: tuple = (1.0, 1.4)
    ellipse_short_axis_range: tuple = (0.64, 0.96)
    bg_phase_grid: int = 6
    n_coils: int = 30
    coil_intensity_range: tuple = (0.1, 1.0)
    coil_sigma_range: tuple = (0.16, 0.5)
    coil_center_exclusion: float = 0.2  # central fraction of each axis kept clear
    target_snr_range: tuple = (12.0, 22.0)  # linear amplitude ratio, not dB
    noise_kind: str = "gaussian"  # gaussian | uniform | none
    seed: int = 0

    def __post_init__(self):
        for name in ("ellipse_long_axis_range", "ellipse_short_axis_range",
                     "coil_intensity_range", "coil_sigma_range", "target_snr_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ValidationError(f"{name} is empty: ({lo}, {hi})")
        if self.noise_kind not in ("gaussian", "uniform", "none"):
            raise ValidationError(f"unknown noise_kind {self.noise_kind!r}")
        if self.n_coils < 1:
            raise ValidationError("n_coils must be >= 1")


def rgb_to_complex(frames, rng, phase_scale=4.0):
    """Build the complex object series from two random distinct channels.

    frames: (T, H, W, 3) in [0,1]. Returns (series (T,H,W) complex128,
    (a, b) channel indices). z0 = a + i*b; the output keeps |z0| and
    multiplies its phase by `phase_scale`.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValidationError(f"expected (T, H, W, 3) frames, got {frames.shape}")
    ca, cb = (int(i) for i in rng.permutation(3)[:2])
    z0 = frames[..., ca] + 1j * frames[..., cb]
    series = np.abs(z0) * np.exp(1j * phase_scale * np.angle(z0))
    return series, (ca, cb)


def draw_ellipse_params(shape, rng, long_range=(1.0, 1.4), short_range=(0.64, 0.96)):
    H, W = shape
    return {
        "rotation": float(rng.uniform(0.0, np.pi)),
        "long_axis": float(rng.uniform(*long_range) * W),
        "short_axis": float(rng.uniform(*short_range) * W),
    }


def ellipse_mask(shape, params):
    """Boolean inside-mask for a rotated ellipse centered on the image."""
    H, W = shape
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.mgrid[0:H, 0:W]
    dy, dx = yy - cy, xx - cx
    th = params["rotation"]
    u = dx * np.cos(th) + dy * np.sin(th)
    v = -dx * np.sin(th) + dy * np.cos(th)
    a = params["long_axis"] / 2.0
    b = params["short_axis"] / 2.0
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def apply_elliptical_mask(series, cfg, rng):
    """Zero everything outside one random ellipse, same mask for all frames."""
    series = np.asarray(series)
    params = draw_ellipse_params(series.shape[-2:], rng,
                                 cfg.ellipse_long_axis_range,
                                 cfg.ellipse_short_axis_range)
    mask = ellipse_mask(series.shape[-2:], params)
    return series * mask, params


def bicubic_upscale(grid, out_h, out_w):
    """Upscale a small matrix with bicubic interpolation (pixel-center grid)."""
    grid = np.asarray(grid, dtype=np.float64)
    zoom = (out_h / grid.shape[0], out_w / grid.shape[1])
    return scipy.ndimage.zoom(grid, zoom, order=3, mode="reflect", grid_mode=True)


def add_background_phase(series, cfg, rng):
    """Multiply all frames by exp(i*phi) with phi a smooth random field.

    phi is a bg_phase_grid x bg_phase_grid uniform [-pi, pi] matrix upscaled
    bicubically to the frame size; magnitudes are untouched.
    """
    series = np.asarray(series)
    H, W = series.shape[-2:]
    g = cfg.bg_phase_grid
    if H < g or W < g:
        raise ValidationError(f"image {H}x{W} smaller than phase grid {g}x{g}")
    u = rng.uniform(-np.pi, np.pi, (g, g))
    phi = bicubic_upscale(u, H, W)
    return series * np.exp(1j * phi), phi


def _draw_coil_center(H, W, exclusion, rng):
    # uniform over the image minus the central exclusion box
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    half_y, half_x = exclusion * H / 2.0, exclusion * W / 2.0
    while True:
        y0 = rng.uniform(0.0, H - 1.0)
        x0 = rng.uniform(0.0, W - 1.0)
        if abs(y0 - cy) > half_y or abs(x0 - cx) > half_x:
            return y0, x0


def generate_coil_maps(cfg, H, W, rng):
    """Random Gaussian-profile coil maps, RSS-normalized to 1 everywhere.

    Per coil: peak in coil_intensity_range, per-axis sigma in
    coil_sigma_range x image size, center outside the central exclusion box,
    constant phase offset plus a smooth random phase field.
    """
    if H < 10 or W < 10:
        raise ValidationError("coil map generation needs H, W >= 10")
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    maps = np.empty((cfg.n_coils, H, W), dtype=np.complex128)
    for c in range(cfg.n_coils):
        peak = rng.uniform(*cfg.coil_intensity_range)
        sig_y = rng.uniform(*cfg.coil_sigma_range) * H
        sig_x = rng.uniform(*cfg.coil_sigma_range) * W
        y0, x0 = _draw_coil_center(H, W, cfg.coil_center_exclusion, rng)
        offset = rng.uniform(-np.pi, np.pi)
        u = rng.uniform(-np.pi, np.pi, (cfg.bg_phase_grid, cfg.bg_phase_grid))
        phi = bicubic_upscale(u, H, W)
        mag = peak * np.exp(-((yy - y0) ** 2 / (2 * sig_y**2)
                              + (xx - x0) ** 2 / (2 * sig_x**2)))
        maps[c] = mag * np.exp(1j * (offset + phi))
    rss = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    return maps / rss


def apply_coil_maps(series, maps):
    """out[t, c] = maps[c] * series[t]."""
    series = np.asarray(series)
    maps = np.asarray(maps)
    if series.shape[-2:] != maps.shape[-2:]:
        raise ValidationError(
            f"object {series.shape[-2:]} vs coil maps {maps.shape[-2:]} size mismatch")
    return series[:, None, :, :] * maps[None, :, :, :]


def add_noise(mc, cfg, rng):
    """Add complex noise targeting an SNR drawn from cfg.target_snr_range.

    The per-component noise std is mean(|mc| over nonzero pixels) / snr.
    Returns (noisy, info) with info recording the draw. noise_kind "none"
    returns the input untouched (snr recorded as inf).
    """
    mc = np.asarray(mc)
    if cfg.noise_kind == "none":
        return mc, {"snr_target": float("inf"), "noise_sigma": 0.0}
    snr = float(rng.uniform(*cfg.target_snr_range))
    mag = np.abs(mc)
    nz = mag > 0
    if not nz.any():
        raise ValidationError("add_noise: all-zero input, noise level undefined")
    sigma = float(mag[nz].mean() / snr)
    if cfg.noise_kind == "gaussian":
        noise = rng.standard_normal(mc.shape) + 1j * rng.standard_normal(mc.shape)
        noise *= sigma
    else:  # uniform with matched per-component std
        half = np.sqrt(3.0) * sigma
        noise = rng.uniform(-half, half, mc.shape) + 1j * rng.uniform(-half, half, mc.shape)
    return mc + noise, {"snr_target": snr, "noise_sigma": sigma}


def fft2_forward(imgs):
    """Centered orthonormal 2D FFT over the last two axes (DC at array center)."""
    imgs = np.asarray(imgs)
    shifted = np.fft.ifftshift(imgs, axes=(-2, -1))
    k = np.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def ifft2_centered(ksp):
    """Inverse of fft2_forward."""
    ksp = np.asarray(ksp)
    shifted = np.fft.ifftshift(ksp, axes=(-2, -1))
    img = np.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(img, axes=(-2, -1))


@dataclass
class SimResult:
    """Everything the rest of the pipeline needs from one simulated video."""
    object_series: np.ndarray   # (T, H, W) complex
    coil_maps: np.ndarray       # (C, H, W) complex, RSS = 1
    kspace: np.ndarray          # (T, C, H, W) complex, DC centered, ortho scale
    info: dict = field(default_factory=dict)


def simulate_video(frames, cfg, rng=None):
    """Run the full simulation chain on (T, H, W, 3) frames."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    series, channels = rgb_to_complex(frames, rng, cfg.phase_scale)
    series, ellipse = apply_elliptical_mask(series, cfg, rng)
    series, _ = add_background_phase(series, cfg, rng)
    H, W = series.shape[-2:]
    maps = generate_coil_maps(cfg, H, W, rng)
    mc = apply_coil_maps(series, maps)
    noisy, noise_info = add_noise(mc, cfg, rng)
    ksp = fft2_forward(noisy)
    info = {"channels": channels, "ellipse": ellipse, **noise_info}
    return SimResult(series, maps, ksp, info)
