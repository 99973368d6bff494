"""Image quality metrics and rank statistics for reconstruction comparisons.

Covers pixelwise error (MSE, PSNR), perceptual similarity (SSIM), an
ROI-based SNR estimate, edge sharpness along a line profile with its
temporal variability, and a Friedman test with Nemenyi post-hoc pairwise
p-values. A fixed-schema CSV writer collects per-dataset rows.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.integrate import quad
from scipy.stats import chi2, norm, rankdata

from .errors import ValidationError

METRICS_COLUMNS = ("dataset", "method", "mse", "psnr_db", "ssim",
                   "snr_db", "es_mean", "es_std_t")


def _as_float_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    """Mean squared error between two arrays of identical shape."""
    a, b = _as_float_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=None):
    """Peak signal-to-noise ratio in dB, with b as the reference.

    peak defaults to max(b). A zero error returns +inf.
    """
    a, b = _as_float_pair(a, b)
    if peak is None:
        peak = float(b.max())
    if peak <= 0:
        raise ValidationError("psnr peak must be > 0")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / err))


def _gaussian_window(size, sigma):
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_frame(x, y, kernel, c1, c2):
    pad = kernel.shape[0] // 2

    def local_mean(img):
        full = ndimage.correlate(img, kernel, mode="constant", cval=0.0)
        return full[pad:img.shape[0] - pad, pad:img.shape[1] - pad]

    mu_x = local_mean(x)
    mu_y = local_mean(y)
    var_x = local_mean(x * x) - mu_x * mu_x
    var_y = local_mean(y * y) - mu_y * mu_y
    cov = local_mean(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=None, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean structural similarity over valid windows, averaged over frames.

    Uses a Gaussian-weighted window (default 11x11, sigma 1.5). b is the
    reference; when data_range is None it is taken as max(b) - min(b).
    Accepts (H, W) pairs or (T, H, W) series.
    """
    a, b = _as_float_pair(a, b)
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValidationError("ssim expects (H, W) or (T, H, W) arrays")
    if window_size % 2 != 1 or window_size < 3:
        raise ValidationError("window_size must be odd and >= 3")
    if a.shape[1] < window_size or a.shape[2] < window_size:
        raise ValidationError(
            f"image {a.shape[1:]} smaller than {window_size}x{window_size} window")
    if data_range is None:
        data_range = float(b.max() - b.min())
        if data_range <= 0:
            raise ValidationError(
                "reference has zero dynamic range; pass data_range explicitly")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    kernel = _gaussian_window(window_size, sigma)
    scores = [_ssim_frame(a[t], b[t], kernel, c1, c2) for t in range(a.shape[0])]
    return float(np.mean(scores))


def snr_estimate(img, signal_roi, noise_roi):
    """SNR in dB from ROI statistics pooled over frames.

    signal_roi and noise_roi are boolean (H, W) masks; the ratio is
    mean(signal pixels) / std(noise pixels) and the result 20*log10 of it.
    A zero-variance noise ROI returns +inf.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ValidationError("snr_estimate expects (H, W) or (T, H, W)")
    signal_roi = np.asarray(signal_roi, dtype=bool)
    noise_roi = np.asarray(noise_roi, dtype=bool)
    if signal_roi.shape != img.shape[1:] or noise_roi.shape != img.shape[1:]:
        raise ValidationError("ROI masks must match the frame shape")
    if (signal_roi & noise_roi).any():
        raise ValidationError("signal and noise ROIs must not overlap")
    if signal_roi.sum() < 16 or noise_roi.sum() < 16:
        raise ValidationError("each ROI needs at least 16 pixels")
    signal = img[:, signal_roi]
    noise = img[:, noise_roi]
    sd = float(noise.std())
    mean = float(signal.mean())
    if sd == 0.0:
        return math.inf
    ratio = mean / sd
    if ratio <= 0.0:
        return -math.inf
    return float(20.0 * np.log10(ratio))


@dataclass
class ProfileSpec:
    """Line segment for edge-sharpness profiles, in (y, x) pixel coordinates."""
    start: tuple
    end: tuple
    samples: int = 128

    def __post_init__(self):
        if len(self.start) != 2 or len(self.end) != 2:
            raise ValidationError("profile endpoints must be (y, x) pairs")
        if tuple(self.start) == tuple(self.end):
            raise ValidationError("profile endpoints must be distinct")
        if self.samples < 2:
            raise ValidationError("profile needs at least 2 samples")


@dataclass
class EdgeSharpnessResult:
    es_mean: float
    es_std_t: float
    per_frame: np.ndarray
    flat_frames: np.ndarray  # True where the profile had no intensity span


def _bilinear_profile(frame, ys, xs):
    h, w = frame.shape
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = frame[y0, x0] * (1 - fx) + frame[y0, x1] * fx
    bot = frame[y1, x0] * (1 - fx) + frame[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def edge_sharpness(series, profile):
    """Maximum normalized intensity step along a resampled line profile.

    Each frame's profile is min-max normalized to [0, 1]; sharpness is the
    largest absolute difference between adjacent samples, so an ideal step
    scores 1.0 and a linear ramp over N samples scores 1/(N-1). Flat
    profiles score 0 and are flagged. Returns the mean and the standard
    deviation over frames.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 2:
        series = series[None]
    if series.ndim != 3:
        raise ValidationError("edge_sharpness expects (H, W) or (T, H, W)")
    h, w = series.shape[1:]
    for point in (profile.start, profile.end):
        y, x = point
        if not (0 <= y <= h - 1 and 0 <= x <= w - 1):
            raise ValidationError(f"profile endpoint {point} outside image")
    ys = np.linspace(profile.start[0], profile.end[0], profile.samples)
    xs = np.linspace(profile.start[1], profile.end[1], profile.samples)
    per_frame = np.empty(series.shape[0])
    flat = np.zeros(series.shape[0], dtype=bool)
    for t in range(series.shape[0]):
        p = _bilinear_profile(series[t], ys, xs)
        span = p.max() - p.min()
        if span <= 0:
            per_frame[t] = 0.0
            flat[t] = True
            continue
        p = (p - p.min()) / span
        per_frame[t] = float(np.abs(np.diff(p)).max())
    # identical per-frame values give exactly zero spread
    std_t = 0.0 if np.ptp(per_frame) == 0 else float(per_frame.std())
    return EdgeSharpnessResult(float(per_frame.mean()), std_t, per_frame, flat)


def _studentized_range_sf(q, k):
    """Tail probability of the range of k iid standard normals."""
    if q <= 0:
        return 1.0

    def integrand(z):
        return norm.pdf(z) * (norm.cdf(z) - norm.cdf(z - q)) ** (k - 1)

    cdf, _ = quad(integrand, -np.inf, np.inf, limit=200)
    return float(min(max(1.0 - k * cdf, 0.0), 1.0))


@dataclass
class FriedmanResult:
    statistic: float
    p_value: float
    mean_ranks: np.ndarray  # (k,)
    nemenyi_p: np.ndarray   # (k, k) symmetric, diagonal 1


def friedman_nemenyi(table):
    """Friedman test over a (subjects x methods) table with Nemenyi post-hoc.

    Rows are ranked independently (mid-rank ties), so the input can be raw
    scores or an already-ranked table. The statistic uses the tie-corrected
    form, the p-value a chi-square tail with k-1 degrees of freedom, and
    the pairwise p-values the studentized-range approximation on mean-rank
    differences.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2:
        raise ValidationError("expected a 2-D (subjects x methods) table")
    n, k = table.shape
    if n < 2:
        raise ValidationError("need at least 2 subjects")
    if k < 3:
        raise ValidationError("need at least 3 methods")
    if not np.all(np.isfinite(table)):
        raise ValidationError("table contains non-finite values")

    ranks = rankdata(table, axis=1)
    col_sums = ranks.sum(axis=0)
    mean_ranks = col_sums / n
    a1 = float((ranks ** 2).sum())
    c1 = n * k * (k + 1) ** 2 / 4.0
    denom = a1 - c1
    if denom <= 1e-12 * max(1.0, a1):
        # every row fully tied: no rank variation at all
        return FriedmanResult(0.0, 1.0, mean_ranks, np.ones((k, k)))
    stat = (k - 1) * float(((col_sums - n * (k + 1) / 2.0) ** 2).sum()) / denom
    p_value = float(chi2.sf(stat, k - 1))

    se = math.sqrt(k * (k + 1) / (6.0 * n))
    pairwise = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            q = abs(mean_ranks[i] - mean_ranks[j]) / se * math.sqrt(2.0)
            p = _studentized_range_sf(q, k)
            pairwise[i, j] = p
            pairwise[j, i] = p
    return FriedmanResult(float(stat), p_value, mean_ranks, pairwise)


@dataclass
class QualityReport:
    """One CSV row of metrics for a (dataset, method) pair."""
    dataset: str
    method: str
    mse: float
    psnr_db: float
    ssim: float
    snr_db: float
    es_mean: float
    es_std_t: float


def write_metrics_csv(path, reports, append=False):
    """Write QualityReport rows with the fixed column order.

    With append=True the header is only written when the file is new or
    empty.
    """
    need_header = True
    mode = "w"
    if append:
        mode = "a"
        need_header = not (os.path.exists(path) and os.path.getsize(path) > 0)
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if need_header:
            writer.writerow(METRICS_COLUMNS)
        for r in reports:
            writer.writerow([r.dataset, r.method, repr(float(r.mse)),
                             repr(float(r.psnr_db)), repr(float(r.ssim)),
                             repr(float(r.snr_db)), repr(float(r.es_mean)),
                             repr(float(r.es_std_t))])


def read_metrics_csv(path):
    """Read a metrics CSV back into QualityReport rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise ValidationError(f"unexpected metrics CSV header in {path}")
        out = []
        for row in reader:
            if len(row) != len(METRICS_COLUMNS):
                raise ValidationError(f"malformed metrics row: {row}")
            out.append(QualityReport(row[0], row[1], *[float(v) for v in row[2:]]))
    return out
