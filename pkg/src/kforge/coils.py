"""Coil-domain operations: SVD channel compression, root-sum-of-squares
combination, and self-calibrated sensitivity estimation."""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .sim import ifft2_centered

MAX_SVD_POINTS = 100_000


@dataclass
class CompressionMatrix:
    """Linear coil-combination weights from an SVD of the data."""
    matrix: np.ndarray          # (C_in, C_out), orthonormal columns
    retained_energy: float      # fraction of total signal energy kept
    singular_values: np.ndarray


def _coil_stack(data, coil_axis):
    moved = np.moveaxis(np.asarray(data), coil_axis, -1)
    return moved.reshape(-1, moved.shape[-1])


def svd_coil_compress(data, n_components, coil_axis=1, seed=0):
    """Compress the coil dimension to its n_components strongest directions.

    The compression matrix holds the top right-singular vectors of the
    (samples x coils) stack. Stacks larger than MAX_SVD_POINTS rows are
    subsampled with a fixed seed before the SVD; the reported
    retained_energy is always measured on the full data.
    """
    data = np.asarray(data)
    c_in = data.shape[coil_axis]
    if not 1 <= n_components <= c_in:
        raise ValidationError(
            f"n_components must be in [1, {c_in}], got {n_components}")
    stack = _coil_stack(data, coil_axis)
    if stack.shape[0] > MAX_SVD_POINTS:
        rng = np.random.default_rng(seed)
        rows = rng.choice(stack.shape[0], size=MAX_SVD_POINTS, replace=False)
        svd_stack = stack[np.sort(rows)]
    else:
        svd_stack = stack
    _, svals, vh = np.linalg.svd(svd_stack, full_matrices=False)
    matrix = vh.conj().T[:, :n_components]
    total = float(np.vdot(stack, stack).real)
    kept = float(np.vdot(stack @ matrix, stack @ matrix).real)
    retained = kept / total if total > 0 else 1.0
    cm = CompressionMatrix(matrix, retained, svals)
    return apply_compression(data, cm, coil_axis), cm


def apply_compression(data, cm, coil_axis=1):
    moved = np.moveaxis(np.asarray(data), coil_axis, -1)
    out = moved @ cm.matrix
    return np.moveaxis(out, -1, coil_axis)


def rss_combine(images, coil_axis=1):
    """Root-sum-of-squares magnitude across the coil dimension."""
    return np.sqrt((np.abs(np.asarray(images)) ** 2).sum(axis=coil_axis))


def sensitivities_from_images(coil_imgs, eps=1e-8):
    """Normalize (C, H, W) coil images by their RSS magnitude.

    Returns (maps, all_zero); all_zero is True when the combined magnitude
    vanished everywhere, in which case the maps are zeros.
    """
    coil_imgs = np.asarray(coil_imgs)
    rss = rss_combine(coil_imgs, coil_axis=0)
    if rss.max() == 0.0:
        return np.zeros_like(coil_imgs), True
    return coil_imgs / np.maximum(rss, eps), False


def estimate_sensitivities(kspace, mask=None, eps=1e-8):
    """Self-calibrated coil maps from the time-averaged k-space.

    kspace is (T, C, H, W); the average over frames is transformed to image
    space and divided by its RSS magnitude (floored at eps). For
    undersampled data pass the (T, H) line mask: each line is then averaged
    over the frames that actually sampled it, so intermittently sampled
    lines are not downweighted. Returns (maps, all_zero) as in
    sensitivities_from_images.
    """
    kspace = np.asarray(kspace)
    if kspace.ndim != 4:
        raise ValidationError(f"kspace must be (T, C, H, W), got {kspace.shape}")
    if mask is None:
        avg = kspace.mean(axis=0)
    else:
        lines = np.asarray(mask, dtype=np.float64)
        if lines.shape != (kspace.shape[0], kspace.shape[2]):
            raise ValidationError(
                f"mask shape {lines.shape} does not match frames/lines "
                f"{(kspace.shape[0], kspace.shape[2])}")
        counts = lines.sum(axis=0)
        weighted = (kspace * lines[:, None, :, None]).sum(axis=0)
        avg = weighted / np.maximum(counts, 1.0)[None, :, None]
    return sensitivities_from_images(ifft2_centered(avg), eps)
