"""Differentiable magnitude SSIM and the 1 - SSIM training loss.

Same construction as the evaluation metric: gaussian-weighted local
statistics (window 11, sigma 1.5 by default), stability constants
(k1 L)^2 and (k2 L)^2, and only fully valid windows counted (no padding).
The window shrinks automatically for inputs smaller than 11 pixels.
"""

import torch
import torch.nn.functional as F


def _gaussian_kernel(window, sigma, dtype, device):
    half = window // 2
    x = torch.arange(window, dtype=dtype, device=device) - half
    g = torch.exp(-0.5 * (x / sigma) ** 2)
    k = torch.outer(g, g)
    return (k / k.sum()).reshape(1, 1, window, window)


def _effective_window(window, h, w):
    eff = min(window, h, w)
    if eff % 2 == 0:
        eff -= 1
    if eff < 3:
        raise ValueError(f"image {h}x{w} too small for SSIM")
    return eff


def ssim(pred, target, data_range=None, window=11, sigma=1.5,
         k1=0.01, k2=0.03):
    """Mean SSIM between magnitude series of shape (..., H, W).

    data_range defaults to the target's max, detached so it acts as a
    constant during backprop.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    h, w = pred.shape[-2], pred.shape[-1]
    eff = _effective_window(window, h, w)
    a = pred.reshape(-1, 1, h, w)
    b = target.reshape(-1, 1, h, w)
    if data_range is None:
        data_range = b.max().detach().clamp(min=torch.finfo(b.dtype).eps)
    kernel = _gaussian_kernel(eff, sigma, a.dtype, a.device)
    mu_a = F.conv2d(a, kernel)
    mu_b = F.conv2d(b, kernel)
    ea2 = F.conv2d(a * a, kernel)
    eb2 = F.conv2d(b * b, kernel)
    eab = F.conv2d(a * b, kernel)
    var_a = ea2 - mu_a * mu_a
    var_b = eb2 - mu_b * mu_b
    cov = eab - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def ssim_loss(pred, target, **kwargs):
    """1 - SSIM; in [0, 2], zero only when prediction matches target."""
    return 1.0 - ssim(pred, target, **kwargs)
