"""The three reconstruction networks.

All complex data crosses network boundaries as 2-channel real tensors;
k-space math (the varnet data-consistency step) runs on complex tensors
with the same centered orthonormal FFT convention the simulator uses.

varnet      unrolled: per block a small 2D+time UNet regularizer followed
            by a gradient data-consistency step whose step size is clamped
            to (0, 2) so the k-space residual can never grow.
unet3d      2D+time UNet over multi-coil complex input, magnitude output.
fastdvdnet  two-stage cascade of 2D blocks over 5 magnitude frames
            predicting the latest frame.
"""

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn


def fft2c(x):
    """Centered orthonormal 2D FFT over the last two axes."""
    shifted = torch.fft.ifftshift(x, dim=(-2, -1))
    k = torch.fft.fft2(shifted, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(k, dim=(-2, -1))


def ifft2c(k):
    shifted = torch.fft.ifftshift(k, dim=(-2, -1))
    x = torch.fft.ifft2(shifted, dim=(-2, -1), norm="ortho")
    return torch.fft.fftshift(x, dim=(-2, -1))


def complex_to_channels(x):
    """(..., T, H, W) complex -> (..., 2, T, H, W) real."""
    return torch.stack([x.real, x.imag], dim=-4)


def channels_to_complex(x):
    return torch.complex(x[..., 0, :, :, :], x[..., 1, :, :, :])


def _conv_block(nd, cin, cout):
    conv = nn.Conv3d if nd == 3 else nn.Conv2d
    return nn.Sequential(
        conv(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
        conv(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Small UNet, 2D or 3D, with max-pool down and nearest-upsample up."""

    def __init__(self, nd, cin, cout, widths, zero_init_last=False):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("need at least two widths")
        self.nd = nd
        conv = nn.Conv3d if nd == 3 else nn.Conv2d
        self.pool = F.max_pool3d if nd == 3 else F.max_pool2d
        self.encoders = nn.ModuleList()
        prev = cin
        for w in widths:
            self.encoders.append(_conv_block(nd, prev, w))
            prev = w
        self.up_convs = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for skip_w in reversed(widths[:-1]):
            self.up_convs.append(conv(prev, skip_w, 1))
            self.decoders.append(_conv_block(nd, 2 * skip_w, skip_w))
            prev = skip_w
        self.final = conv(prev, cout, 1)
        if zero_init_last:
            nn.init.zeros_(self.final.weight)
            nn.init.zeros_(self.final.bias)

    def forward(self, x):
        spatial = x.shape[2:]
        mult = 2 ** (len(self.encoders) - 1)
        pads = [(-size) % mult for size in spatial]
        if any(pads):
            # replicate-pad up to the next pooling multiple, crop after
            flat = []
            for p in reversed(pads):
                flat += [0, p]
            x = F.pad(x, flat, mode="replicate")
        skips = []
        h = x
        for enc in self.encoders[:-1]:
            h = enc(h)
            skips.append(h)
            h = self.pool(h, 2)
        h = self.encoders[-1](h)
        for up, dec, skip in zip(self.up_convs, self.decoders,
                                 reversed(skips)):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = dec(torch.cat([h, skip], dim=1))
        out = self.final(h)
        if any(pads):
            out = out[(Ellipsis,) + tuple(slice(0, s) for s in spatial)]
        return out


class VarNet(nn.Module):
    """Unrolled reconstruction for masked Cartesian multi-coil k-space.

    forward inputs, batched:
      kspace (B, T, C, H, W) complex  masked measurements
      mask   (B, T, H) bool           sampled phase-encode lines
      sens   (B, C, H, W) complex     coil maps, RSS = 1
      zf     (B, T, H, W) complex     initializer
    Output is the magnitude series (B, T, H, W). With zero unrolls the
    model is the identity on the initializer.
    """

    def __init__(self, unrolls=6, widths=(8, 16)):
        super().__init__()
        self.unrolls = unrolls
        self.regularizers = nn.ModuleList(
            UNet(3, 2, 2, widths, zero_init_last=True)
            for _ in range(unrolls))
        self.dc_weights = nn.Parameter(torch.zeros(max(unrolls, 1)))

    def _expand(self, x, sens):
        return sens.unsqueeze(1) * x.unsqueeze(2)

    def _reduce(self, coil_imgs, sens):
        return (sens.conj().unsqueeze(1) * coil_imgs).sum(dim=2)

    def residual_norm(self, x, kspace, mask, sens):
        m = mask.unsqueeze(2).unsqueeze(-1)
        diff = (fft2c(self._expand(x, sens)) - kspace) * m
        return torch.linalg.vector_norm(diff)

    def data_consistency(self, x, kspace, mask, sens, step):
        """One gradient step on 0.5||M F S x - y||^2.

        The effective step is 2*sigmoid(step), inside (0, 2); the forward
        operator has unit spectral norm (binary mask, orthonormal FFT,
        RSS-1 maps), so the step never increases the residual.
        """
        m = mask.unsqueeze(2).unsqueeze(-1)
        resid = (fft2c(self._expand(x, sens)) - kspace) * m
        grad = self._reduce(ifft2c(resid), sens)
        return x - (2.0 * torch.sigmoid(step)).to(grad.dtype) * grad

    def forward(self, kspace, mask, sens, zf, track_residuals=False):
        x = zf
        residuals = []
        for i, reg in enumerate(self.regularizers):
            update = reg(complex_to_channels(x))
            x = x - channels_to_complex(update)
            if track_residuals:
                with torch.no_grad():
                    before = float(self.residual_norm(x, kspace, mask, sens))
            x = self.data_consistency(x, kspace, mask, sens,
                                      self.dc_weights[i])
            if track_residuals:
                with torch.no_grad():
                    after = float(self.residual_norm(x, kspace, mask, sens))
                residuals.append((before, after))
        mag = x.abs()
        if track_residuals:
            return mag, residuals
        return mag


class UNet3dModel(nn.Module):
    """Magnitude series from gridded multi-coil complex input.

    forward: (B, T, C, H, W) complex -> (B, T, H, W) real.
    """

    def __init__(self, coils, widths=(16, 32, 64)):
        super().__init__()
        self.coils = coils
        self.net = UNet(3, 2 * coils, 1, widths)

    def forward(self, coil_images):
        b, t, c, h, w = coil_images.shape
        if c != self.coils:
            raise ValueError(f"expected {self.coils} coils, got {c}")
        # (B, T, C, H, W) complex -> (B, 2C, T, H, W) real
        x = torch.cat([coil_images.real, coil_images.imag], dim=2)
        x = x.permute(0, 2, 1, 3, 4)
        return self.net(x).squeeze(1)


class FastDVDNet(nn.Module):
    """Two-stage sliding-triplet denoiser over 5 magnitude frames.

    forward: (B, 5, H, W) -> (B, 1, H, W), the restored latest frame.
    """

    def __init__(self, widths=(16, 32)):
        super().__init__()
        self.stage1 = UNet(2, 3, 1, widths)
        self.stage2 = UNet(2, 3, 1, widths)

    def forward(self, frames):
        if frames.shape[1] != 5:
            raise ValueError(f"expected 5 frames, got {frames.shape[1]}")
        triplets = [frames[:, i:i + 3] for i in range(3)]
        mids = torch.cat([self.stage1(t) for t in triplets], dim=1)
        return self.stage2(mids)


@dataclass
class ModelConfig:
    arch: str
    coils: int = 3
    unrolls: int = 6
    varnet_widths: tuple = (8, 16)
    unet3d_widths: tuple = (16, 32, 64)
    fastdvdnet_widths: tuple = (16, 32)


def build_model(cfg: ModelConfig):
    if cfg.arch == "varnet":
        return VarNet(unrolls=cfg.unrolls, widths=cfg.varnet_widths)
    if cfg.arch == "unet3d":
        return UNet3dModel(coils=cfg.coils, widths=cfg.unet3d_widths)
    if cfg.arch == "fastdvdnet":
        return FastDVDNet(widths=cfg.fastdvdnet_widths)
    raise ValueError(f"unknown arch {cfg.arch!r}")


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
