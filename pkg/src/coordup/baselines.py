"""Reference upsamplers evaluated under the same objectives.

Interpolation baselines (nearest/bilinear/bicubic) are parameter-free; the
resize-convolution and local-implicit models are small trainable networks
matching the main upsampler's call signature so the benchmark and probe
harness can swap them in freely.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .resample import resample_bicubic, resample_bilinear


def bilinear_upsample(feats: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Separable bilinear interpolation with pixel-center alignment."""
    return resample_bilinear(feats, out_h, out_w)


def bicubic_upsample(feats: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Catmull-Rom bicubic interpolation with pixel-center alignment."""
    return resample_bicubic(feats, out_h, out_w)


def nearest_upsample(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Nearest-cell resize; works on feature and integer label tensors."""
    h, w = x.shape[-2], x.shape[-1]
    iy = ((torch.arange(out_h) + 0.5) * h / out_h).floor().long().clamp(0, h - 1)
    ix = ((torch.arange(out_w) + 0.5) * w / out_w).floor().long().clamp(0, w - 1)
    return x[..., iy[:, None], ix[None, :]].clone()


def _seeded_init(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                m.weight.copy_((torch.rand(m.weight.shape, generator=gen) * 2 - 1) * bound)
                if m.bias is not None:
                    m.bias.zero_()


class ResizeConvUpsampler(nn.Module):
    """Repeated (2x bilinear resize -> 3x3 conv -> GELU) stages.

    After the fixed stages a final bilinear resize hits the exact requested
    output size, so non-power-of-two targets are still valid.
    """

    def __init__(self, channels: int, stages: int = 2, seed: int = 0):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=1) for _ in range(stages)
        )
        self.act = nn.GELU()
        _seeded_init(self, seed)

    def forward(self, img: torch.Tensor, feats: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
        x = feats
        for conv in self.convs:
            x = resample_bilinear(x, x.shape[-2] * 2, x.shape[-1] * 2)
            x = self.act(conv(x))
        if x.shape[-2:] != (out_h, out_w):
            x = resample_bilinear(x, out_h, out_w)
        return x


class LocalImplicitUpsampler(nn.Module):
    """Pointwise MLP on [nearest low-res feature, cell offset, RGB].

    Each query pixel sees exactly one low-res cell, so interactions stay
    strictly local by construction.
    """

    def __init__(self, channels: int, hidden: int | None = None, seed: int = 0):
        super().__init__()
        hidden = hidden or channels
        self.channels = channels
        self.mlp = nn.Sequential(
            nn.Linear(channels + 5, hidden),
            nn.GELU(),
            nn.Linear(hidden, hidden),
            nn.GELU(),
            nn.Linear(hidden, channels),
        )
        _seeded_init(self, seed)

    def forward(self, img: torch.Tensor, feats: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
        b, c, h, w = feats.shape
        rgb = img if img.shape[-2:] == (out_h, out_w) else resample_bilinear(img, out_h, out_w)
        # nearest cell index and offset from its center, in cell units
        sy = (torch.arange(out_h, dtype=feats.dtype) + 0.5) * h / out_h - 0.5
        sx = (torch.arange(out_w, dtype=feats.dtype) + 0.5) * w / out_w - 0.5
        iy = sy.round().long().clamp(0, h - 1)
        ix = sx.round().long().clamp(0, w - 1)
        dy = (sy - iy).view(out_h, 1).expand(out_h, out_w)
        dx = (sx - ix).view(1, out_w).expand(out_h, out_w)
        gathered = feats[..., iy[:, None], ix[None, :]]  # (B, C, out_h, out_w)
        delta = torch.stack([dx, dy]).unsqueeze(0).expand(b, -1, -1, -1).to(feats.dtype)
        stacked = torch.cat([gathered, delta, rgb.to(feats.dtype)], dim=1)
        out = self.mlp(stacked.permute(0, 2, 3, 1))
        return out.permute(0, 3, 1, 2)
