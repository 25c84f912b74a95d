"""Separable pixel-center resampling kernels.

Both interpolators map output pixel i to source coordinate
(i + 0.5) * n_in / n_out - 0.5, matching the normalized coordinate grid in
:mod:`coordup.geometry`, so resampled rasters at any two resolutions sample
the same continuous domain. Implemented as dense per-axis weight matrices,
which keeps the operators linear, differentiable, and dtype-exact.

Bilinear clamps out-of-range taps to the edge; bicubic uses the Catmull-Rom
kernel (a = -0.5) with symmetric reflect padding.
"""

from __future__ import annotations

import torch


def _reflect_index(idx: torch.Tensor, n: int) -> torch.Tensor:
    # symmetric reflection with edge repeat: -1 -> 0, n -> n-1, ...
    m = idx % (2 * n)
    return torch.where(m >= n, 2 * n - 1 - m, m)


def _source_coords(n_in: int, n_out: int, dtype: torch.dtype) -> torch.Tensor:
    scale = n_in / n_out
    return (torch.arange(n_out, dtype=dtype) + 0.5) * scale - 0.5


def _catmull_rom(d: torch.Tensor) -> torch.Tensor:
    a = -0.5
    d = d.abs()
    near = (a + 2) * d**3 - (a + 3) * d**2 + 1
    far = a * (d**3 - 5 * d**2 + 8 * d - 4)
    w = torch.where(d <= 1, near, torch.where(d < 2, far, torch.zeros_like(d)))
    return w


def bilinear_weights(n_in: int, n_out: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Dense (n_out, n_in) bilinear interpolation matrix."""
    src = _source_coords(n_in, n_out, dtype)
    j0 = torch.floor(src).long()
    frac = src - j0
    w = torch.zeros(n_out, n_in, dtype=dtype)
    rows = torch.arange(n_out)
    left = j0.clamp(0, n_in - 1)
    right = (j0 + 1).clamp(0, n_in - 1)
    w.index_put_((rows, left), 1 - frac, accumulate=True)
    w.index_put_((rows, right), frac, accumulate=True)
    return w


def bicubic_weights(n_in: int, n_out: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Dense (n_out, n_in) Catmull-Rom matrix with reflect padding."""
    src = _source_coords(n_in, n_out, dtype)
    j0 = torch.floor(src).long()
    frac = src - j0
    w = torch.zeros(n_out, n_in, dtype=dtype)
    rows = torch.arange(n_out)
    for tap in (-1, 0, 1, 2):
        idx = _reflect_index(j0 + tap, n_in)
        w.index_put_((rows, idx), _catmull_rom(frac - tap), accumulate=True)
    return w


def _apply_separable(x: torch.Tensor, wh: torch.Tensor, ww: torch.Tensor) -> torch.Tensor:
    return torch.matmul(torch.matmul(wh, x), ww.transpose(0, 1))


def resample_bilinear(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Bilinear resize of the last two dimensions to (out_h, out_w)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got ({out_h}, {out_w})")
    h, w = x.shape[-2], x.shape[-1]
    return _apply_separable(x, bilinear_weights(h, out_h, x.dtype), bilinear_weights(w, out_w, x.dtype))


def resample_bicubic(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Catmull-Rom bicubic resize of the last two dimensions."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got ({out_h}, {out_w})")
    h, w = x.shape[-2], x.shape[-1]
    return _apply_separable(x, bicubic_weights(h, out_h, x.dtype), bicubic_weights(w, out_w, x.dtype))


def downsample(x: torch.Tensor, out_h: int, out_w: int, mode: str = "bilinear") -> torch.Tensor:
    """Reduce the last two dimensions to (out_h, out_w).

    Mode "bilinear" accepts any smaller-or-equal target; "average" pools
    over exact integer-ratio blocks.
    """
    h, w = x.shape[-2], x.shape[-1]
    if out_h > h or out_w > w:
        raise ValueError(f"downsample target ({out_h}, {out_w}) exceeds input ({h}, {w})")
    if mode == "bilinear":
        return resample_bilinear(x, out_h, out_w)
    if mode == "average":
        if h % out_h or w % out_w:
            raise ValueError(
                f"average pooling needs integer ratios, got ({h}, {w}) -> ({out_h}, {out_w})"
            )
        ky, kx = h // out_h, w // out_w
        lead = x.shape[:-2]
        blocks = x.reshape(*lead, out_h, ky, out_w, kx)
        return blocks.mean(dim=(-3, -1))
    raise ValueError(f"unknown downsample mode {mode!r}")
