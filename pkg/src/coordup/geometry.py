"""Shared tensor conventions, coordinate grids, and crop geometry.

Tensor conventions used across the package:

* image:      float tensor (B, 3, H, W), values in [0, 1]
* features:   float tensor (B, C, h, w)
* label map:  integer tensor (H, W); label 0 means "no region",
              labels >= 1 index regions. Labels form a partition.

Normalized coordinates place pixel centers in (-1, 1) per axis, so grids
at different resolutions sample the same continuous unit square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned crop: integer pixel offsets and extents."""

    x0: int
    y0: int
    size_h: int
    size_w: int

    def __post_init__(self):
        if self.size_h < 1 or self.size_w < 1:
            raise ValueError(f"degenerate crop box: {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"negative crop offset: {self}")

    def scaled(self, factor: float) -> "CropBox":
        """Scale all four fields by `factor`, rounding to nearest integer."""
        return CropBox(
            x0=_round_half_up(self.x0 * factor),
            y0=_round_half_up(self.y0 * factor),
            size_h=_round_half_up(self.size_h * factor),
            size_w=_round_half_up(self.size_w * factor),
        )


def make_coord_grid(h: int, w: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Normalized pixel-center grid of shape (h, w, 2).

    Entry (i, j) is (x, y) = (2*(j+0.5)/w - 1, 2*(i+0.5)/h - 1); every
    value lies strictly inside (-1, 1).
    """
    if h < 1 or w < 1:
        raise ValueError(f"grid dimensions must be positive, got ({h}, {w})")
    ys = (2.0 * (torch.arange(h, dtype=dtype) + 0.5) / h) - 1.0
    xs = (2.0 * (torch.arange(w, dtype=dtype) + 0.5) / w) - 1.0
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1)


def map_crop_to_student(box: CropBox, t: float) -> CropBox:
    """Scale a crop box taken on a t-times-larger raster down by 1/t.

    Identifies the student-feature region corresponding to a teacher crop
    from the t-resized image. Offsets and sizes are rounded to nearest
    integer (error at most half a cell); a degenerate result raises.
    """
    if t <= 0:
        raise ValueError(f"scale factor must be positive, got {t}")
    size_h = _round_half_up(box.size_h / t)
    size_w = _round_half_up(box.size_w / t)
    if size_h < 1 or size_w < 1:
        raise ValueError(f"crop box {box} degenerates at scale 1/{t}")
    return CropBox(
        x0=_round_half_up(box.x0 / t),
        y0=_round_half_up(box.y0 / t),
        size_h=size_h,
        size_w=size_w,
    )


def crop(raster: torch.Tensor, box: CropBox) -> torch.Tensor:
    """Exact sub-array copy of the last two (spatial) dimensions."""
    h, w = raster.shape[-2], raster.shape[-1]
    if box.y0 + box.size_h > h or box.x0 + box.size_w > w:
        raise ValueError(f"crop box {box} exceeds raster bounds ({h}, {w})")
    return raster[..., box.y0 : box.y0 + box.size_h, box.x0 : box.x0 + box.size_w].clone()


def compose_crops(outer: CropBox, inner: CropBox) -> CropBox:
    """Box equivalent to cropping by `outer` and then by `inner`."""
    return CropBox(
        x0=outer.x0 + inner.x0,
        y0=outer.y0 + inner.y0,
        size_h=inner.size_h,
        size_w=inner.size_w,
    )


def validate_image(img: torch.Tensor) -> torch.Tensor:
    """Check the (B, 3, H, W), finite, [0, 1] image contract."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ValueError(f"expected image of shape (B, 3, H, W), got {tuple(img.shape)}")
    if not torch.isfinite(img).all():
        raise ValueError("image contains non-finite values")
    if img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return img


def validate_features(feats: torch.Tensor) -> torch.Tensor:
    """Check the (B, C, h, w) finite feature-map contract."""
    if feats.ndim != 4 or feats.shape[1] < 1:
        raise ValueError(f"expected features of shape (B, C, h, w), got {tuple(feats.shape)}")
    if not torch.isfinite(feats).all():
        raise ValueError("feature map contains non-finite values")
    return feats


def validate_label_map(labels: torch.Tensor) -> torch.Tensor:
    """Check the (H, W) non-negative integer label-map contract."""
    if labels.ndim != 2:
        raise ValueError(f"expected label map of shape (H, W), got {tuple(labels.shape)}")
    if labels.is_floating_point():
        raise ValueError("label map must be an integer tensor")
    if labels.min() < 0:
        raise ValueError("label map contains negative labels")
    return labels


def label_map_from_binary_masks(masks: list[torch.Tensor]) -> torch.Tensor:
    """Flatten possibly-overlapping binary masks into a partition label map.

    Overlapping pixels go to the smallest region, which preserves fine
    structures such as small object parts. Output labels are 1..N in the
    input order; uncovered pixels get label 0.
    """
    if not masks:
        raise ValueError("need at least one mask")
    h, w = masks[0].shape
    areas = []
    for m in masks:
        if m.shape != (h, w):
            raise ValueError("all masks must share one spatial size")
        areas.append(int(m.sum()))
    out = torch.zeros(h, w, dtype=torch.int64)
    # paint large regions first so smaller ones overwrite them
    for idx in sorted(range(len(masks)), key=lambda i: -areas[i]):
        out[masks[idx].bool()] = idx + 1
    return out
