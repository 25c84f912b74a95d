"""Pseudo-groundtruth targets for upsampler training.

High-resolution feature labels do not exist, so training targets are
constructed: bicubic-upsampled features blended toward their per-region
mean (stage 1), a teacher's output on a high-resolution crop, mask-refined
and downsampled back to the student's grid (stage 2), and features of the
2x-resized image as a simpler alternative objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .geometry import CropBox, crop, validate_label_map
from .resample import downsample, resample_bicubic, resample_bilinear


@dataclass
class PseudoGTConfig:
    alpha: float = 0.8
    t_min: float = 2.0
    t_max: float = 4.0
    crops_per_image: int = 2
    downsample_mode: str = "bilinear"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 1.0 <= self.t_min <= self.t_max:
            raise ValueError(f"need 1 <= t_min <= t_max, got [{self.t_min}, {self.t_max}]")
        if self.crops_per_image < 1:
            raise ValueError("crops_per_image must be >= 1")
        if self.downsample_mode not in ("bilinear", "average"):
            raise ValueError(f"unknown downsample mode {self.downsample_mode!r}")


def mask_refine(feats: torch.Tensor, labels: torch.Tensor, alpha: float) -> torch.Tensor:
    """Blend each labeled region toward its mean feature.

    Within every region m (label >= 1), output = alpha * mean(feats[m]) +
    (1 - alpha) * feats[m]; label-0 pixels pass through unchanged. Accepts
    (C, H, W) or (B, C, H, W) features with one (H, W) label map.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    validate_label_map(labels)
    squeeze = feats.ndim == 3
    if squeeze:
        feats = feats.unsqueeze(0)
    b, c, h, w = feats.shape
    if labels.shape != (h, w):
        raise ValueError(f"labels {tuple(labels.shape)} do not match features ({h}, {w})")
    flat_labels = labels.reshape(-1).long()
    n_regions = int(flat_labels.max()) + 1
    flat = feats.reshape(b, c, -1)
    sums = torch.zeros(b, c, n_regions, dtype=feats.dtype).index_add_(2, flat_labels, flat)
    counts = torch.bincount(flat_labels, minlength=n_regions).to(feats.dtype).clamp(min=1)
    means = (sums / counts).index_select(2, flat_labels)
    refined = alpha * means + (1 - alpha) * flat
    out = torch.where((flat_labels > 0).view(1, 1, -1), refined, flat).reshape(b, c, h, w)
    return out.squeeze(0) if squeeze else out


def make_mask_bicubic_target(feats_lr: torch.Tensor, labels: torch.Tensor,
                             out_h: int, out_w: int, alpha: float) -> torch.Tensor:
    """Bicubic-upsample low-res features to (out_h, out_w), then mask-refine."""
    if labels.shape != (out_h, out_w):
        raise ValueError(
            f"labels {tuple(labels.shape)} do not match target size ({out_h}, {out_w})"
        )
    return mask_refine(resample_bicubic(feats_lr, out_h, out_w), labels, alpha)


def two_x_feature_target(backbone, img: torch.Tensor) -> torch.Tensor:
    """Backbone features of the 2x-resized image, a (2h, 2w) training target."""
    h, w = img.shape[-2], img.shape[-1]
    return backbone(resample_bilinear(img, 2 * h, 2 * w))


def teacher_target(teacher, backbone, img_hr: torch.Tensor, box: CropBox,
                   masks_hr: torch.Tensor, gt_cfg: PseudoGTConfig,
                   out_size: tuple[int, int]) -> torch.Tensor:
    """Student-side supervision from the teacher's view of a high-res crop.

    Runs the frozen backbone and the teacher upsampler on crop(img_hr, box)
    at the crop's own resolution, mask-refines the result with the crop of
    the full-resolution label map, and downsamples to `out_size` (the
    student-grid region the crop corresponds to). No gradients flow through
    the teacher.
    """
    img_crop = crop(img_hr, box)
    labels_crop = crop(masks_hr, box)
    with torch.no_grad():
        feats_lr = backbone(img_crop)
        teacher_out = teacher(img_crop, feats_lr, box.size_h, box.size_w)
        refined = mask_refine(teacher_out, labels_crop, gt_cfg.alpha)
        return downsample(refined, out_size[0], out_size[1], gt_cfg.downsample_mode)
