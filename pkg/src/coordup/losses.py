"""Training discrepancies for both stages.

Stage 1 penalizes plain elementwise error against the mask-refined bicubic
target. Stage 2 compares pairwise pixel-similarity structure instead: each
pixel's channel vector is cosine-normalized and the two Gram matrices are
compared, which makes the loss invariant to channel rotations and per-pixel
scale and lets teacher and student disagree on channel count.
"""

from __future__ import annotations

import torch

from .geometry import CropBox, crop
from .resample import resample_bilinear

_NORM_EPS = 1e-8


def l2_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def _normalized_tokens(feats: torch.Tensor, idx: torch.Tensor | None) -> torch.Tensor:
    if feats.ndim == 3:
        feats = feats.unsqueeze(0)
    tokens = feats.flatten(2).transpose(1, 2)  # (B, P, C)
    if idx is not None:
        tokens = tokens.index_select(1, idx)
    return tokens / (tokens.norm(dim=-1, keepdim=True) + _NORM_EPS)


def affinity_loss(pred: torch.Tensor, target: torch.Tensor,
                  max_pixels: int = 4096, seed: int = 0) -> torch.Tensor:
    """Mean squared difference of cosine Gram matrices.

    Channel counts may differ; spatial sizes must match. Above `max_pixels`
    pixels, both sides are subsampled at the same seeded uniform indices to
    keep the P x P Gram tractable.
    """
    if pred.shape[-2:] != target.shape[-2:]:
        raise ValueError(
            f"spatial mismatch: {tuple(pred.shape[-2:])} vs {tuple(target.shape[-2:])}"
        )
    p = pred.shape[-2] * pred.shape[-1]
    idx = None
    if p > max_pixels:
        gen = torch.Generator().manual_seed(seed)
        idx = torch.randperm(p, generator=gen)[:max_pixels]
    a = _normalized_tokens(pred, idx)
    b = _normalized_tokens(target, idx)
    gram_a = torch.matmul(a, a.transpose(1, 2))
    gram_b = torch.matmul(b, b.transpose(1, 2))
    return ((gram_a - gram_b) ** 2).mean()


def stage1_loss(student_out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Elementwise loss against the mask-refined bicubic target."""
    return l2_loss(student_out, target)


def stage2_loss(student_out_full: torch.Tensor, teacher_tgt: torch.Tensor,
                student_box: CropBox) -> torch.Tensor:
    """Affinity loss between the student's cropped region and the teacher target.

    If integer rounding left the crop a cell off the teacher's size, the
    crop is bilinearly nudged to match before comparing.
    """
    cropped = crop(student_out_full, student_box)
    th, tw = teacher_tgt.shape[-2], teacher_tgt.shape[-1]
    if cropped.shape[-2:] != (th, tw):
        if abs(cropped.shape[-2] - th) > 1 or abs(cropped.shape[-1] - tw) > 1:
            raise ValueError(
                f"student crop {tuple(cropped.shape[-2:])} and teacher target ({th}, {tw}) "
                "differ by more than one cell"
            )
        cropped = resample_bilinear(cropped, th, tw)
    return affinity_loss(cropped, teacher_tgt)
