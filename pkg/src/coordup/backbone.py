"""Frozen low-resolution feature extractors.

The trainable upsampler sits on top of a frozen backbone f(.) that turns a
(B, 3, H, W) image into (B, C, H/patch, W/patch) features. Two adapters are
provided: a deterministic toy backbone (a fixed random per-patch projection,
good enough to give the upsampler content-dependent training signal without
any pretrained weights), and a passthrough adapter that reads precomputed
feature sidecars from disk for users with a real extractor.

Nothing in this module exposes trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F

from .serialization import load_feature_map


@dataclass(frozen=True)
class BackboneSpec:
    patch_size: int = 8
    channels: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.channels < 1:
            raise ValueError(f"invalid backbone spec: {self}")


class ToyBackbone:
    """Deterministic frozen patch projector.

    Each non-overlapping patch is flattened, centered, multiplied by a fixed
    projection matrix drawn from `spec.seed` (orthonormal rows where the
    patch dimension allows), and squashed with tanh. Identical inputs give
    bit-identical outputs; permuting two patches permutes exactly the two
    corresponding feature cells.
    """

    _GAIN = 2.0

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        self.patch_size = spec.patch_size
        self.channels = spec.channels
        dim = 3 * spec.patch_size**2
        gen = torch.Generator().manual_seed(spec.seed)
        gaussian = torch.randn(dim, max(spec.channels, 1), generator=gen, dtype=torch.float64)
        if spec.channels <= dim:
            q, _ = torch.linalg.qr(gaussian[:, : spec.channels])
            self._projection = q.transpose(0, 1).contiguous()
        else:
            # more channels than patch dims: orthonormality impossible
            self._projection = (gaussian.transpose(0, 1) / dim**0.5).contiguous()

    def __call__(self, img: torch.Tensor) -> torch.Tensor:
        if img.ndim != 4 or img.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) image, got {tuple(img.shape)}")
        p = self.patch_size
        b, _, h, w = img.shape
        if h % p or w % p:
            raise ValueError(f"image size ({h}, {w}) not divisible by patch size {p}")
        patches = F.unfold(img, kernel_size=p, stride=p)  # (B, 3*p*p, L)
        proj = self._projection.to(img.dtype)
        feats = torch.tanh(self._GAIN * torch.matmul(proj, patches - 0.5))
        return feats.reshape(b, self.channels, h // p, w // p)

    def features_for_batch(self, images: torch.Tensor, stems: list[str] | None = None) -> torch.Tensor:
        return self(images)


class FileBackbone:
    """Passthrough adapter reading per-image .lfuf feature sidecars."""

    def __init__(self, features_dir: str | Path):
        self.features_dir = Path(features_dir)
        if not self.features_dir.is_dir():
            raise ValueError(f"features directory not found: {self.features_dir}")

    def features_for(self, stem: str) -> torch.Tensor:
        path = self.features_dir / f"{stem}.lfuf"
        if not path.is_file():
            raise ValueError(f"missing feature sidecar for {stem!r}: {path}")
        return load_feature_map(path)

    def features_for_batch(self, images: torch.Tensor, stems: list[str] | None = None) -> torch.Tensor:
        if stems is None:
            raise ValueError("file backbone needs dataset stems to locate sidecars")
        maps = [self.features_for(stem) for stem in stems]
        return torch.stack(maps).to(images.dtype)

    def __call__(self, img: torch.Tensor) -> torch.Tensor:
        raise ValueError("file backbone cannot extract features from raw images; pass stems")


def make_backbone(name: str, *, spec: BackboneSpec | None = None,
                  features_dir: str | Path | None = None):
    """Build a registered backbone adapter ("toy" or "file")."""
    if name == "toy":
        return ToyBackbone(spec if spec is not None else BackboneSpec())
    if name == "file":
        if features_dir is None:
            raise ValueError('backbone "file" requires features_dir')
        return FileBackbone(features_dir)
    raise ValueError(f"unknown backbone adapter {name!r} (expected 'toy' or 'file')")
