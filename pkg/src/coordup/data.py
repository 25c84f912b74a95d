"""Dataset ingestion and the synthetic shapes generator.

On-disk layout: a root directory with ``images/*.png`` (8-bit RGB) and
``masks/*.png`` (16-bit single-channel region labels, same stem; label 0
means "no region"). Optional per-stem extras: ``classes/*.png`` (16-bit
semantic labels, used by the linear probe) and ``features/*.lfuf``
(precomputed backbone features for the "file" adapter).

The synthetic set draws randomly colored rectangles and ellipses on a
textured background; the instance map doubles as the region label map, and
shape type (background/rectangle/ellipse) provides semantic classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

SYNTH_CLASS_NAMES = ("background", "rectangle", "ellipse")
SYNTH_NUM_CLASSES = len(SYNTH_CLASS_NAMES)


@dataclass
class DatasetItem:
    image: torch.Tensor  # (3, H, W) float32 in [0, 1]
    masks: torch.Tensor  # (H, W) int64 region labels, 0 = no region
    stem: str
    classes: torch.Tensor | None = None  # (H, W) int64 semantic labels
    features_path: Path | None = None


def save_image_png(path: str | Path, image: torch.Tensor) -> None:
    arr = (image.clamp(0, 1).permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image_png(path: str | Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_label_png(path: str | Path, labels: torch.Tensor) -> None:
    arr = labels.numpy().astype(np.uint16)
    Image.fromarray(arr).save(path)


def load_label_png(path: str | Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path)).astype(np.int64)
    if arr.ndim != 2:
        raise ValueError(f"{path}: label maps must be single-channel")
    return torch.from_numpy(arr)


class SyntheticShapes:
    """Deterministic in-memory dataset of colored shapes on textured ground."""

    num_classes = SYNTH_NUM_CLASSES

    def __init__(self, n: int, h: int = 64, w: int = 64, seed: int = 0,
                 min_shapes: int = 3, max_shapes: int = 8):
        if n < 1:
            raise ValueError("need at least one image")
        rng = np.random.Generator(np.random.PCG64(seed))
        self.items: list[DatasetItem] = []
        for i in range(n):
            image, masks, classes = _draw_shapes(rng, h, w, min_shapes, max_shapes)
            self.items.append(DatasetItem(
                image=torch.from_numpy(image),
                masks=torch.from_numpy(masks),
                classes=torch.from_numpy(classes),
                stem=f"synth_{i:05d}",
            ))

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx: int) -> DatasetItem:
        return self.items[idx]


def _draw_shapes(rng: np.random.Generator, h: int, w: int,
                 min_shapes: int, max_shapes: int):
    # textured background: smooth low-frequency color field plus grain
    coarse = rng.uniform(0.25, 0.75, size=(3, 4, 4)).astype(np.float32)
    ys = np.linspace(0, 3, h, dtype=np.float32)
    xs = np.linspace(0, 3, w, dtype=np.float32)
    y0 = np.floor(ys).astype(int).clip(0, 2)
    x0 = np.floor(xs).astype(int).clip(0, 2)
    fy = (ys - y0.astype(np.float32))[None, :, None]
    fx = (xs - x0.astype(np.float32))[None, None, :]
    image = ((1 - fy) * (1 - fx) * coarse[:, y0][:, :, x0]
             + (1 - fy) * fx * coarse[:, y0][:, :, x0 + 1]
             + fy * (1 - fx) * coarse[:, y0 + 1][:, :, x0]
             + fy * fx * coarse[:, y0 + 1][:, :, x0 + 1])
    masks = np.zeros((h, w), dtype=np.int64)
    classes = np.zeros((h, w), dtype=np.int64)
    yy = np.arange(h, dtype=np.float32)[:, None]
    xx = np.arange(w, dtype=np.float32)[None, :]
    n_shapes = int(rng.integers(min_shapes, max_shapes + 1))
    min_r = max(2.0, min(h, w) / 16.0)
    max_r = max(min_r + 1.0, min(h, w) / 5.0)
    for idx in range(1, n_shapes + 1):
        shape_type = int(rng.integers(0, 2))  # 0: rectangle, 1: ellipse
        ry = rng.uniform(min_r, max_r)
        rx = rng.uniform(min_r, max_r)
        cy = rng.uniform(ry, h - 1 - ry)
        cx = rng.uniform(rx, w - 1 - rx)
        # type-correlated palette (warm rectangles, cool ellipses) keeps
        # per-pixel shape type decodable by a linear probe at this scale
        if shape_type == 0:
            color = rng.uniform([0.55, 0.0, 0.0], [1.0, 0.45, 1.0]).astype(np.float32)
        else:
            color = rng.uniform([0.0, 0.55, 0.0], [0.45, 1.0, 1.0]).astype(np.float32)
        if shape_type == 0:
            inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        image[:, inside] = color[:, None]
        masks[inside] = idx
        classes[inside] = shape_type + 1
    grain = rng.normal(0.0, 0.015, size=image.shape).astype(np.float32)
    image = np.clip(image + grain, 0.0, 1.0).astype(np.float32)
    # occlusion can erase a region entirely; relabel so labels stay 1..N
    present = np.unique(masks)
    remap = np.zeros(int(masks.max()) + 1, dtype=np.int64)
    remap[present[present > 0]] = np.arange(1, int((present > 0).sum()) + 1)
    masks = remap[masks]
    return np.ascontiguousarray(image), masks, classes


def synth_dataset(n: int, h: int = 64, w: int = 64, seed: int = 0) -> SyntheticShapes:
    """Generate `n` deterministic synthetic images with region + class labels."""
    return SyntheticShapes(n, h, w, seed)


def write_dataset(dataset, root: str | Path) -> None:
    """Materialize a dataset into the on-disk layout under `root`."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    for i in range(len(dataset)):
        item = dataset[i]
        save_image_png(root / "images" / f"{item.stem}.png", item.image)
        save_label_png(root / "masks" / f"{item.stem}.png", item.masks)
        if item.classes is not None:
            (root / "classes").mkdir(exist_ok=True)
            save_label_png(root / "classes" / f"{item.stem}.png", item.classes)


class DiskDataset:
    """Lazy reader over the on-disk layout; items load on access."""

    def __init__(self, root: str | Path, stems: list[str]):
        self.root = Path(root)
        self.stems = stems

    def __len__(self) -> int:
        return len(self.stems)

    def __getitem__(self, idx: int) -> DatasetItem:
        stem = self.stems[idx]
        image = load_image_png(self.root / "images" / f"{stem}.png")
        masks = load_label_png(self.root / "masks" / f"{stem}.png")
        classes_path = self.root / "classes" / f"{stem}.png"
        classes = load_label_png(classes_path) if classes_path.is_file() else None
        features_path = self.root / "features" / f"{stem}.lfuf"
        return DatasetItem(
            image=image, masks=masks, stem=stem,
            classes=classes,
            features_path=features_path if features_path.is_file() else None,
        )


def load_dataset(root: str | Path, split_seed: int | None = None,
                 limit: int | None = None) -> DiskDataset:
    """Open a dataset directory with deterministic ordering.

    Stems are sorted; `split_seed` applies a seeded shuffle on top and
    `limit` caps the item count. Every image must have a same-size mask
    file; violations raise with the offending stem named.
    """
    root = Path(root)
    image_dir = root / "images"
    stems = sorted(p.stem for p in image_dir.glob("*.png")) if image_dir.is_dir() else []
    for stem in stems:
        mask_path = root / "masks" / f"{stem}.png"
        if not mask_path.is_file():
            raise ValueError(f"dataset item {stem!r}: missing mask file {mask_path}")
        with Image.open(image_dir / f"{stem}.png") as im, Image.open(mask_path) as mk:
            if im.size != mk.size:
                raise ValueError(
                    f"dataset item {stem!r}: image size {im.size} != mask size {mk.size}"
                )
    if split_seed is not None:
        order = torch.randperm(len(stems), generator=torch.Generator().manual_seed(split_seed))
        stems = [stems[i] for i in order.tolist()]
    if limit is not None:
        stems = stems[:limit]
    return DiskDataset(root, stems)
