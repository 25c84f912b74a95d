"""Linear-probe segmentation, PCA renderings, and upsampler benchmarking.

The probe protocol is upsampler-agnostic: any registered upsampler turns a
dataset into a stream of per-pixel features, a zero-initialized linear
classifier is trained on them with cross-entropy, and segmentation quality
is scored as mean IoU over the classes present in ground truth.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import torch
from torch import nn

from .backbone import BackboneSpec, ToyBackbone
from .baselines import (
    LocalImplicitUpsampler,
    ResizeConvUpsampler,
    bicubic_upsample,
    bilinear_upsample,
    nearest_upsample,
)
from .model import CrossAttentionUpsampler, UpsamplerConfig, param_count

UPSAMPLER_CHOICES = ("xattn", "bilinear", "bicubic", "nearest", "resize_conv", "local_implicit")


@dataclass
class ProbeConfig:
    lr: float = 1e-4
    epochs: int = 5
    batch_size: int = 8
    seed: int = 0


def build_upsampler(name: str, model_cfg: UpsamplerConfig | None = None,
                    params: dict[str, torch.Tensor] | None = None):
    """Return (callable(img, feats, out_h, out_w) -> feats, module_or_None)."""
    if name == "bilinear":
        return (lambda img, feats, oh, ow: bilinear_upsample(feats, oh, ow)), None
    if name == "bicubic":
        return (lambda img, feats, oh, ow: bicubic_upsample(feats, oh, ow)), None
    if name == "nearest":
        return (lambda img, feats, oh, ow: nearest_upsample(feats, oh, ow)), None
    if model_cfg is None:
        raise ValueError(f"upsampler {name!r} needs a model config")
    if name == "xattn":
        module = CrossAttentionUpsampler(model_cfg)
    elif name == "resize_conv":
        module = ResizeConvUpsampler(model_cfg.channels, seed=model_cfg.seed)
    elif name == "local_implicit":
        module = LocalImplicitUpsampler(model_cfg.channels, seed=model_cfg.seed)
    else:
        raise ValueError(f"unknown upsampler {name!r} (choices: {UPSAMPLER_CHOICES})")
    if params is not None:
        missing = [n for n, _ in module.named_parameters() if n not in params]
        if missing:
            raise ValueError(f"checkpoint missing parameters: {missing}")
        module.load_state_dict(params, strict=False)
    module.eval()
    return (lambda img, feats, oh, ow: module(img, feats, oh, ow)), module


def train_linear_probe(features: list[torch.Tensor], labels: list[torch.Tensor],
                       num_classes: int, cfg: ProbeConfig) -> nn.Linear:
    """Fit a zero-initialized per-pixel linear classifier with cross-entropy.

    `features` holds (C, h, w) maps and `labels` matching (h, w) integer
    maps; all label values must be < num_classes.
    """
    if len(features) != len(labels) or not features:
        raise ValueError("need equally many non-empty feature and label streams")
    for lab in labels:
        if int(lab.max()) >= num_classes:
            raise ValueError(f"label {int(lab.max())} >= num_classes {num_classes}")
    channels = features[0].shape[0]
    probe = nn.Linear(channels, num_classes)
    nn.init.zeros_(probe.weight)
    nn.init.zeros_(probe.bias)
    optimizer = torch.optim.AdamW(probe.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    for _ in range(cfg.epochs):
        order = torch.randperm(len(features), generator=gen).tolist()
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            x = torch.stack([features[i].flatten(1).transpose(0, 1) for i in batch])
            y = torch.stack([labels[i].flatten() for i in batch])
            logits = probe(x)
            loss = nn.functional.cross_entropy(logits.reshape(-1, num_classes), y.reshape(-1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    return probe


def probe_predict(probe: nn.Linear, feats: torch.Tensor) -> torch.Tensor:
    """Per-pixel argmax labels for a (C, h, w) feature map."""
    with torch.no_grad():
        logits = probe(feats.flatten(1).transpose(0, 1))
    return logits.argmax(dim=-1).reshape(feats.shape[-2], feats.shape[-1])


def miou(pred_labels: torch.Tensor, gt_labels: torch.Tensor, num_classes: int) -> float:
    """Mean IoU over the classes present in ground truth."""
    if pred_labels.numel() == 0:
        raise ValueError("empty label tensors")
    if pred_labels.shape != gt_labels.shape:
        raise ValueError("prediction/ground-truth shapes differ")
    if int(pred_labels.max()) >= num_classes or int(gt_labels.max()) >= num_classes:
        raise ValueError(f"labels must be < num_classes ({num_classes})")
    pred = pred_labels.reshape(-1)
    gt = gt_labels.reshape(-1)
    ious = []
    for c in range(num_classes):
        gt_c = gt == c
        if not bool(gt_c.any()):
            continue
        pred_c = pred == c
        inter = (gt_c & pred_c).sum()
        union = (gt_c | pred_c).sum()
        ious.append((inter.double() / union.double()).item())
    return float(sum(ious) / len(ious))


def probe_segmentation(upsampler, backbone, train_ds, test_ds, num_classes: int,
                       cfg: ProbeConfig, lowres: bool = False) -> dict:
    """Train a probe on upsampled features and score test mIoU.

    With `lowres=True` the probe instead runs at the backbone grid against
    nearest-to-grid labels, and its coarse predictions are nearest-upsampled
    for scoring, which is the no-upsampler reference point.
    """
    def feature_stream(ds):
        feats_list, labels_list = [], []
        for i in range(len(ds)):
            item = ds[i]
            if item.classes is None:
                raise ValueError(f"dataset item {item.stem!r} has no class labels")
            img = item.image.unsqueeze(0)
            lr = backbone.features_for_batch(img, [item.stem])
            h, w = item.image.shape[-2], item.image.shape[-1]
            if lowres:
                gh, gw = lr.shape[-2], lr.shape[-1]
                feats_list.append(lr[0])
                labels_list.append(nearest_upsample(item.classes, gh, gw))
            else:
                feats_list.append(upsampler(img, lr, h, w)[0].detach())
                labels_list.append(item.classes)
        return feats_list, labels_list

    with torch.no_grad():
        train_feats, train_labels = feature_stream(train_ds)
    probe = train_linear_probe(train_feats, train_labels, num_classes, cfg)
    preds, gts = [], []
    with torch.no_grad():
        test_feats, _ = feature_stream(test_ds)
    for i in range(len(test_ds)):
        item = test_ds[i]
        pred = probe_predict(probe, test_feats[i])
        if lowres:
            h, w = item.image.shape[-2], item.image.shape[-1]
            pred = nearest_upsample(pred, h, w)
        preds.append(pred.reshape(-1))
        gts.append(item.classes.reshape(-1))
    score = miou(torch.cat(preds), torch.cat(gts), num_classes)
    return {"miou": score, "probe": probe}


def pca_visualize(feats: torch.Tensor) -> torch.Tensor:
    """Render a feature map as RGB via its top three principal components.

    Components are computed over this map's own pixels and min-max scaled
    to [0, 1]; zero-variance components render flat, and a degenerate
    decomposition falls back to the first three channels.
    """
    if feats.ndim == 4:
        if feats.shape[0] != 1:
            raise ValueError("pca_visualize takes a single feature map")
        feats = feats[0]
    c, h, w = feats.shape
    if c < 3:
        raise ValueError(f"need at least 3 channels, got {c}")
    x = feats.reshape(c, -1).transpose(0, 1).double()
    x = x - x.mean(dim=0, keepdim=True)
    try:
        _, s, vh = torch.linalg.svd(x, full_matrices=False)
        comps = x @ vh[:3].transpose(0, 1)
        # components carrying only numerical noise render flat
        keep = s[:3] > 1e-6 * max(float(s[0]), 1e-300)
        comps = comps * keep.to(comps.dtype)
    except Exception:
        comps = x[:, :3]
    if not torch.isfinite(comps).all():
        comps = x[:, :3]
    if comps.shape[1] < 3:  # fewer pixels than components
        comps = torch.cat([comps, torch.zeros(comps.shape[0], 3 - comps.shape[1],
                                              dtype=comps.dtype)], dim=1)
    lo = comps.min(dim=0).values
    hi = comps.max(dim=0).values
    span = (hi - lo).clamp(min=0)
    scaled = torch.where(span > 1e-12, (comps - lo) / span.clamp(min=1e-12),
                         torch.zeros_like(comps))
    return scaled.transpose(0, 1).reshape(3, h, w).unsqueeze(0).float().clamp(0, 1)


def bench(upsampler_name: str, model_cfg: UpsamplerConfig, input_res: int, out_res: int,
          repeats: int = 10, patch_size: int = 8, seed: int = 0) -> dict:
    """Median forward wall time and parameter count for one upsampler.

    Runs 3 warmups, then `repeats` timed forwards on a random image and
    toy-backbone features at input_res, upsampling to out_res.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    fn, module = build_upsampler(upsampler_name, model_cfg)
    gen = torch.Generator().manual_seed(seed)
    img = torch.rand(1, 3, input_res, input_res, generator=gen)
    backbone = ToyBackbone(BackboneSpec(patch_size=patch_size, channels=model_cfg.channels))
    feats = backbone(img)
    times = []
    with torch.no_grad():
        for _ in range(3):
            fn(img, feats, out_res, out_res)
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(img, feats, out_res, out_res)
            times.append((time.perf_counter() - t0) * 1e3)
    return {
        "upsampler": upsampler_name,
        "params": param_count(module) if module is not None else 0,
        "median_ms": statistics.median(times),
    }
