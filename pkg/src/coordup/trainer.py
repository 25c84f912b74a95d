"""Two-stage optimization loops, EMA teacher, and crop sampling.

Stage 1 fits the upsampler to mask-refined bicubic targets at the input
resolution. Stage 2 initializes a teacher and a student from the stage-1
weights, feeds random high-resolution crops to the teacher, and supervises
the corresponding region of the student's output with the teacher's
mask-refined, downsampled features; the teacher tracks the student by EMA.

Runs are replay-deterministic: one seeded generator drives shuffling, scale
sampling, and crop offsets in a fixed order, and the thread count is pinned.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .baselines import nearest_upsample
from .geometry import CropBox, map_crop_to_student
from .losses import l2_loss, stage1_loss, stage2_loss
from .model import CrossAttentionUpsampler, UpsamplerConfig
from .pseudo_gt import PseudoGTConfig, make_mask_bicubic_target, teacher_target, two_x_feature_target
from .resample import resample_bilinear

ALT_OBJECTIVES = ("mask_bicubic", "two_x_features")


@dataclass
class TrainConfig:
    stage: int = 1
    batch_size: int = 8
    lr: float | None = None  # None: 1e-3 for stage 1, 1e-4 for stage 2
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    ema_decay: float = 0.99
    ema_interval: int = 10
    epochs: int = 1
    steps: int | None = None  # optional hard cap across epochs
    seed: int = 0
    pseudo_gt: PseudoGTConfig = field(default_factory=PseudoGTConfig)
    alt_objective: str = "mask_bicubic"
    grad_clip: float | None = 1.0
    threads: int | None = 1

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.lr is None:
            self.lr = 1e-3 if self.stage == 1 else 1e-4
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")
        if self.ema_interval < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("ema_interval, batch_size, and epochs must be >= 1")
        if self.alt_objective not in ALT_OBJECTIVES:
            raise ValueError(f"alt_objective must be one of {ALT_OBJECTIVES}")
        if isinstance(self.pseudo_gt, dict):
            self.pseudo_gt = PseudoGTConfig(**self.pseudo_gt)
        if isinstance(self.betas, list):
            self.betas = tuple(self.betas)


def ema_update(teacher: dict[str, torch.Tensor], student: dict[str, torch.Tensor],
               decay: float) -> dict[str, torch.Tensor]:
    """Per-parameter exponential moving average: decay*teacher + (1-decay)*student."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    if teacher.keys() != student.keys():
        raise ValueError("teacher/student parameter names differ")
    out = {}
    for name, t in teacher.items():
        s = student[name]
        if t.shape != s.shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(t.shape)} vs {tuple(s.shape)}")
        out[name] = decay * t.detach() + (1.0 - decay) * s.detach()
    return out


def sample_crop_box(h: int, w: int, t: float, rng: torch.Generator) -> CropBox:
    """Uniform (h, w)-sized crop inside the floor(t*h) x floor(t*w) raster."""
    if t < 1.0:
        raise ValueError(f"scale t must be >= 1, got {t}")
    hr_h, hr_w = math.floor(t * h), math.floor(t * w)
    slack_y, slack_x = hr_h - h, hr_w - w
    if slack_y < 0 or slack_x < 0:
        raise ValueError(f"scale t={t} cannot fit a ({h}, {w}) crop")
    y0 = int(torch.randint(0, slack_y + 1, (1,), generator=rng))
    x0 = int(torch.randint(0, slack_x + 1, (1,), generator=rng))
    return CropBox(x0=x0, y0=y0, size_h=h, size_w=w)


def _append_log(log_path, record: dict) -> None:
    if log_path is not None:
        with open(log_path, "a") as f:
            f.write(json.dumps(record) + "\n")


def _batches(n_items: int, cfg: TrainConfig, gen: torch.Generator):
    """Yield per-step index lists: seeded shuffle per epoch, optional step cap."""
    step = 0
    for _ in range(cfg.epochs):
        order = torch.randperm(n_items, generator=gen).tolist()
        for start in range(0, n_items, cfg.batch_size):
            if cfg.steps is not None and step >= cfg.steps:
                return
            yield order[start : start + cfg.batch_size]
            step += 1
    # keep cycling epochs if a step cap asks for more than the data provides
    while cfg.steps is not None and step < cfg.steps:
        order = torch.randperm(n_items, generator=gen).tolist()
        for start in range(0, n_items, cfg.batch_size):
            if step >= cfg.steps:
                return
            yield order[start : start + cfg.batch_size]
            step += 1


def _check_finite(loss: torch.Tensor, step: int) -> None:
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite loss {float(loss)} at step {step}; aborting")


def _setup(cfg: TrainConfig) -> torch.Generator:
    if cfg.threads is not None:
        torch.set_num_threads(cfg.threads)
    return torch.Generator().manual_seed(cfg.seed)


def train_stage1(dataset, model_cfg: UpsamplerConfig, train_cfg: TrainConfig,
                 backbone, log_path=None) -> tuple[CrossAttentionUpsampler, list[dict]]:
    """Fit a fresh upsampler to mask-refined bicubic targets.

    With ``alt_objective="two_x_features"`` the model instead predicts at
    twice the feature resolution and matches the backbone's features of the
    2x-resized image under plain elementwise loss.
    """
    gen = _setup(train_cfg)
    model = CrossAttentionUpsampler(model_cfg)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
        eps=train_cfg.eps, weight_decay=train_cfg.weight_decay,
    )
    alpha = train_cfg.pseudo_gt.alpha
    history: list[dict] = []
    for step, batch_idx in enumerate(_batches(len(dataset), train_cfg, gen)):
        t0 = time.perf_counter()
        items = [dataset[i] for i in batch_idx]
        images = torch.stack([it.image for it in items])
        feats = backbone.features_for_batch(images, [it.stem for it in items])
        h, w = images.shape[-2], images.shape[-1]
        if train_cfg.alt_objective == "two_x_features":
            target = two_x_feature_target(backbone, images)
            out = model(images, feats, target.shape[-2], target.shape[-1])
            loss = l2_loss(out, target)
        else:
            target = torch.cat([
                make_mask_bicubic_target(feats[i : i + 1], it.masks, h, w, alpha)
                for i, it in enumerate(items)
            ])
            out = model(images, feats, h, w)
            loss = stage1_loss(out, target)
        _check_finite(loss, step)
        optimizer.zero_grad()
        loss.backward()
        if train_cfg.grad_clip is not None:
            nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
        optimizer.step()
        record = {"step": step, "stage": 1, "loss": float(loss.detach()), "lr": train_cfg.lr,
                  "t": 1.0, "wall_ms": (time.perf_counter() - t0) * 1e3}
        history.append(record)
        _append_log(log_path, record)
    return model, history


def _load_params(model: CrossAttentionUpsampler, params: dict[str, torch.Tensor]) -> None:
    missing = [n for n, _ in model.named_parameters() if n not in params]
    if missing:
        raise ValueError(f"initialization parameters missing: {missing}")
    model.load_state_dict(params, strict=False)


def train_stage2(dataset, model_cfg: UpsamplerConfig, train_cfg: TrainConfig,
                 stage1_params: dict[str, torch.Tensor], backbone, log_path=None,
                 ) -> tuple[CrossAttentionUpsampler, CrossAttentionUpsampler, list[dict]]:
    """Self-distillation: student learns from an EMA teacher's crop views.

    Returns (student, teacher, history). Teacher and student both start from
    `stage1_params`; the teacher receives no gradients and is refreshed via
    EMA every `ema_interval` optimizer steps.
    """
    gen = _setup(train_cfg)
    student = CrossAttentionUpsampler(model_cfg)
    teacher = CrossAttentionUpsampler(model_cfg)
    _load_params(student, stage1_params)
    _load_params(teacher, stage1_params)
    teacher.requires_grad_(False)
    gt_cfg = train_cfg.pseudo_gt
    optimizer = torch.optim.AdamW(
        student.parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
        eps=train_cfg.eps, weight_decay=train_cfg.weight_decay,
    )
    history: list[dict] = []
    for step, batch_idx in enumerate(_batches(len(dataset), train_cfg, gen)):
        t0 = time.perf_counter()
        items = [dataset[i] for i in batch_idx]
        images = torch.stack([it.image for it in items])
        feats = backbone.features_for_batch(images, [it.stem for it in items])
        h, w = images.shape[-2], images.shape[-1]
        student_out = student(images, feats, h, w)
        image_losses = []
        t_values = []
        for i, item in enumerate(items):
            t = float(torch.rand(1, generator=gen)) * (gt_cfg.t_max - gt_cfg.t_min) + gt_cfg.t_min
            t_values.append(t)
            hr_h, hr_w = math.floor(t * h), math.floor(t * w)
            img_hr = resample_bilinear(images[i : i + 1], hr_h, hr_w)
            masks_hr = nearest_upsample(item.masks, hr_h, hr_w)
            crop_losses = []
            for _ in range(gt_cfg.crops_per_image):
                box = sample_crop_box(h, w, t, gen)
                s_box = map_crop_to_student(box, t)
                target = teacher_target(teacher, backbone, img_hr, box, masks_hr, gt_cfg,
                                        out_size=(s_box.size_h, s_box.size_w))
                crop_losses.append(stage2_loss(student_out[i : i + 1], target, s_box))
            image_losses.append(torch.stack(crop_losses).mean())
        loss = torch.stack(image_losses).mean()
        _check_finite(loss, step)
        optimizer.zero_grad()
        loss.backward()
        if train_cfg.grad_clip is not None:
            nn.utils.clip_grad_norm_(student.parameters(), train_cfg.grad_clip)
        optimizer.step()
        if (step + 1) % train_cfg.ema_interval == 0:
            new_teacher = ema_update(
                dict(teacher.named_parameters()), dict(student.named_parameters()),
                train_cfg.ema_decay,
            )
            teacher.load_state_dict(new_teacher, strict=False)
        record = {"step": step, "stage": 2, "loss": float(loss.detach()), "lr": train_cfg.lr,
                  "t": sum(t_values) / len(t_values),
                  "wall_ms": (time.perf_counter() - t0) * 1e3}
        history.append(record)
        _append_log(log_path, record)
    return student, teacher, history
