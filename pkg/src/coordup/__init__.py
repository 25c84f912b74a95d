"""Coordinate-based cross-attention feature upsampling.

Turns the low-resolution feature grid of a frozen backbone into features at
any requested output resolution, trained in two stages against constructed
pseudo-groundtruth: mask-refined bicubic targets, then self-distillation
from an EMA teacher that sees high-resolution crops.
"""

from .backbone import BackboneSpec, FileBackbone, ToyBackbone, make_backbone
from .baselines import (
    LocalImplicitUpsampler,
    ResizeConvUpsampler,
    bicubic_upsample,
    bilinear_upsample,
    nearest_upsample,
)
from .data import DatasetItem, DiskDataset, SyntheticShapes, load_dataset, synth_dataset, write_dataset
from .evaluation import ProbeConfig, bench, build_upsampler, miou, pca_visualize, probe_segmentation, train_linear_probe
from .geometry import CropBox, compose_crops, crop, make_coord_grid, map_crop_to_student
from .losses import affinity_loss, l2_loss, stage1_loss, stage2_loss
from .model import CrossAttentionUpsampler, UpsamplerConfig, param_count, sinusoidal_pe
from .pseudo_gt import PseudoGTConfig, make_mask_bicubic_target, mask_refine, teacher_target, two_x_feature_target
from .resample import downsample, resample_bicubic, resample_bilinear
from .serialization import load_checkpoint, load_feature_map, save_checkpoint, save_feature_map
from .trainer import TrainConfig, ema_update, sample_crop_box, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "BackboneSpec", "FileBackbone", "ToyBackbone", "make_backbone",
    "LocalImplicitUpsampler", "ResizeConvUpsampler",
    "bicubic_upsample", "bilinear_upsample", "nearest_upsample",
    "DatasetItem", "DiskDataset", "SyntheticShapes", "load_dataset", "synth_dataset", "write_dataset",
    "ProbeConfig", "bench", "build_upsampler", "miou", "pca_visualize",
    "probe_segmentation", "train_linear_probe",
    "CropBox", "compose_crops", "crop", "make_coord_grid", "map_crop_to_student",
    "affinity_loss", "l2_loss", "stage1_loss", "stage2_loss",
    "CrossAttentionUpsampler", "UpsamplerConfig", "param_count", "sinusoidal_pe",
    "PseudoGTConfig", "make_mask_bicubic_target", "mask_refine", "teacher_target", "two_x_feature_target",
    "downsample", "resample_bicubic", "resample_bilinear",
    "load_checkpoint", "load_feature_map", "save_checkpoint", "save_feature_map",
    "TrainConfig", "ema_update", "sample_crop_box", "train_stage1", "train_stage2",
    "__version__",
]
