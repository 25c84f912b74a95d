"""Command-line entry points.

Subcommands: synth-data, train-stage1, train-stage2, upsample, probe,
visualize, bench. A JSON config file (--config) provides model/train/
backbone settings; individual flags override it. Exit codes: 0 success,
1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import torch

from .backbone import BackboneSpec, make_backbone
from .data import (
    SYNTH_NUM_CLASSES,
    DiskDataset,
    load_dataset,
    load_image_png,
    save_image_png,
    synth_dataset,
    write_dataset,
)
from .evaluation import ProbeConfig, UPSAMPLER_CHOICES, bench, build_upsampler, pca_visualize, probe_segmentation
from .model import UpsamplerConfig
from .serialization import load_checkpoint, rng_state_digest, save_checkpoint, save_feature_map, load_feature_map
from .trainer import TrainConfig, train_stage1, train_stage2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return cfg


def _backbone_from_config(cfg: dict, data_root: str | None = None):
    section = dict(cfg.get("backbone", {}))
    name = section.pop("name", "toy")
    if name == "toy":
        return make_backbone("toy", spec=BackboneSpec(**section))
    features_dir = section.get("features_dir") or (Path(data_root) / "features" if data_root else None)
    return make_backbone(name, features_dir=features_dir)


def _model_config(cfg: dict, channels: int, seed: int | None) -> UpsamplerConfig:
    section = dict(cfg.get("model", {}))
    section.setdefault("channels", channels)
    if seed is not None:
        section["seed"] = seed
    return UpsamplerConfig(**section)


def _train_config(cfg: dict, args, stage: int) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    section["stage"] = stage
    for flag, key in (("seed", "seed"), ("steps", "steps"), ("epochs", "epochs"),
                      ("batch_size", "batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            section[key] = value
    if getattr(args, "alpha", None) is not None:
        pgt = dict(section.get("pseudo_gt", {}))
        pgt["alpha"] = args.alpha
        section["pseudo_gt"] = pgt
    return TrainConfig(**section)


def _save_model_checkpoint(model, model_cfg, train_cfg, stage, step, out_dir, backbone_cfg=None):
    manifest = {
        "model_cfg": dataclasses.asdict(model_cfg),
        "train_cfg": dataclasses.asdict(train_cfg) if train_cfg else None,
        "stage": stage,
        "step": step,
        "rng_state_digest": rng_state_digest(),
        "backbone": backbone_cfg,
    }
    params = {name: p.detach() for name, p in model.named_parameters()}
    save_checkpoint(params, manifest, out_dir)


def _load_model_checkpoint(ckpt_dir):
    params, manifest = load_checkpoint(ckpt_dir)
    cfg_dict = manifest.get("model_cfg")
    if cfg_dict is None:
        raise ValueError(f"{ckpt_dir}: manifest has no model_cfg")
    model_cfg = UpsamplerConfig(**cfg_dict)
    fn, module = build_upsampler("xattn", model_cfg, params)
    return fn, module, model_cfg, manifest


def _cmd_synth_data(args) -> int:
    ds = synth_dataset(args.n, args.res, args.res, args.seed or 0)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} images to {args.out}")
    return 0


def _require_items(dataset, root):
    if len(dataset) == 0:
        raise ValueError(f"dataset at {root} is empty")


def _cmd_train_stage1(args) -> int:
    cfg = _load_config(args.config)
    dataset = load_dataset(args.data, limit=args.limit)
    _require_items(dataset, args.data)
    backbone = _backbone_from_config(cfg, args.data)
    model_cfg = _model_config(cfg, getattr(backbone, "channels", 32), args.seed)
    train_cfg = _train_config(cfg, args, stage=1)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, history = train_stage1(dataset, model_cfg, train_cfg, backbone,
                                  log_path=out_dir / "metrics.jsonl")
    backbone_cfg = dict(cfg.get("backbone", {})) or {"name": "toy"}
    _save_model_checkpoint(model, model_cfg, train_cfg, 1, len(history), out_dir, backbone_cfg)
    final = history[-1]["loss"] if history else float("nan")
    print(f"stage 1 done: {len(history)} steps, final loss {final:.6f}, checkpoint {out_dir}")
    return 0


def _cmd_train_stage2(args) -> int:
    cfg = _load_config(args.config)
    dataset = load_dataset(args.data, limit=args.limit)
    _require_items(dataset, args.data)
    backbone = _backbone_from_config(cfg, args.data)
    stage1_params, stage1_manifest = load_checkpoint(args.ckpt)
    model_cfg = UpsamplerConfig(**stage1_manifest["model_cfg"])
    train_cfg = _train_config(cfg, args, stage=2)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    student, teacher, history = train_stage2(dataset, model_cfg, train_cfg, stage1_params,
                                             backbone, log_path=out_dir / "metrics.jsonl")
    backbone_cfg = stage1_manifest.get("backbone")
    _save_model_checkpoint(student, model_cfg, train_cfg, 2, len(history), out_dir, backbone_cfg)
    _save_model_checkpoint(teacher, model_cfg, train_cfg, 2, len(history), out_dir / "teacher", backbone_cfg)
    final = history[-1]["loss"] if history else float("nan")
    print(f"stage 2 done: {len(history)} steps, final loss {final:.6f}, checkpoint {out_dir}")
    return 0


def _resolve_backbone_for_inference(manifest, args_features):
    section = dict(manifest.get("backbone") or {"name": "toy"})
    name = section.pop("name", "toy")
    if name == "file" or args_features is not None:
        return None  # features supplied directly
    return make_backbone("toy", spec=BackboneSpec(**section))


def _cmd_upsample(args) -> int:
    fn, module, model_cfg, manifest = _load_model_checkpoint(args.ckpt)
    img = load_image_png(args.image).unsqueeze(0)
    backbone = _resolve_backbone_for_inference(manifest, args.features)
    if args.features is not None:
        feats = load_feature_map(args.features).unsqueeze(0)
    elif backbone is not None:
        feats = backbone(img)
    else:
        raise ValueError("checkpoint uses the file backbone; pass --features")
    with torch.no_grad():
        out = fn(img, feats, args.res, args.res)
    save_feature_map(args.out, out[0])
    print(f"wrote {out.shape[2]}x{out.shape[3]} features ({out.shape[1]} channels) to {args.out}")
    return 0


def _cmd_visualize(args) -> int:
    fn, module, model_cfg, manifest = _load_model_checkpoint(args.ckpt)
    img = load_image_png(args.image).unsqueeze(0)
    backbone = _resolve_backbone_for_inference(manifest, args.features)
    if args.features is not None:
        feats = load_feature_map(args.features).unsqueeze(0)
    elif backbone is not None:
        feats = backbone(img)
    else:
        raise ValueError("checkpoint uses the file backbone; pass --features")
    res = args.res or img.shape[-1]
    with torch.no_grad():
        rendering = pca_visualize(fn(img, feats, res, res))
    save_image_png(args.out, rendering[0])
    print(f"wrote PCA rendering to {args.out}")
    return 0


def _cmd_probe(args) -> int:
    cfg = _load_config(args.config)
    if args.test_data:
        train_ds = load_dataset(args.data, limit=args.limit)
        test_ds = load_dataset(args.test_data, limit=args.limit)
    else:
        full = load_dataset(args.data, split_seed=args.seed or 0, limit=args.limit)
        n_test = max(1, len(full) // 5)
        train_ds = DiskDataset(full.root, full.stems[n_test:])
        test_ds = DiskDataset(full.root, full.stems[:n_test])
    _require_items(train_ds, args.data)
    backbone = _backbone_from_config(cfg, args.data)
    probe_cfg = ProbeConfig(**cfg.get("probe", {}))
    if args.epochs is not None:
        probe_cfg.epochs = args.epochs
    if args.seed is not None:
        probe_cfg.seed = args.seed
    lowres = args.upsampler == "lowres"
    if lowres:
        fn = None
    elif args.upsampler == "xattn":
        if not args.ckpt:
            raise ValueError("--upsampler xattn needs --ckpt")
        fn, _, _, _ = _load_model_checkpoint(args.ckpt)
    else:
        fn, _ = build_upsampler(args.upsampler, _model_config(cfg, getattr(backbone, "channels", 32), args.seed))
    result = probe_segmentation(fn, backbone, train_ds, test_ds,
                                num_classes=args.num_classes, cfg=probe_cfg, lowres=lowres)
    record = {"upsampler": args.upsampler, "out_res": None if lowres else "full",
              "miou": result["miou"]}
    print(json.dumps(record))
    if args.out:
        with open(args.out, "a") as f:
            f.write(json.dumps(record) + "\n")
    return 0


def _cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    model_cfg = _model_config(cfg, args.channels, args.seed)
    names = list(UPSAMPLER_CHOICES) if args.upsampler == "all" else [args.upsampler]
    for name in names:
        record = bench(name, model_cfg, args.res, args.out_res, repeats=args.repeats,
                       patch_size=args.patch_size)
        record["out_res"] = args.out_res
        print(json.dumps(record))
        if args.out:
            with open(args.out, "a") as f:
                f.write(json.dumps(record) + "\n")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="coordup", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--limit", type=int, default=None, help="cap dataset size")

    p = sub.add_parser("synth-data", help="generate a synthetic shapes dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_synth_data)

    p = sub.add_parser("train-stage1", help="fit the upsampler to mask-refined bicubic targets")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(fn=_cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="self-distillation from an EMA teacher")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="stage-1 checkpoint directory")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(fn=_cmd_train_stage2)

    p = sub.add_parser("upsample", help="upsample one image's features to a sidecar")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--res", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", help="precomputed .lfuf features for the file backbone")
    p.set_defaults(fn=_cmd_upsample)

    p = sub.add_parser("probe", help="linear-probe segmentation mIoU")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--upsampler", default="xattn", choices=list(UPSAMPLER_CHOICES) + ["lowres"])
    p.add_argument("--ckpt", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--num-classes", type=int, default=SYNTH_NUM_CLASSES)
    p.add_argument("--out", default=None, help="append results as JSON lines")
    p.set_defaults(fn=_cmd_probe)

    p = sub.add_parser("visualize", help="PCA rendering of upsampled features")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--features", help="precomputed .lfuf features for the file backbone")
    p.set_defaults(fn=_cmd_visualize)

    p = sub.add_parser("bench", help="parameter count and median forward time")
    p.add_argument("--upsampler", default="all", choices=list(UPSAMPLER_CHOICES) + ["all"])
    p.add_argument("--res", type=int, default=224, help="input image resolution")
    p.add_argument("--out-res", dest="out_res", type=int, default=224)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--channels", type=int, default=384)
    p.add_argument("--patch-size", dest="patch_size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"coordup: error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
