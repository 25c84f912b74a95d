"""Binary feature sidecars and parameter checkpoints.

Feature sidecar (``.lfuf``): magic ``LFUF``, version u32, then C, h, w as
little-endian u32, then C*h*w float32 values, row-major channel-first.

Checkpoint: a directory holding ``manifest.json`` plus one raw array file
per named parameter (magic ``LFUP``, version u32, dtype code u32, rank u32,
dims u32 each, float32 little-endian data). Round-trips are bit-exact at
float32.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

FEATURE_MAGIC = b"LFUF"
PARAM_MAGIC = b"LFUP"
FORMAT_VERSION = 1
_DTYPE_F32 = 0


def save_feature_map(path: str | Path, feats: torch.Tensor) -> None:
    """Write a (C, h, w) or (1, C, h, w) feature map as an .lfuf sidecar."""
    if feats.ndim == 4:
        if feats.shape[0] != 1:
            raise ValueError("sidecars hold a single feature map, got batched input")
        feats = feats[0]
    if feats.ndim != 3:
        raise ValueError(f"expected (C, h, w) features, got {tuple(feats.shape)}")
    c, h, w = feats.shape
    data = feats.detach().to(torch.float32).contiguous().numpy()
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<IIII", FORMAT_VERSION, c, h, w))
        f.write(data.astype("<f4").tobytes())


def load_feature_map(path: str | Path) -> torch.Tensor:
    """Read an .lfuf sidecar back as a (C, h, w) float32 tensor."""
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature sidecar (bad magic)")
    version, c, h, w = struct.unpack("<IIII", raw[4:20])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported sidecar version {version}")
    expected = 20 + 4 * c * h * w
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated sidecar ({len(raw)} bytes, expected {expected})")
    arr = np.frombuffer(raw, dtype="<f4", offset=20).reshape(c, h, w)
    return torch.from_numpy(arr.copy())


def _write_param(path: Path, tensor: torch.Tensor) -> None:
    arr = tensor.detach().to(torch.float32).contiguous().numpy()
    with open(path, "wb") as f:
        f.write(PARAM_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, _DTYPE_F32, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f4").tobytes())


def _read_param(path: Path) -> torch.Tensor:
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != PARAM_MAGIC:
        raise ValueError(f"{path}: not a parameter file (bad magic)")
    version, dtype_code, rank = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported parameter version {version}")
    if dtype_code != _DTYPE_F32:
        raise ValueError(f"{path}: unsupported dtype code {dtype_code}")
    header = 16 + 4 * rank
    if len(raw) < header:
        raise ValueError(f"{path}: truncated parameter header")
    dims = struct.unpack(f"<{rank}I", raw[16:header])
    count = int(np.prod(dims)) if rank else 1
    if len(raw) != header + 4 * count:
        raise ValueError(f"{path}: truncated parameter data")
    arr = np.frombuffer(raw, dtype="<f4", offset=header).reshape(dims)
    return torch.from_numpy(arr.copy())


def rng_state_digest(generator: torch.Generator | None = None) -> str:
    """Short hex digest of a torch RNG state, for checkpoint provenance."""
    state = (generator.get_state() if generator is not None else torch.get_rng_state()).numpy()
    return hashlib.sha256(state.tobytes()).hexdigest()[:16]


def save_checkpoint(params: dict[str, torch.Tensor], manifest: dict, ckpt_dir: str | Path) -> None:
    """Write named parameters plus a manifest into `ckpt_dir`."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, tensor in params.items():
        fname = name + ".lfup"
        _write_param(ckpt_dir / fname, tensor)
        entries[name] = {"file": fname, "shape": list(tensor.shape)}
    full = dict(manifest)
    full["format_version"] = FORMAT_VERSION
    full["params"] = entries
    (ckpt_dir / "manifest.json").write_text(json.dumps(full, indent=2, sort_keys=True))


def load_checkpoint(ckpt_dir: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    """Read a checkpoint directory back into (params, manifest).

    Validates that the manifest's parameter list exactly matches the files
    present and that each array has its recorded shape.
    """
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ValueError(f"{ckpt_dir}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())
    entries = manifest.get("params", {})
    on_disk = {p.name for p in ckpt_dir.glob("*.lfup")}
    listed = {e["file"] for e in entries.values()}
    if on_disk != listed:
        raise ValueError(
            f"{ckpt_dir}: manifest/files mismatch (manifest: {sorted(listed)}, disk: {sorted(on_disk)})"
        )
    params = {}
    for name, entry in entries.items():
        tensor = _read_param(ckpt_dir / entry["file"])
        if list(tensor.shape) != entry["shape"]:
            raise ValueError(
                f"{ckpt_dir}: parameter {name} has shape {list(tensor.shape)}, "
                f"manifest says {entry['shape']}"
            )
        params[name] = tensor
    return params, manifest
