"""Coordinate-based cross-attention feature upsampler.

Queries are built from normalized pixel coordinates (sinusoidal positional
encoding) concatenated with RGB and projected by a small convolution; the
low-resolution backbone features act as keys and values in a stack of
pre-norm cross-attention transformer blocks. Because every query is an
independent coordinate, one set of weights evaluates at any output
resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .geometry import make_coord_grid
from .resample import resample_bilinear

LOWRES_PE_CHOICES = ("none", "learnable", "sine")


@dataclass
class UpsamplerConfig:
    channels: int
    num_blocks: int = 2
    heads: int = 0  # 0 means max(1, channels // 64)
    pe_freqs: int = 10
    query_conv_kernel: int = 3
    lowres_pe: str = "sine"
    ffn_expansion: int = 4
    lowres_size: tuple[int, int] | None = None  # required for learnable PE
    seed: int = 0

    def __post_init__(self):
        if self.heads == 0:
            self.heads = max(1, self.channels // 64)
        if self.channels < 1 or self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.pe_freqs < 1 or self.num_blocks < 1 or self.ffn_expansion < 1:
            raise ValueError("pe_freqs, num_blocks, and ffn_expansion must be >= 1")
        if self.query_conv_kernel not in (1, 3):
            raise ValueError(f"query_conv_kernel must be 1 or 3, got {self.query_conv_kernel}")
        if self.lowres_pe not in LOWRES_PE_CHOICES:
            raise ValueError(f"lowres_pe must be one of {LOWRES_PE_CHOICES}, got {self.lowres_pe!r}")
        if self.lowres_pe == "learnable" and self.lowres_size is None:
            raise ValueError("learnable low-res PE needs lowres_size")
        if self.lowres_size is not None:
            self.lowres_size = tuple(self.lowres_size)

    @property
    def pe_dim(self) -> int:
        return 4 * self.pe_freqs


def sinusoidal_pe(coords: torch.Tensor, num_freqs: int) -> torch.Tensor:
    """Per-axis sin/cos encoding of normalized coordinates.

    For input (..., 2) returns (..., 4*num_freqs), ordered axis-major:
    [sin(2^k pi u), cos(2^k pi u)] for u = x then u = y, k = 0..num_freqs-1.
    """
    if num_freqs < 1:
        raise ValueError(f"num_freqs must be >= 1, got {num_freqs}")
    freqs = (2.0 ** torch.arange(num_freqs, dtype=coords.dtype)) * math.pi
    args = coords.unsqueeze(-1) * freqs  # (..., 2, K)
    pe = torch.stack([torch.sin(args), torch.cos(args)], dim=-1)  # (..., 2, K, 2)
    return pe.reshape(*coords.shape[:-1], 4 * num_freqs)


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention + feedforward with residual paths."""

    def __init__(self, channels: int, heads: int, ffn_expansion: int):
        super().__init__()
        self.heads = heads
        self.head_dim = channels // heads
        self.norm_attn = nn.LayerNorm(channels)
        self.q_proj = nn.Linear(channels, channels)
        self.k_proj = nn.Linear(channels, channels)
        self.v_proj = nn.Linear(channels, channels)
        self.out_proj = nn.Linear(channels, channels)
        self.norm_ffn = nn.LayerNorm(channels)
        self.ffn = nn.Sequential(
            nn.Linear(channels, channels * ffn_expansion),
            nn.GELU(),
            nn.Linear(channels * ffn_expansion, channels),
        )

    def forward(self, queries: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        b, n, c = queries.shape
        m = kv.shape[1]
        q = self.q_proj(self.norm_attn(queries)).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(kv).view(b, m, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(kv).view(b, m, self.heads, self.head_dim).transpose(1, 2)
        logits = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if torch.isnan(logits).any():
            raise FloatingPointError("NaN in attention logits")
        attn = torch.softmax(logits, dim=-1)
        mixed = torch.matmul(attn, v).transpose(1, 2).reshape(b, n, c)
        queries = queries + self.out_proj(mixed)
        return queries + self.ffn(self.norm_ffn(queries))

    def attention_weights(self, queries: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        """Softmax attention map (B, heads, N, M), for inspection."""
        b, n, _ = queries.shape
        m = kv.shape[1]
        q = self.q_proj(self.norm_attn(queries)).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(kv).view(b, m, self.heads, self.head_dim).transpose(1, 2)
        logits = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        return torch.softmax(logits, dim=-1)


class CrossAttentionUpsampler(nn.Module):
    """Upsample (B, C, h, w) features to any (out_h, out_w) guided by RGB."""

    def __init__(self, cfg: UpsamplerConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        k = cfg.query_conv_kernel
        self.query_conv = nn.Conv2d(cfg.pe_dim + 3, c, kernel_size=k, padding=k // 2)
        self.blocks = nn.ModuleList(
            CrossAttentionBlock(c, cfg.heads, cfg.ffn_expansion) for _ in range(cfg.num_blocks)
        )
        self.head = nn.Linear(c, c)
        if cfg.lowres_pe == "learnable":
            h, w = cfg.lowres_size
            self.lowres_pos = nn.Parameter(torch.zeros(h * w, c))
        elif cfg.lowres_pe == "sine":
            gen = torch.Generator().manual_seed(cfg.seed)
            proj = torch.randn(cfg.pe_dim, c, generator=gen) / math.sqrt(cfg.pe_dim)
            self.register_buffer("pe_projection", proj)
        self._init_parameters()

    def _init_parameters(self) -> None:
        gen = torch.Generator().manual_seed(self.cfg.seed + 1)

        def uniform_(tensor: torch.Tensor, fan_in: int) -> None:
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                tensor.copy_((torch.rand(tensor.shape, generator=gen) * 2 - 1) * bound)

        c = self.cfg.channels
        uniform_(self.query_conv.weight, self.query_conv.weight[0].numel())
        nn.init.zeros_(self.query_conv.bias)
        for block in self.blocks:
            for lin in (block.q_proj, block.k_proj, block.v_proj):
                uniform_(lin.weight, c)
                nn.init.zeros_(lin.bias)
            # zero out-projection and second FFN matrix: blocks start as identity
            nn.init.zeros_(block.out_proj.weight)
            nn.init.zeros_(block.out_proj.bias)
            uniform_(block.ffn[0].weight, c)
            nn.init.zeros_(block.ffn[0].bias)
            nn.init.zeros_(block.ffn[2].weight)
            nn.init.zeros_(block.ffn[2].bias)
        uniform_(self.head.weight, c)
        nn.init.zeros_(self.head.bias)

    def encode_queries(self, rgb: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        """Project [PE(coords), RGB] to C channels: (B, 3, h, w) -> (B, C, h, w)."""
        b, _, h, w = rgb.shape
        if coords.shape[:2] != (h, w):
            raise ValueError(
                f"coordinate grid {tuple(coords.shape[:2])} does not match image ({h}, {w})"
            )
        pe = sinusoidal_pe(coords.to(rgb.dtype), self.cfg.pe_freqs)
        pe = pe.permute(2, 0, 1).unsqueeze(0).expand(b, -1, -1, -1)
        return self.query_conv(torch.cat([pe, rgb], dim=1))

    def encode_lowres(self, feats: torch.Tensor) -> torch.Tensor:
        """Flatten (B, C, h, w) features into kv tokens (B, h*w, C) plus PE."""
        b, c, h, w = feats.shape
        tokens = feats.flatten(2).transpose(1, 2)
        if self.cfg.lowres_pe == "none":
            return tokens
        if self.cfg.lowres_pe == "learnable":
            if (h, w) != self.cfg.lowres_size:
                raise ValueError(
                    f"learnable PE table is for {self.cfg.lowres_size}, got features ({h}, {w})"
                )
            return tokens + self.lowres_pos.to(tokens.dtype)
        pe = sinusoidal_pe(make_coord_grid(h, w, dtype=tokens.dtype), self.cfg.pe_freqs)
        return tokens + pe.reshape(h * w, -1) @ self.pe_projection.to(tokens.dtype)

    def forward_grid(self, coords: torch.Tensor, rgb: torch.Tensor,
                     feats: torch.Tensor) -> torch.Tensor:
        """Evaluate at explicit query coordinates with caller-supplied RGB.

        `coords` is (h_q, w_q, 2) in normalized units and `rgb` is
        (B, 3, h_q, w_q); with a 1x1 query convolution each output pixel
        depends only on its own coordinate and RGB value.
        """
        b = rgb.shape[0]
        h_q, w_q = coords.shape[:2]
        queries = self.encode_queries(rgb, coords).flatten(2).transpose(1, 2)
        kv = self.encode_lowres(feats)
        for block in self.blocks:
            queries = block(queries, kv)
        out = self.head(queries)
        return out.transpose(1, 2).reshape(b, self.cfg.channels, h_q, w_q)

    def forward(self, img: torch.Tensor, feats: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
        """Upsample `feats` to (B, C, out_h, out_w) guided by `img`."""
        if img.shape[0] != feats.shape[0]:
            raise ValueError("image and feature batch sizes differ")
        coords = make_coord_grid(out_h, out_w, dtype=img.dtype)
        rgb = img if img.shape[-2:] == (out_h, out_w) else resample_bilinear(img, out_h, out_w)
        return self.forward_grid(coords, rgb, feats)


def param_count(params) -> int:
    """Total scalar count of a module's trainable parameters or a name->tensor map."""
    if isinstance(params, nn.Module):
        return sum(p.numel() for p in params.parameters())
    return sum(int(t.numel()) for t in params.values())
