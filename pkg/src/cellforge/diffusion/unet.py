"""Denoiser network: a compact U-Net with condition-modulated normalization.

Input is three channels (noisy quarter, self-conditioning estimate,
boundary image). Three normalized elastic-tensor components pass through
learnable sinusoidal embeddings, are summed with the timestep embedding,
and modulate every residual block through adaptive scale/shift after group
normalization. Nulling the tensor condition swaps in a learned null
embedding (classifier-free guidance training). Up/down-sampling is
nearest-neighbor; single-head attention sits at the configured feature-map
sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DimensionError, InputError


@dataclass(frozen=True)
class DenoiserSpec:
    size: int = 32                      # quarter resolution m
    base_channels: int = 16
    channel_mults: tuple = (1, 2, 4)
    resblocks_per_stage: int = 1
    attention_sizes: tuple = (4, 8)
    cond_dim: int = 64
    # AdaLN condition injection may be disabled per depth band (ablation knob)
    inject_low: bool = True
    inject_mid: bool = True
    inject_high: bool = True

    def __post_init__(self):
        if self.size % 2 ** (len(self.channel_mults) - 1) != 0:
            raise InputError("size must be divisible by 2^(stages-1)")
        if self.cond_dim % 2 != 0:
            raise InputError("cond_dim must be even")

    def to_json(self) -> dict:
        return {
            "size": self.size,
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "resblocks_per_stage": self.resblocks_per_stage,
            "attention_sizes": list(self.attention_sizes),
            "cond_dim": self.cond_dim,
            "inject_low": self.inject_low,
            "inject_mid": self.inject_mid,
            "inject_high": self.inject_high,
        }

    @classmethod
    def from_json(cls, obj) -> "DenoiserSpec":
        return cls(
            size=obj["size"],
            base_channels=obj["base_channels"],
            channel_mults=tuple(obj["channel_mults"]),
            resblocks_per_stage=obj["resblocks_per_stage"],
            attention_sizes=tuple(obj["attention_sizes"]),
            cond_dim=obj["cond_dim"],
            inject_low=obj.get("inject_low", True),
            inject_mid=obj.get("inject_mid", True),
            inject_high=obj.get("inject_high", True),
        )


class LearnableSinusoidalEmbedding(nn.Module):
    """sin/cos features of a scalar with learnable frequencies.

    Frequencies initialize to w_i = 1 / 10000^(2i/d) and the angle carries a
    2*pi factor, so position 0..1 spans one full period of the fastest wave.
    """

    def __init__(self, dim: int):
        super().__init__()
        i = torch.arange(dim // 2, dtype=torch.float32)
        self.w = nn.Parameter(1.0 / torch.pow(torch.tensor(10000.0), 2 * i / dim))

    def forward(self, pos: torch.Tensor) -> torch.Tensor:
        ang = pos[:, None].float() * self.w[None, :] * (2 * math.pi)
        return torch.stack([torch.sin(ang), torch.cos(ang)], dim=-1).flatten(1)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Fixed sinusoidal embedding of the integer timestep."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    ang = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class AdaResBlock(nn.Module):
    """GroupNorm/SiLU/conv residual block with adaptive scale-shift from the
    condition embedding; modulation can be disabled without changing shapes."""

    def __init__(self, cin: int, cout: int, emb_dim: int, modulate: bool = True):
        super().__init__()
        self.modulate = modulate
        self.norm1 = nn.GroupNorm(min(8, cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, 2 * cout)
        self.norm2 = nn.GroupNorm(min(8, cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.norm2(h)
        if self.modulate:
            scale, shift = self.emb_proj(F.silu(emb))[:, :, None, None].chunk(2, dim=1)
            h = h * (1 + scale) + shift
        h = self.conv2(F.silu(h))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    """Single-head attention over flattened spatial positions."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        att = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (v @ att.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


def _maybe_attention(channels: int, res: int, spec: DenoiserSpec):
    return SelfAttention(channels) if res in spec.attention_sizes else nn.Identity()


class DenoiserUNet(nn.Module):
    """Predicts x0 from (x_t, previous x0 estimate, boundary image)."""

    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        d = spec.cond_dim
        self.time_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.cond_embed = nn.ModuleList([LearnableSinusoidalEmbedding(d) for _ in range(3)])
        self.null_embedding = nn.Parameter(torch.zeros(d))

        chs = [spec.base_channels * m for m in spec.channel_mults]
        n_stage = len(chs)
        self.conv_in = nn.Conv2d(3, chs[0], 3, padding=1)
        self.enc_blocks = nn.ModuleList()
        self.enc_attn = nn.ModuleList()
        res, cur = spec.size, chs[0]
        self._enc_plan = []
        for i, ch in enumerate(chs):
            for _ in range(spec.resblocks_per_stage):
                self.enc_blocks.append(AdaResBlock(cur, ch, d, modulate=spec.inject_low))
                self.enc_attn.append(_maybe_attention(ch, res, spec))
                cur = ch
            self._enc_plan.append(res)
            if i < n_stage - 1:
                res //= 2
        self.mid1 = AdaResBlock(cur, cur, d, modulate=spec.inject_mid)
        self.mid_attn = _maybe_attention(cur, res, spec)
        self.mid2 = AdaResBlock(cur, cur, d, modulate=spec.inject_mid)
        self.dec_blocks = nn.ModuleList()
        self.dec_attn = nn.ModuleList()
        for i, ch in reversed(list(enumerate(chs))):
            for j in range(spec.resblocks_per_stage):
                cin = cur + ch if j == 0 else ch  # only the first block eats the skip
                self.dec_blocks.append(AdaResBlock(cin, ch, d, modulate=spec.inject_high))
                self.dec_attn.append(_maybe_attention(ch, self._enc_plan[i], spec))
                cur = ch
        self.out_norm = nn.GroupNorm(min(8, cur), cur)
        self.out_conv = nn.Conv2d(cur, 1, 3, padding=1)

    def condition_vector(
        self, cond: torch.Tensor | None, batch: int, null_mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Summed tensor-component embeddings; null rows (or cond=None) take
        the learned null embedding instead."""
        if cond is None:
            return self.null_embedding[None, :].expand(batch, -1)
        e = self.cond_embed[0](cond[:, 0])
        e = e + self.cond_embed[1](cond[:, 1]) + self.cond_embed[2](cond[:, 2])
        if null_mask is not None and null_mask.any():
            e = torch.where(null_mask[:, None], self.null_embedding[None, :].expand_as(e), e)
        return e

    def forward(self, x_t, x_prev, boundary_img, t, cond, null_mask=None):
        """cond = None (or a true null_mask row) runs the null-embedding branch."""
        m = self.spec.size
        if x_t.shape[-2:] != (m, m):
            raise DimensionError(f"input {tuple(x_t.shape[-2:])} != spec size {m}")
        emb = self.time_mlp(timestep_embedding(t, self.spec.cond_dim))
        emb = emb + self.condition_vector(cond, x_t.shape[0], null_mask)
        h = self.conv_in(torch.cat([x_t, x_prev, boundary_img], dim=1))
        skips = []
        per_stage = self.spec.resblocks_per_stage
        n_stage = len(self.spec.channel_mults)
        bi = 0
        for i in range(n_stage):
            for _ in range(per_stage):
                h = self.enc_attn[bi](self.enc_blocks[bi](h, emb))
                bi += 1
            skips.append(h)
            if i < n_stage - 1:
                h = F.interpolate(h, scale_factor=0.5, mode="nearest")
        h = self.mid2(self.mid_attn(self.mid1(h, emb)), emb)
        bi = 0
        for i in range(n_stage):
            s = skips[n_stage - 1 - i]
            if h.shape[-1] != s.shape[-1]:
                h = F.interpolate(h, scale_factor=2.0, mode="nearest")
            for j in range(per_stage):
                x = torch.cat([h, s], dim=1) if j == 0 else h
                h = self.dec_attn[bi](self.dec_blocks[bi](x, emb))
                bi += 1
        return self.out_conv(F.silu(self.out_norm(h)))
