"""Multi-head self-attention with post-residual layer normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError


@dataclass(frozen=True)
class AttentionConfig:
    layers: int = 1
    heads: int = 8
    model_dim: int = 512

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError(f"attention needs at least one layer, got {self.layers}")
        if self.heads < 1 or self.model_dim % self.heads:
            raise ConfigError(f"heads={self.heads} must divide model_dim={self.model_dim}")

    @property
    def key_dim(self) -> int:
        return self.model_dim // self.heads


class SelfAttentionLayer(nn.Module):
    """One MHSA block: ``LN(W_c [h_1; ...; h_e] + X)``."""

    def __init__(self, model_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.d_k = model_dim // heads
        self.q = nn.Linear(model_dim, model_dim)
        # A key bias only shifts each score row by a constant, which softmax
        # ignores, so it would be a parameter with identically zero gradient.
        self.k = nn.Linear(model_dim, model_dim, bias=False)
        self.v = nn.Linear(model_dim, model_dim)
        self.out = nn.Linear(model_dim, model_dim)
        self.norm = nn.LayerNorm(model_dim)

    def attention(self, x: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Per-head attention weights ``[..., e, L, L]``; rows sum to one."""
        *lead, L, m = x.shape
        q = self.q(x).view(*lead, L, self.heads, self.d_k).transpose(-2, -3)
        k = self.k(x).view(*lead, L, self.heads, self.d_k).transpose(-2, -3)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_k)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[..., None, None, :], float("-inf"))
        return torch.softmax(scores, dim=-1)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
        *lead, L, m = x.shape
        attn = self.attention(x, key_mask)
        v = self.v(x).view(*lead, L, self.heads, self.d_k).transpose(-2, -3)
        heads = (attn @ v).transpose(-2, -3).reshape(*lead, L, m)
        return self.norm(self.out(heads) + x)


class MHSA(nn.Module):
    """``H`` stacked self-attention blocks. No positional information is added."""

    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(SelfAttentionLayer(cfg.model_dim, cfg.heads) for _ in range(cfg.layers))

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None = None) -> torch.Tensor:
        if x.shape[-2] == 0:
            raise ValueError("self-attention over an empty sequence")
        if x.shape[-1] != self.cfg.model_dim:
            raise ConfigError(f"expected model_dim {self.cfg.model_dim}, got {x.shape[-1]}")
        for block in self.blocks:
            x = block(x, key_mask)
        return x


def mhsa(x: torch.Tensor, module: MHSA, key_mask: torch.Tensor | None = None) -> torch.Tensor:
    return module(x, key_mask)
