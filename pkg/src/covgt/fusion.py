"""Global transformer over clip vectors and parameter-free cross-modal interaction."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import MHSA, AttentionConfig
from .dgt import DgtOutput, clip_pool
from .errors import ConfigError

PLACEMENTS = ("clip", "frame+clip", "object", "none")
MC_POOLS = ("elementwise_max", "per_candidate")


@dataclass
class QueryAwareVideo:
    f_qv: torch.Tensor  # [..., d] or [..., A, d] in per-candidate mode
    per_candidate: torch.Tensor | None = None  # [..., A, d]


def cross_modal_interact(x_v: torch.Tensor, X_q: torch.Tensor, mask: torch.Tensor | None = None,
                         return_weights: bool = False):
    """Add token information to visual vectors.

    ``x_v`` is ``[..., P, d]`` (or a single ``[d]`` vector) and ``X_q`` is
    ``[..., M, d]`` with matching leading dims. Each visual vector gets
    ``x + sum_m beta_m x_m`` with ``beta = softmax(x . X_q)`` over the tokens.
    """
    if X_q.shape[-2] == 0:
        raise ValueError("cross-modal interaction needs at least one text token")
    single = x_v.dim() == 1
    if single:
        x_v = x_v.unsqueeze(0)
    logits = x_v @ X_q.transpose(-1, -2)
    if mask is not None:
        logits = logits.masked_fill(~mask.unsqueeze(-2), float("-inf"))
    beta = torch.softmax(logits, dim=-1)
    out = x_v + beta @ X_q
    if single:
        out, beta = out.squeeze(0), beta.squeeze(0)
    return (out, beta) if return_weights else out


def sinusoid_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(dim)[None, :]
    angle = pos / torch.pow(10000.0, (2 * (i // 2)).double() / dim)
    return torch.where(i % 2 == 0, torch.sin(angle), torch.cos(angle)).float()


class PositionTable(nn.Module):
    """Learned temporal positions, initialised with sinusoids."""

    def __init__(self, k_max: int, d: int):
        super().__init__()
        self.k_max = k_max
        self.embeddings = nn.Parameter(sinusoid_table(k_max, d))

    def forward(self, k: int) -> torch.Tensor:
        if k > self.k_max:
            raise ConfigError(f"{k} clips exceed the position table size k_max={self.k_max}")
        return self.embeddings[:k]


class GlobalTransformer(nn.Module):
    def __init__(self, cfg: AttentionConfig, k_max: int = 16):
        super().__init__()
        self.positions = PositionTable(k_max, cfg.model_dim)
        self.mhsa = MHSA(cfg)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        """``clips`` ``[..., k, d]`` -> mean-pooled ``[..., d]``."""
        k = clips.shape[-2]
        if k < 1:
            raise ValueError("global transformer needs at least one clip")
        h = self.mhsa(clips + self.positions(k).to(clips.dtype))
        return h.mean(dim=-2)


def global_encode(F_dgt: torch.Tensor, module: GlobalTransformer) -> torch.Tensor:
    return module(F_dgt)


def pool_multichoice_video(per_candidate: torch.Tensor, mode: str = "elementwise_max") -> torch.Tensor:
    """Combine ``[..., A, d]`` query-aware video vectors across candidates."""
    if mode == "elementwise_max":
        return per_candidate.max(dim=-2).values
    if mode == "per_candidate":
        return per_candidate
    raise ConfigError(f"unknown mc_pool {mode!r}; expected one of {MC_POOLS}")


def interact_at_level(dgt_out: DgtOutput, X_q: torch.Tensor, placement: str = "clip",
                      mask: torch.Tensor | None = None) -> DgtOutput:
    """Inject text tokens at the clip or frame+clip level of a DGT output.

    Frame-level interaction happens before the clip mean, so the clip vectors
    are re-pooled from the interacted frames. ``object`` placement works on
    node features before the DGT runs (see ``CoVGT``), so the output passes
    through here unchanged, as does ``none``.
    """
    if placement not in PLACEMENTS:
        raise ConfigError(f"unknown placement {placement!r}; expected one of {PLACEMENTS}")
    clips, frames = dgt_out.clip_vectors, dgt_out.frame_vectors
    count = 0
    if placement == "frame+clip":
        k, l_c, d = frames.shape[-3:]
        flat = cross_modal_interact(frames.reshape(*frames.shape[:-3], k * l_c, d), X_q, mask)
        frames = flat.reshape(frames.shape)
        clips = clip_pool(frames)
        count += k * l_c
    if placement in ("clip", "frame+clip"):
        clips = cross_modal_interact(clips, X_q, mask)
        count += clips.shape[-2]
    return DgtOutput(clip_vectors=clips, frame_vectors=frames, aux={**dgt_out.aux, "interactions": count})
