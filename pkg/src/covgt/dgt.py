"""Dynamic graph transformer: temporal node/edge attention, spatial graph
convolution and hierarchical aggregation of one clip into one vector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import MHSA, AttentionConfig
from .errors import ConfigError
from .graph import AdjacencyInit

FrameHook = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class DgtOutput:
    clip_vectors: torch.Tensor  # [..., k, d]
    frame_vectors: torch.Tensor  # [..., k, l_c, d]
    aux: dict = field(default_factory=dict)


class NodeTransformer(nn.Module):
    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.mhsa = MHSA(cfg)

    def forward(self, nodes: torch.Tensor) -> torch.Tensor:
        """``nodes`` is ``[..., l_c, n, d]``; attention runs along time per object."""
        tracks = nodes.transpose(-2, -3)
        return self.mhsa(tracks).transpose(-2, -3)


def node_transformer(track: torch.Tensor, module: NodeTransformer) -> torch.Tensor:
    """Apply the node transformer to a single object track ``[l_c, d]``."""
    return module.mhsa(track)


class EdgeTransformer(nn.Module):
    def __init__(self, n: int, cfg: AttentionConfig, renorm: bool = True):
        super().__init__()
        if cfg.model_dim != n * n:
            raise ConfigError(f"edge transformer width must be n^2={n * n}, got {cfg.model_dim}")
        self.n = n
        self.renorm = renorm
        self.mhsa = MHSA(cfg)

    @staticmethod
    def expand(R: torch.Tensor) -> torch.Tensor:
        return R.reshape(*R.shape[:-2], R.shape[-1] * R.shape[-2])

    def collapse(self, flat: torch.Tensor) -> torch.Tensor:
        return flat.reshape(*flat.shape[:-1], self.n, self.n)

    def forward(self, R: torch.Tensor) -> torch.Tensor:
        """``R`` is ``[..., l_c, n, n]``."""
        out = self.collapse(self.mhsa(self.expand(R)))
        return torch.softmax(out, dim=-1) if self.renorm else out


def edge_transformer(R_stack: torch.Tensor, module: EdgeTransformer) -> torch.Tensor:
    return module(R_stack)


class SpatialGraphConv(nn.Module):
    """``U`` layers of ``ReLU((R' + I) F W)`` followed by a skip connection."""

    def __init__(self, d: int, layers: int = 2):
        super().__init__()
        if layers < 1:
            raise ConfigError("graph convolution needs at least one layer")
        self.weights = nn.ParameterList(nn.Parameter(torch.empty(d, d)) for _ in range(layers))
        for w in self.weights:
            nn.init.xavier_uniform_(w)

    def forward(self, nodes: torch.Tensor, R: torch.Tensor) -> torch.Tensor:
        A = R + torch.eye(R.shape[-1], dtype=R.dtype, device=R.device)
        h = nodes
        for w in self.weights:
            h = F.relu(A @ h @ w)
        return nodes + h


def spatial_graph_conv(nodes: torch.Tensor, R: torch.Tensor, module: SpatialGraphConv) -> torch.Tensor:
    return module(nodes, R)


class FrameAggregate(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.score = nn.Linear(d, 1, bias=False)

    def weights(self, nodes: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.score(nodes).squeeze(-1), dim=-1)

    def forward(self, nodes: torch.Tensor) -> torch.Tensor:
        alpha = self.weights(nodes)
        return (alpha.unsqueeze(-1) * nodes).sum(-2)


def frame_aggregate(nodes: torch.Tensor, module: FrameAggregate) -> torch.Tensor:
    return module(nodes)


class FrameAppearanceFusion(nn.Module):
    def __init__(self, dim_a: int, d: int):
        super().__init__()
        self.dim_a, self.d = dim_a, d
        self.appearance = nn.Linear(dim_a, d)
        self.merge = nn.Linear(2 * d, d)

    def forward(self, f_G: torch.Tensor, f_a: torch.Tensor) -> torch.Tensor:
        if f_a.shape[-1] != self.dim_a or f_G.shape[-1] != self.d:
            raise ConfigError(f"fusion expects appearance dim {self.dim_a} and graph dim {self.d}, "
                              f"got {f_a.shape[-1]} and {f_G.shape[-1]}")
        return F.elu(self.merge(torch.cat([self.appearance(f_a), f_G], dim=-1)))


def fuse_frame_appearance(f_G: torch.Tensor, f_a: torch.Tensor, module: FrameAppearanceFusion) -> torch.Tensor:
    return module(f_G, f_a)


def clip_pool(frames: torch.Tensor) -> torch.Tensor:
    """Mean over the frame axis (second to last)."""
    if frames.shape[-2] < 1:
        raise ValueError("clip has no frames")
    return frames.mean(dim=-2)


class DynamicGraphTransformer(nn.Module):
    """NTrans -> adjacency update -> ETrans -> graph conv -> aggregation.

    ``use_ntrans``/``use_etrans`` switch off the temporal sub-units; the
    parameters of a disabled unit are not created.
    """

    def __init__(self, d: int, n: int, dim_a: int, layers: int = 1, heads: int = 8, edge_heads: int = 5,
                 gcn_layers: int = 2, use_ntrans: bool = True, use_etrans: bool = True,
                 edge_renorm: bool = True):
        super().__init__()
        if (n * n) % edge_heads:
            raise ConfigError(
                f"edge transformer heads ({edge_heads}) must divide n^2 = {n * n}; "
                f"pick a divisor of {n * n} for edge_heads or change the region count n")
        self.n = n
        self.adjacency = AdjacencyInit(d)
        self.node_trans = NodeTransformer(AttentionConfig(layers, heads, d)) if use_ntrans else None
        self.edge_trans = (EdgeTransformer(n, AttentionConfig(layers, edge_heads, n * n), edge_renorm)
                           if use_etrans else None)
        self.gcn = SpatialGraphConv(d, gcn_layers)
        self.aggregate = FrameAggregate(d)
        self.fuse = FrameAppearanceFusion(dim_a, d)

    def forward(self, nodes: torch.Tensor, appearance: torch.Tensor, frame_hook: FrameHook | None = None,
                keep_aux: bool = False) -> DgtOutput:
        """``nodes`` ``[..., k, l_c, n, d]``, ``appearance`` ``[..., k, l_c, dim_a]``."""
        aux = {}
        if keep_aux:
            aux["R_init"] = self.adjacency(nodes)
        if self.node_trans is not None:
            nodes = self.node_trans(nodes)
        R = self.adjacency(nodes)
        if keep_aux:
            aux["R_updated"] = R
        if self.edge_trans is not None:
            R = self.edge_trans(R)
        if keep_aux:
            aux["R_edge"] = R
        out = self.gcn(nodes, R)
        if keep_aux:
            aux["alpha"] = self.aggregate.weights(out)
        f_G = self.fuse(self.aggregate(out), appearance)
        if frame_hook is not None:
            f_G = frame_hook(f_G)
        return DgtOutput(clip_vectors=clip_pool(f_G), frame_vectors=f_G, aux=aux)


def mean_pool_regions(nodes: torch.Tensor) -> DgtOutput:
    """The no-DGT ablation: clip vector = mean of region embeddings."""
    frames = nodes.mean(dim=-2)
    return DgtOutput(clip_vectors=clip_pool(frames), frame_vectors=frames)


def dgt_forward(nodes: torch.Tensor, appearance: torch.Tensor, module: DynamicGraphTransformer | None,
                interaction_hook: FrameHook | None = None) -> DgtOutput:
    if module is None:
        return mean_pool_regions(nodes)
    return module(nodes, appearance, frame_hook=interaction_hook)
