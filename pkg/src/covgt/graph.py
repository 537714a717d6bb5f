"""Visual graph construction: detection linking, object embedding, adjacency."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, InvalidDetectionError


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float
    frame_w: float | None = None
    frame_h: float | None = None

    @property
    def area(self) -> float:
        return max(0.0, self.x2 - self.x1) * max(0.0, self.y2 - self.y1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


@dataclass(frozen=True)
class RegionDetection:
    appearance: np.ndarray
    box: BoundingBox
    confidence: float = 1.0


@dataclass
class ClipDetections:
    frames: list[list[RegionDetection]]

    @property
    def length(self) -> int:
        return len(self.frames)


@dataclass
class ClipGraph:
    node_features: torch.Tensor  # [l_c, n, d]
    adjacency: torch.Tensor  # [l_c, n, n]
    alignment: list[np.ndarray]


def _box_area(b: np.ndarray) -> float:
    return float(max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1]))


def iou_arrays(a: np.ndarray, b: np.ndarray) -> float:
    """IoU for two ``(x1, y1, x2, y2)`` arrays."""
    area_a, area_b = _box_area(a), _box_area(b)
    if area_a <= 0 or area_b <= 0:
        raise InvalidDetectionError(f"degenerate box with zero area: {a if area_a <= 0 else b}")
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(inter / (area_a + area_b - inter))


def compute_iou(a: BoundingBox, b: BoundingBox) -> float:
    return iou_arrays(a.as_array(), b.as_array())


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise InvalidDetectionError("cosine similarity undefined for a zero-norm feature vector")
    return float(np.dot(u, v) / (nu * nv))


def linking_score(f_i, b_i: BoundingBox, f_j, b_j: BoundingBox, gamma: float = 1.0) -> float:
    """Appearance cosine plus ``gamma``-weighted box IoU."""
    return cosine(np.asarray(f_i, dtype=np.float64), np.asarray(f_j, dtype=np.float64)) + gamma * compute_iou(b_i, b_j)


def linking_matrix(feats_t: np.ndarray, boxes_t: np.ndarray, feats_u: np.ndarray, boxes_u: np.ndarray,
                   gamma: float = 1.0) -> np.ndarray:
    """Score matrix ``S[i, j]`` between objects of frame t and detections of frame t+1."""
    n_t, n_u = len(feats_t), len(feats_u)
    S = np.empty((n_t, n_u))
    for i in range(n_t):
        for j in range(n_u):
            S[i, j] = cosine(feats_t[i], feats_u[j]) + gamma * iou_arrays(boxes_t[i], boxes_u[j])
    return S


def greedy_assign(S: np.ndarray) -> np.ndarray:
    """Greedy max matching. Returns ``perm`` with ``perm[slot] = detection``.

    The highest remaining pair is taken first. Exact ties go to the lowest
    detection index, then the lowest slot index.
    """
    n_slots, n_dets = S.shape
    order = sorted(((-S[i, j], j, i) for i in range(n_slots) for j in range(n_dets)))
    perm = np.full(n_slots, -1, dtype=np.int64)
    used_dets: set[int] = set()
    for _, j, i in order:
        if perm[i] >= 0 or j in used_dets:
            continue
        perm[i] = j
        used_dets.add(j)
        if len(used_dets) == min(n_slots, n_dets):
            break
    return perm


def align_clip_arrays(feats: np.ndarray, boxes: np.ndarray, gamma: float = 1.0) -> list[np.ndarray]:
    """Link every frame of a clip to the first-frame anchors.

    ``feats`` is ``[l_c, n, dim_r]`` and ``boxes`` ``[l_c, n, 4]``. Linking runs
    between consecutive frames, each new frame matched against the already
    aligned previous frame.
    """
    l_c, n = feats.shape[:2]
    alignment = [np.arange(n, dtype=np.int64)]
    for t in range(1, l_c):
        prev = alignment[-1]
        S = linking_matrix(feats[t - 1][prev], boxes[t - 1][prev], feats[t], boxes[t], gamma)
        alignment.append(greedy_assign(S))
    return alignment


def select_top_detections(dets: Sequence[RegionDetection], n: int) -> list[RegionDetection]:
    """Keep the ``n`` most confident detections, padding with the best one."""
    if not dets:
        raise InvalidDetectionError("frame has no detections to pad from")
    ranked = sorted(dets, key=lambda d: -d.confidence)[:n]
    while len(ranked) < n:
        ranked.append(ranked[0])
    return ranked


def clip_to_arrays(clip: ClipDetections, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    if n is None:
        n = max(len(f) for f in clip.frames)
    frames = [select_top_detections(f, n) for f in clip.frames]
    feats = np.stack([np.stack([np.asarray(d.appearance, dtype=np.float64) for d in f]) for f in frames])
    boxes = np.stack([np.stack([d.box.as_array() for d in f]) for f in frames])
    return feats, boxes


def align_clip_objects(clip: ClipDetections, gamma: float = 1.0) -> list[np.ndarray]:
    n = max(len(f) for f in clip.frames)
    if any(len(f) != n for f in clip.frames):
        raise InvalidDetectionError("every frame must hold exactly n detections; pad with select_top_detections")
    feats, boxes = clip_to_arrays(clip, n)
    return align_clip_arrays(feats, boxes, gamma)


def relative_coords(boxes, frame_w: float, frame_h: float):
    """``(x1/W, y1/H, x2/W, y2/H, area/(W*H))`` for boxes in the last axis."""
    if isinstance(boxes, BoundingBox):
        boxes = boxes.as_array()
    boxes = np.asarray(boxes, dtype=np.float64)
    x1, y1, x2, y2 = (boxes[..., i] for i in range(4))
    area = (x2 - x1) * (y2 - y1) / (frame_w * frame_h)
    return np.stack([x1 / frame_w, y1 / frame_h, x2 / frame_w, y2 / frame_h, area], axis=-1)


class LocationEncoder(nn.Module):
    """1x1 convolution over relative coordinates, i.e. a per-box linear map."""

    def __init__(self, d_loc: int):
        super().__init__()
        self.proj = nn.Linear(5, d_loc, bias=False)

    def forward(self, rel: torch.Tensor) -> torch.Tensor:
        return self.proj(rel)


def encode_location(box: BoundingBox, encoder: LocationEncoder) -> torch.Tensor:
    if box.frame_w is None or box.frame_h is None:
        raise InvalidDetectionError("box lacks frame dimensions")
    rel = torch.as_tensor(relative_coords(box, box.frame_w, box.frame_h), dtype=encoder.proj.weight.dtype)
    return encoder(rel)


class ObjectEmbedder(nn.Module):
    def __init__(self, dim_r: int, d_loc: int, d: int):
        super().__init__()
        self.dim_r, self.d_loc = dim_r, d_loc
        self.proj = nn.Linear(dim_r + d_loc, d)

    def forward(self, f_r: torch.Tensor, f_loc: torch.Tensor) -> torch.Tensor:
        if f_r.shape[-1] != self.dim_r or f_loc.shape[-1] != self.d_loc:
            raise ConfigError(
                f"object embedding expects appearance dim {self.dim_r} and location dim {self.d_loc}, "
                f"got {f_r.shape[-1]} and {f_loc.shape[-1]}")
        return F.elu(self.proj(torch.cat([f_r, f_loc], dim=-1)), alpha=1.0)


def embed_objects(f_r: torch.Tensor, f_loc: torch.Tensor, embedder: ObjectEmbedder) -> torch.Tensor:
    return embedder(f_r, f_loc)


class AdjacencyInit(nn.Module):
    """Row-softmax of asymmetric pairwise similarities between nodes."""

    def __init__(self, d: int):
        super().__init__()
        if d % 2:
            raise ConfigError(f"model dim d={d} must be even for the d/2 relation projections")
        self.key = nn.Linear(d, d // 2, bias=False)
        self.value = nn.Linear(d, d // 2, bias=False)

    def forward(self, nodes: torch.Tensor) -> torch.Tensor:
        logits = self.key(nodes) @ self.value(nodes).transpose(-1, -2)
        return torch.softmax(logits, dim=-1)


def init_adjacency(nodes: torch.Tensor, adj: AdjacencyInit) -> torch.Tensor:
    return adj(nodes)


def build_clip_graph(clip: ClipDetections, loc_encoder: LocationEncoder, embedder: ObjectEmbedder,
                     adj: AdjacencyInit, gamma: float = 1.0) -> ClipGraph:
    """Align a clip's detections and build one graph per frame."""
    alignment = align_clip_objects(clip, gamma)
    feats, boxes = clip_to_arrays(clip)
    feats = np.stack([feats[t][alignment[t]] for t in range(len(alignment))])
    boxes = np.stack([boxes[t][alignment[t]] for t in range(len(alignment))])
    ref = clip.frames[0][0].box
    if ref.frame_w is None or ref.frame_h is None:
        raise InvalidDetectionError("boxes lack frame dimensions")
    dtype = embedder.proj.weight.dtype
    rel = torch.as_tensor(relative_coords(boxes, ref.frame_w, ref.frame_h), dtype=dtype)
    nodes = embedder(torch.as_tensor(feats, dtype=dtype), loc_encoder(rel))
    return ClipGraph(node_features=nodes, adjacency=adj(nodes), alignment=alignment)


__all__ = [
    "BoundingBox", "RegionDetection", "ClipDetections", "ClipGraph", "compute_iou", "iou_arrays", "cosine",
    "linking_score", "linking_matrix", "greedy_assign", "align_clip_arrays", "align_clip_objects",
    "select_top_detections", "relative_coords", "LocationEncoder", "encode_location", "ObjectEmbedder",
    "embed_objects", "AdjacencyInit", "init_adjacency", "build_clip_graph",
]

