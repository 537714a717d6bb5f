"""Answer decoding, classification baselines and accuracy."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .attention import MHSA, AttentionConfig

CLASSIFIER_MODES = ("cmtrans_cls", "cm_cls")


@dataclass
class Prediction:
    chosen: int
    scores: list[float]


def _argmax(scores) -> int:
    # np.argmax returns the first maximal index, which is the tie-break we want
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def predict_multichoice(f_qv: torch.Tensor, F_A: torch.Tensor) -> Prediction:
    """Pick the candidate whose vector has the largest dot product with ``f_qv``.

    ``f_qv`` may be ``[d]`` or, in per-candidate pooling, ``[|A|, d]``.
    """
    if F_A.shape[0] < 2:
        raise ValueError("multi-choice prediction needs at least two candidates")
    scores = (F_A * f_qv).sum(-1) if f_qv.dim() == 2 else F_A @ f_qv
    scores = scores.detach().double().cpu().numpy()
    return Prediction(_argmax(scores), scores.tolist())


def predict_from_scores(scores) -> Prediction:
    scores = np.asarray(scores, dtype=np.float64)
    return Prediction(_argmax(scores), scores.tolist())


def predict_openended(f_qv: torch.Tensor, f_q: torch.Tensor, F_A: torch.Tensor,
                      use_qa_shortcut: bool = True) -> Prediction:
    """Joint decision: product of video-answer and question-answer similarities.

    Raw dot products are multiplied, so two negative similarities can produce
    a large positive score. With the shortcut off only the video scores count.
    """
    video = (F_A @ f_qv).detach().double()
    if not use_qa_shortcut:
        return predict_from_scores(video.cpu().numpy())
    question = (F_A @ f_q).detach().double()
    return predict_from_scores((video * question).cpu().numpy())


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not len(labels):
        return 0.0
    return float(np.mean(np.asarray(predictions) == np.asarray(labels)))


class CrossModalTransformerClassifier(nn.Module):
    """Video clip vectors and text tokens fused by self-attention; the start
    token's output is mapped to one score per QA pair."""

    def __init__(self, d: int, layers: int, heads: int, k_max: int = 16, n_classes: int = 1):
        super().__init__()
        self.modality = nn.Parameter(torch.zeros(2, d))
        self.clip_positions = nn.Parameter(torch.zeros(k_max, d))
        nn.init.normal_(self.modality, std=0.02)
        nn.init.normal_(self.clip_positions, std=0.02)
        self.mhsa = MHSA(AttentionConfig(layers, heads, d))
        self.classifier = nn.Linear(d, n_classes)

    def forward(self, clips: torch.Tensor, tokens: torch.Tensor, token_mask: torch.Tensor) -> torch.Tensor:
        """``clips`` ``[..., k, d]`` and ``tokens`` ``[..., M, d]`` with equal leading dims."""
        k = clips.shape[-2]
        seq = torch.cat([tokens + self.modality[0], clips + self.modality[1] + self.clip_positions[:k]], dim=-2)
        mask = torch.cat([token_mask, torch.ones(*clips.shape[:-1], dtype=torch.bool, device=clips.device)], -1)
        h = self.mhsa(seq, key_mask=mask)
        out = self.classifier(h[..., 0, :])
        return out.squeeze(-1) if out.shape[-1] == 1 else out


class CrossModalClassifier(nn.Module):
    """Maps each candidate's query-aware video vector to a scalar."""

    def __init__(self, d: int):
        super().__init__()
        self.classifier = nn.Linear(d, 1)

    def forward(self, per_candidate: torch.Tensor) -> torch.Tensor:
        return self.classifier(per_candidate).squeeze(-1)


def write_predictions(path, rows: Iterable[tuple[str, Prediction]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, pred in rows:
            fh.write(json.dumps({"qid": qid, "chosen": pred.chosen, "scores": pred.scores}) + "\n")


def read_predictions(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
