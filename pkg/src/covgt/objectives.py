"""Contrastive objectives, negative mining and question-type parsing."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import torch

from .errors import DataError
from .text import split_words


class QuestionType(str, Enum):
    WHY = "why"
    WHAT = "what"
    WHERE = "where"
    WHICH = "which"
    WHO = "who"
    HOW = "how"
    HOW_MANY = "how-many"
    HOW_TIMES = "how-times"
    OTHER = "other"


_WH = {"why", "what", "where", "which", "who", "how"}
HARD_NEGATIVE_MODES = ("type_parsed", "type_ground_truth", "random")


def parse_question_type(question: str) -> QuestionType:
    """Label a question from its first three words."""
    words = split_words(question)[:3]
    for i, w in enumerate(words):
        if w not in _WH:
            continue
        if w == "how":
            rest = words[i + 1:]
            if "times" in rest:
                return QuestionType.HOW_TIMES
            if "many" in rest:
                return QuestionType.HOW_MANY
        return QuestionType(w)
    return QuestionType.OTHER


@dataclass
class ContrastBatch:
    anchor: torch.Tensor  # [B, d]
    positive: torch.Tensor  # [B, d]
    negatives: torch.Tensor  # [B, N, d]

    def __post_init__(self):
        if self.negatives.shape[-2] < 1:
            raise ValueError("contrastive batch needs at least one negative")


def similarity(f_qv: torch.Tensor, f_text: torch.Tensor) -> torch.Tensor:
    """Dot product of the query-aware video vector and a pooled text vector."""
    return (f_qv * f_text).sum(-1)


def info_nce_scores(pos: torch.Tensor, neg: torch.Tensor, neg_mask: torch.Tensor | None = None) -> torch.Tensor:
    """``-mean log(e^pos / (e^pos + sum e^neg))`` with log-sum-exp.

    ``pos`` is ``[B]``, ``neg`` ``[B, N]``; ``neg_mask`` drops padded negatives.
    """
    if neg_mask is not None:
        neg = neg.masked_fill(~neg_mask, float("-inf"))
    logits = torch.cat([pos.unsqueeze(-1), neg], dim=-1)
    return (torch.logsumexp(logits, dim=-1) - pos).mean()


def info_nce(batch: ContrastBatch) -> torch.Tensor:
    pos = similarity(batch.anchor, batch.positive)
    neg = similarity(batch.anchor.unsqueeze(-2), batch.negatives)
    return info_nce_scores(pos, neg)


def choice_info_nce(scores: torch.Tensor, correct: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """InfoNCE where row ``b`` of ``scores`` holds the positive at ``correct[b]``."""
    if bool((correct < 0).any()) or bool((correct >= scores.shape[-1]).any()):
        raise DataError("correct answer index outside the candidate/answer set")
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    pos = scores.gather(-1, correct.unsqueeze(-1)).squeeze(-1)
    return (torch.logsumexp(scores, dim=-1) - pos).mean()


def loss_multichoice(qa_scores: torch.Tensor, correct: torch.Tensor, q_pos: torch.Tensor | None = None,
                     q_neg: torch.Tensor | None = None, lam: float = 1.0,
                     qa_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Supervised QA term plus ``lam`` times the video-question term."""
    loss = choice_info_nce(qa_scores, correct, qa_mask)
    if lam and q_pos is not None and q_neg is not None and q_neg.shape[-1] > 0:
        loss = loss + lam * info_nce_scores(q_pos, q_neg)
    return loss


def loss_openended(answer_scores: torch.Tensor, answer_idx: torch.Tensor, q_pos: torch.Tensor | None = None,
                   q_neg: torch.Tensor | None = None, lam: float = 1.0) -> torch.Tensor:
    """Every other answer in the global set acts as a negative."""
    return loss_multichoice(answer_scores, answer_idx, q_pos, q_neg, lam)


def sample_negative_answers(candidates: Sequence[str], correct: int, pool: Sequence[str],
                            rng: np.random.Generator, p: float = 0.3) -> tuple[list[str], int]:
    """Replace each distractor with probability ``p`` by another question's answer.

    Draws come uniformly from ``pool`` minus anything already among the
    candidates, so the correct answer is never duplicated. When nothing is
    eligible the original distractor stays. Returns the new list and the
    number of replacements.
    """
    out = list(candidates)
    replaced = 0
    pool = list(pool)
    for i in range(len(out)):
        if i == correct or rng.random() >= p:
            continue
        taken = set(out)
        eligible = [a for a in pool if a not in taken]
        if not eligible:
            continue
        out[i] = eligible[int(rng.integers(len(eligible)))]
        replaced += 1
    return out, replaced


@dataclass(frozen=True)
class QuestionRecord:
    qid: str
    video_id: str
    question: str
    qtype: str


class NegativeQuestionSampler:
    """Draws hard negative questions for the video-question objective.

    ``mode`` chooses the bucket key: the parsed question type, the dataset's
    own type label, or no bucketing at all.
    """

    def __init__(self, records: Iterable[QuestionRecord], mode: str = "type_parsed"):
        if mode not in HARD_NEGATIVE_MODES:
            raise ValueError(f"unknown hard negative mode {mode!r}")
        self.mode = mode
        self.records = list(records)
        self.by_type: dict[str, list[QuestionRecord]] = defaultdict(list)
        for r in self.records:
            self.by_type[self.key(r)].append(r)

    def key(self, r: QuestionRecord) -> str:
        if self.mode == "type_parsed":
            return parse_question_type(r.question).value
        if self.mode == "type_ground_truth":
            return r.qtype
        return "*"

    def sample(self, anchor: QuestionRecord, count: int, rng: np.random.Generator
               ) -> tuple[list[str], bool]:
        return sample_negative_questions(anchor, self.by_type, count, rng, key=self.key,
                                         everything=self.records)


def _eligible(records: Iterable[QuestionRecord], anchor: QuestionRecord) -> list[QuestionRecord]:
    return [r for r in records
            if r.qid != anchor.qid and r.video_id != anchor.video_id and r.question != anchor.question]


def sample_negative_questions(anchor: QuestionRecord, corpus_by_type: dict[str, list[QuestionRecord]],
                              count: int, rng: np.random.Generator, key=None,
                              everything: Sequence[QuestionRecord] | None = None) -> tuple[list[str], bool]:
    """Same-type questions from other videos; any-type fallback when the bucket is short.

    Returns the sampled question texts and whether the fallback engaged.
    """
    if count <= 0:
        return [], False
    if everything is None:
        everything = [r for bucket in corpus_by_type.values() for r in bucket]
    if len(everything) < count:
        raise DataError(f"corpus holds {len(everything)} questions, fewer than the {count} negatives requested")
    k = key(anchor) if key is not None else parse_question_type(anchor.question).value
    bucket = _eligible(corpus_by_type.get(k, []), anchor)
    fallback = False
    if len(bucket) < count:
        fallback = True
        bucket = _eligible(everything, anchor)
        if len(bucket) < count:
            raise DataError(f"only {len(bucket)} eligible negative questions for {anchor.qid}")
    picks = rng.choice(len(bucket), size=count, replace=False)
    return [bucket[int(i)].question for i in picks], fallback
