"""Turning packs and manifests into model-ready tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..errors import DataError
from ..graph import align_clip_arrays, relative_coords
from ..objectives import NegativeQuestionSampler, QuestionRecord, sample_negative_answers
from ..text import (Vocabulary, build_answer, build_qa_pair, build_question, mlm_corrupt, pad_sequences,
                    tokenize)
from .featurepack import VideoFeaturePack
from .manifest import QASample
from .sampling import sample_frames


@dataclass
class VideoTensors:
    region: np.ndarray  # [k, l_c, n, dim_r]
    rel: np.ndarray  # [k, l_c, n, 5]
    appearance: np.ndarray  # [k, l_c, dim_a]


def prepare_video(pack: VideoFeaturePack, n: int, l_v: int, k: int, gamma: float = 1.0) -> VideoTensors:
    """Sample frames, keep the top-n regions and align objects within each clip."""
    pack.validate(n)
    clips = sample_frames(pack.frame_count, l_v, k)
    region, rel, app = [], [], []
    for idx in clips:
        feats = pack.region_features[idx, :n].astype(np.float64)
        boxes = pack.boxes[idx, :n].astype(np.float64)
        align = align_clip_arrays(feats, boxes, gamma)
        feats = np.stack([feats[t][a] for t, a in enumerate(align)])
        boxes = np.stack([boxes[t][a] for t, a in enumerate(align)])
        region.append(feats)
        rel.append(relative_coords(boxes, pack.frame_w, pack.frame_h))
        app.append(pack.frame_appearance[idx])
    return VideoTensors(np.stack(region).astype(np.float32), np.stack(rel).astype(np.float32),
                        np.stack(app).astype(np.float32))


class QADataset:
    """Samples for one split together with their prepared videos.

    Multi-choice samples are collated with their QA-pair encodings, open-ended
    ones with the global answer id. Negative questions and resampled
    distractors are drawn at collate time from the generator passed in.
    """

    def __init__(self, samples: Sequence[QASample], videos: dict[str, VideoTensors], vocab: Vocabulary,
                 answer_set: Sequence[str] | None = None, answer_pool: Sequence[str] | None = None,
                 question_records: Sequence[QuestionRecord] | None = None,
                 hard_negative_mode: str = "type_parsed"):
        missing = sorted({s.video_id for s in samples} - set(videos))
        if missing:
            raise DataError(f"{len(missing)} videos missing features, e.g. {missing[:3]}")
        self.samples = list(samples)
        self.videos = videos
        self.vocab = vocab
        self.answer_set = list(answer_set) if answer_set is not None else None
        self.answer_pool = sorted(set(answer_pool if answer_pool is not None
                                      else (s.answer for s in self.samples)))
        records = question_records if question_records is not None else [
            QuestionRecord(s.qid, s.video_id, s.question, s.qtype) for s in self.samples]
        self.neg_sampler = NegativeQuestionSampler(records, hard_negative_mode)
        self._tok: dict[str, list[int]] = {}

    def __len__(self) -> int:
        return len(self.samples)

    def tok(self, text: str) -> list[int]:
        ids = self._tok.get(text)
        if ids is None:
            ids = self._tok[text] = tokenize(text, self.vocab)
        return ids

    def answer_tokens(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Encoded global answer set ``[|A|, M]`` for open-ended scoring."""
        if self.answer_set is None:
            raise DataError("dataset has no global answer set")
        built = [build_answer(self.tok(a), self.vocab) for a in self.answer_set]
        return _pack_with_spans(built, self.vocab.pad_id)

    def video_batch(self, batch: Sequence[QASample]) -> dict[str, torch.Tensor]:
        vids = [self.videos[s.video_id] for s in batch]
        return {
            "region": torch.from_numpy(np.stack([v.region for v in vids])),
            "rel": torch.from_numpy(np.stack([v.rel for v in vids])),
            "appearance": torch.from_numpy(np.stack([v.appearance for v in vids])),
        }

    def collate(self, batch: Sequence[QASample], rng: np.random.Generator | None = None,
                n_neg_questions: int = 0, resample_p: float = 0.0) -> dict[str, torch.Tensor]:
        out = self.video_batch(batch)
        out["correct"] = torch.tensor([s.correct for s in batch], dtype=torch.long)
        questions = []
        for s in batch:
            qs = [s.question]
            if n_neg_questions and rng is not None:
                rec = QuestionRecord(s.qid, s.video_id, s.question, s.qtype)
                negs, _ = self.neg_sampler.sample(rec, n_neg_questions, rng)
                qs.extend(negs)
            questions.append(qs)
        n_q = max(len(q) for q in questions)
        flat = [build_question(self.tok(q), self.vocab) for qs in questions for q in qs + [qs[0]] * (n_q - len(qs))]
        ids, mask, span = _pack_with_spans(flat, self.vocab.pad_id)
        out["q_ids"], out["q_mask"], out["q_span"] = (t.view(len(batch), n_q, -1) for t in (ids, mask, span))
        if batch[0].multichoice:
            cands = []
            for s in batch:
                c = list(s.candidates)
                if resample_p > 0 and rng is not None:
                    c, _ = sample_negative_answers(c, s.correct, self.answer_pool, rng, resample_p)
                cands.append(c)
            n_c = len(cands[0])
            if any(len(c) != n_c for c in cands):
                raise DataError("candidate counts differ within a batch")
            qa = [build_qa_pair(self.tok(s.question), self.tok(a), self.vocab) for s, c in zip(batch, cands)
                  for a in c]
            ids, mask, span = _pack_with_spans(qa, self.vocab.pad_id)
            out["qa_ids"], out["qa_mask"], out["qa_span"] = (t.view(len(batch), n_c, -1) for t in (ids, mask, span))
            ans = [build_answer(self.tok(a), self.vocab) for c in cands for a in c]
            ids, mask, span = _pack_with_spans(ans, self.vocab.pad_id)
            out["ans_ids"], out["ans_mask"], out["ans_span"] = (t.view(len(batch), n_c, -1)
                                                                for t in (ids, mask, span))
        return out


def _pack_with_spans(built: Sequence[tuple[list[int], list[int]]], pad_id: int):
    ids, mask = pad_sequences([b[0] for b in built], pad_id)
    span = torch.zeros_like(mask)
    for i, (_, positions) in enumerate(built):
        span[i, positions] = True
    return ids, mask, span


def mlm_batch(texts: Sequence[str], vocab: Vocabulary, rng: np.random.Generator, rate: float = 0.15
              ) -> dict[str, torch.Tensor]:
    """Corrupted ``[CLS] text`` sequences with their original ids and target mask."""
    originals, corrupted, targets = [], [], []
    for t in texts:
        ids, _ = build_question(tokenize(t, vocab), vocab)
        bad, pos = mlm_corrupt(ids, rng, len(vocab), vocab.mask_id, vocab.special_ids, rate)
        originals.append(ids)
        corrupted.append(bad)
        targets.append(pos)
    orig, mask = pad_sequences(originals, vocab.pad_id)
    bad, _ = pad_sequences(corrupted, vocab.pad_id, length=orig.shape[1])
    tmask = torch.zeros_like(mask)
    for i, pos in enumerate(targets):
        tmask[i, pos] = True
    return {"mlm_ids": bad, "mlm_mask": mask, "mlm_targets": orig, "mlm_target_mask": tmask}
