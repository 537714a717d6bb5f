"""Toy language encoder, token projection, answer pooling and MLM corruption."""

from __future__ import annotations

import re
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import MHSA, AttentionConfig
from .errors import ConfigError, DataError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


class MLMNoTargetsWarning(UserWarning):
    pass


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Dense token table. Special tokens always occupy ids 0-4."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, texts: Iterable[str], min_freq: int = 1) -> "Vocabulary":
        counts = Counter(w for t in texts for w in split_words(t))
        return cls(sorted(w for w, c in counts.items() if c >= min_freq and w not in SPECIALS))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def unk_id(self) -> int:
        return self.stoi[UNK]

    @property
    def cls_id(self) -> int:
        return self.stoi[CLS]

    @property
    def sep_id(self) -> int:
        return self.stoi[SEP]

    @property
    def mask_id(self) -> int:
        return self.stoi[MASK]

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIALS)))

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(SPECIALS)]) != SPECIALS:
            raise DataError(f"{path}: vocabulary must start with {SPECIALS}")
        return cls(lines[len(SPECIALS):])


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.stoi.get(w, vocab.unk_id) for w in split_words(text)]


@dataclass
class TextEncoding:
    token_ids: torch.Tensor  # [..., M]
    mask: torch.Tensor  # [..., M] True on real tokens
    token_reps: torch.Tensor  # [..., M, d]
    answer_span: torch.Tensor | None = None  # [..., M] True on pooled positions


class TextEncoder(nn.Module):
    """Small transformer encoder standing in for a pretrained language model.

    Any module exposing ``out_dim`` and ``forward(ids, mask) -> [..., M, out_dim]``
    can replace it.
    """

    def __init__(self, vocab_size: int, d_lang: int = 64, layers: int = 2, heads: int = 4, max_len: int = 64):
        super().__init__()
        self.out_dim = d_lang
        self.max_len = max_len
        self.tokens = nn.Embedding(vocab_size, d_lang)
        self.positions = nn.Embedding(max_len, d_lang)
        self.norm = nn.LayerNorm(d_lang)
        self.mhsa = MHSA(AttentionConfig(layers, heads, d_lang))

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        M = ids.shape[-1]
        if M < 1:
            raise ValueError("cannot encode an empty token sequence")
        if M > self.max_len:
            raise ConfigError(f"sequence length {M} exceeds max_len={self.max_len}")
        pos = torch.arange(M, device=ids.device)
        x = self.norm(self.tokens(ids) + self.positions(pos))
        return self.mhsa(x, key_mask=mask)


def encode_text(ids: torch.Tensor, mask: torch.Tensor, encoder: nn.Module) -> torch.Tensor:
    return encoder(ids, mask)


def project_tokens(token_reps: torch.Tensor, projection: nn.Linear) -> torch.Tensor:
    return projection(token_reps)


def pool_answer(reps: torch.Tensor, span: torch.Tensor) -> torch.Tensor:
    """Mean of ``reps [..., M, d]`` over positions where ``span`` is True."""
    counts = span.sum(-1, keepdim=True)
    if bool((counts == 0).any()):
        raise ValueError("answer span is empty")
    weights = span.to(reps.dtype) / counts.to(reps.dtype)
    return (weights.unsqueeze(-1) * reps).sum(-2)


def pad_sequences(seqs: Sequence[Sequence[int]], pad_id: int = 0, length: int | None = None
                  ) -> tuple[torch.Tensor, torch.Tensor]:
    length = length or max(1, max(len(s) for s in seqs))
    ids = torch.full((len(seqs), length), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return ids, ids != pad_id


def build_question(question: Sequence[int], vocab: Vocabulary) -> tuple[list[int], list[int]]:
    """``[CLS] q`` and the positions pooled into the question vector."""
    ids = [vocab.cls_id, *question]
    return ids, list(range(1, len(ids)))


def build_qa_pair(question: Sequence[int], answer: Sequence[int], vocab: Vocabulary
                  ) -> tuple[list[int], list[int]]:
    """``[CLS] q [SEP] a`` and the answer-span positions."""
    ids = [vocab.cls_id, *question, vocab.sep_id, *answer]
    start = len(question) + 2
    return ids, list(range(start, len(ids)))


def build_answer(answer: Sequence[int], vocab: Vocabulary) -> tuple[list[int], list[int]]:
    ids = [vocab.cls_id, *answer]
    return ids, list(range(1, len(ids)))


def mlm_corrupt(ids: Sequence[int], rng: np.random.Generator, vocab_size: int, mask_id: int,
                special_ids: Iterable[int] = (), rate: float = 0.15, p_mask: float = 0.8,
                p_random: float = 0.1) -> tuple[list[int], list[int]]:
    """Corrupt non-special tokens independently at ``rate``.

    A corrupted token becomes ``[MASK]`` with probability ``p_mask``, a uniform
    random non-special token with ``p_random``, and stays put otherwise.
    Returns the corrupted sequence and the corrupted positions.
    """
    ids = list(ids)
    if not ids:
        return [], []
    special = frozenset(special_ids) | {mask_id}
    normal = np.array([i for i in range(vocab_size) if i not in special])
    corrupted, targets = list(ids), []
    draws = rng.random(len(ids))
    kinds = rng.random(len(ids))
    replacements = rng.integers(0, len(normal), size=len(ids))
    for pos, tok in enumerate(ids):
        if tok in special or draws[pos] >= rate:
            continue
        targets.append(pos)
        if kinds[pos] < p_mask:
            corrupted[pos] = mask_id
        elif kinds[pos] < p_mask + p_random:
            corrupted[pos] = int(normal[replacements[pos]])
    return corrupted, targets


class MLMHead(nn.Module):
    def __init__(self, d_lang: int, vocab_size: int):
        super().__init__()
        self.proj = nn.Linear(d_lang, vocab_size)

    def forward(self, reps: torch.Tensor) -> torch.Tensor:
        return self.proj(reps)


def mlm_loss(token_reps: torch.Tensor, target_ids: torch.Tensor, target_mask: torch.Tensor,
             head: nn.Module | None = None) -> torch.Tensor:
    """Mean cross-entropy over the masked-out positions.

    ``token_reps`` is ``[..., M, d]`` (or logits when ``head`` is None),
    ``target_ids`` the original ids and ``target_mask`` marks target positions.
    """
    logits = head(token_reps) if head is not None else token_reps
    if not bool(target_mask.any()):
        warnings.warn("mlm_loss called without target positions", MLMNoTargetsWarning, stacklevel=2)
        return logits.sum() * 0.0
    return F.cross_entropy(logits[target_mask], target_ids[target_mask])
