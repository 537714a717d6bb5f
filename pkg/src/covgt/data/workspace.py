"""On-disk dataset layout and the in-memory corpus the trainer consumes.

A workspace directory holds::

    packs/<video_id>.cvgt     one feature pack per video
    <split>.jsonl             one manifest per split
    answers.txt               global answer set, one per line (open-ended id order)
    vocab.txt                 tokenizer vocabulary
    captions.jsonl            optional {"video_id", "caption"} rows for pretraining
    world.json                generator settings, seed and task kind
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DataError
from ..text import Vocabulary
from .dataset import QADataset, VideoTensors, prepare_video
from .featurepack import VideoFeaturePack, load_feature_pack, write_feature_pack
from .manifest import QASample, read_manifest, write_manifest
from .synthetic import SyntheticDataset, spec_to_dict


@dataclass
class Corpus:
    """Everything needed to train and evaluate on one task."""

    task: str  # "multichoice" or "openended"
    vocab: Vocabulary
    videos: dict[str, VideoTensors]
    splits: dict[str, list[QASample]]
    answer_set: list[str]
    captions: dict[str, str] = field(default_factory=dict)
    dim_r: int = 0
    dim_a: int = 0

    def split(self, name: str) -> list[QASample]:
        if name not in self.splits:
            raise DataError(f"split {name!r} not found; available: {sorted(self.splits)}")
        return self.splits[name]

    def dataset(self, name: str, hard_negative_mode: str = "type_parsed") -> QADataset:
        samples = self.split(name)
        pool = sorted({s.answer for s in self.splits.get("train", samples)})
        return QADataset(samples, self.videos, self.vocab, self.answer_set, pool,
                         hard_negative_mode=hard_negative_mode)


def _prepare_all(packs: dict[str, VideoFeaturePack], n: int, l_v: int, k: int, gamma: float
                 ) -> dict[str, VideoTensors]:
    return {vid: prepare_video(p, n, l_v, k, gamma) for vid, p in packs.items()}


def corpus_from_synthetic(ds: SyntheticDataset, n: int, k: int, l_c: int, gamma: float = 1.0,
                          vocab: Vocabulary | None = None) -> Corpus:
    """Build a corpus straight from a generated dataset, skipping the disk."""
    vocab = vocab or Vocabulary.build(ds.texts())
    open_ended = any(not s.multichoice for qa in ds.samples.values() for s in qa)
    return Corpus(task="openended" if open_ended else "multichoice", vocab=vocab,
                  videos=_prepare_all(ds.packs, n, k * l_c, k, gamma), splits=dict(ds.samples),
                  answer_set=list(ds.answer_set), captions=dict(ds.captions),
                  dim_r=ds.spec.dim_r, dim_a=ds.spec.dim_a)


def write_workspace(ds: SyntheticDataset, root) -> Path:
    root = Path(root)
    (root / "packs").mkdir(parents=True, exist_ok=True)
    for vid, pack in sorted(ds.packs.items()):
        write_feature_pack(pack, root / "packs" / f"{vid}.cvgt")
    for split, samples in ds.samples.items():
        write_manifest(samples, root / f"{split}.jsonl")
    (root / "answers.txt").write_text("".join(a + "\n" for a in ds.answer_set), encoding="utf-8")
    Vocabulary.build(ds.texts()).save(root / "vocab.txt")
    with open(root / "captions.jsonl", "w", encoding="utf-8") as fh:
        for vid, cap in sorted(ds.captions.items()):
            fh.write(json.dumps({"video_id": vid, "caption": cap}) + "\n")
    open_ended = any(not s.multichoice for qa in ds.samples.values() for s in qa)
    world = {"seed": ds.seed, "task": "openended" if open_ended else "multichoice",
             "splits": {k: len(v) for k, v in ds.samples.items()}, "leak_accuracy": ds.leak_accuracy,
             "spec": spec_to_dict(ds.spec)}
    (root / "world.json").write_text(json.dumps(world, indent=2, sort_keys=True), encoding="utf-8")
    return root


def load_workspace(root, n: int, k: int, l_c: int, gamma: float = 1.0) -> Corpus:
    root = Path(root)
    if not (root / "vocab.txt").exists():
        raise DataError(f"{root} is not a workspace (vocab.txt missing)")
    vocab = Vocabulary.load(root / "vocab.txt")
    answers = [a for a in (root / "answers.txt").read_text(encoding="utf-8").splitlines() if a]
    splits = {p.stem: read_manifest(p) for p in sorted(root.glob("*.jsonl")) if p.stem != "captions"}
    captions = {}
    cap_path = root / "captions.jsonl"
    if cap_path.exists():
        for line in cap_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                captions[row["video_id"]] = row["caption"]
    needed = {s.video_id for qa in splits.values() for s in qa} | set(captions)
    packs = {}
    for vid in sorted(needed):
        path = root / "packs" / f"{vid}.cvgt"
        if not path.exists():
            raise DataError(f"feature pack for video {vid!r} missing at {path}")
        packs[vid] = load_feature_pack(path)
    first = next(iter(packs.values()), None)
    task = "multichoice"
    world = root / "world.json"
    if world.exists():
        task = json.loads(world.read_text(encoding="utf-8")).get("task", task)
    return Corpus(task=task, vocab=vocab, videos=_prepare_all(packs, n, k * l_c, k, gamma), splits=splits,
                  answer_set=answers, captions=captions, dim_r=first.dim_r if first else 0,
                  dim_a=first.dim_a if first else 0)
