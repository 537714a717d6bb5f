"""QA manifests: one JSON object per line."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..errors import DataError


@dataclass
class QASample:
    qid: str
    video_id: str
    question: str
    candidates: list[str] | None  # None for open-ended samples
    correct: int  # candidate index, or global answer id when open-ended
    qtype: str = "other"
    split: str = "train"
    answer: str | None = None
    template: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.candidates is not None:
            if not 0 <= self.correct < len(self.candidates):
                raise DataError(f"{self.qid}: correct index {self.correct} out of range")
            if len(set(self.candidates)) != len(self.candidates):
                raise DataError(f"{self.qid}: duplicate candidates {self.candidates}")
            if self.answer is None:
                self.answer = self.candidates[self.correct]

    @property
    def multichoice(self) -> bool:
        return self.candidates is not None

    def to_json(self) -> dict:
        row = {"qid": self.qid, "video_id": self.video_id, "question": self.question}
        if self.candidates is not None:
            row["candidates"] = list(self.candidates)
        row["correct"] = self.correct
        row["type"] = self.qtype
        row["split"] = self.split
        if self.candidates is None:
            row["answer"] = self.answer
        if self.template:
            row["template"] = self.template
        return row

    @classmethod
    def from_json(cls, row: dict) -> "QASample":
        try:
            return cls(qid=str(row["qid"]), video_id=str(row["video_id"]), question=row["question"],
                       candidates=row.get("candidates"), correct=int(row["correct"]),
                       qtype=row.get("type") or "other", split=row.get("split", "train"),
                       answer=row.get("answer"), template=row.get("template"))
        except KeyError as exc:
            raise DataError(f"manifest row missing field {exc}") from exc


def manifest_text(samples: Iterable[QASample]) -> str:
    return "".join(json.dumps(s.to_json(), sort_keys=True) + "\n" for s in samples)


def write_manifest(samples: Iterable[QASample], path) -> Path:
    path = Path(path)
    path.write_text(manifest_text(samples), encoding="utf-8")
    return path


def read_manifest(path) -> list[QASample]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} not found")
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(QASample.from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out
