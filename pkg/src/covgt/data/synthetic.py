"""Synthetic event world standing in for benchmark video QA data.

Each video shows ``n_objects`` items for ``k`` clips. In clip ``c`` the person
acts on one item with one predicate; the acted item's region features carry a
predicate signature and its box grows. Questions ask which item was acted on,
how an item was handled, and what happened before/after a given event, so
half of the templates depend on clip order. A symbolic oracle answers every
question from the event list alone.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ValidationError
from ..objectives import parse_question_type
from ..text import split_words
from .featurepack import VideoFeaturePack
from .manifest import QASample

PREDICATE_PHRASES = {
    "approach": ("approach", "approaching"),
    "leave": ("leave", "leaving"),
    "pickup": ("pick up", "picking up"),
    "putdown": ("put down", "putting down"),
    "swap": ("swap", "swapping"),
}
ITEMS = ("ball", "cup", "book", "phone", "box", "key", "bag", "hat", "pen", "shoe", "bottle", "plate")
TEMPLATES = ("which", "how", "touch_order", "do_order")
ORDER_TEMPLATES = ("touch_order", "do_order")


@dataclass(frozen=True)
class Event:
    clip: int
    predicate: str
    item: str


@dataclass(frozen=True)
class SyntheticWorldSpec:
    items: tuple[str, ...] = ITEMS
    predicates: tuple[str, ...] = tuple(PREDICATE_PHRASES)
    n_objects: int = 4
    n_clutter: int = 2
    k: int = 4
    l_c: int = 4
    dim_r: int = 32
    dim_a: int = 32
    frame_w: float = 320.0
    frame_h: float = 240.0
    identity_noise: float = 0.15
    predicate_strength: float = 1.0
    acted_scale: float = 1.4
    appearance_noise: float = 0.1
    item_bias: float = 0.0
    predicate_bias: float = 0.0
    questions_per_video: int = 4
    template_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    n_candidates: int = 5
    leak_threshold: float = 0.45

    def validate(self) -> None:
        problems = []
        if self.k > self.n_objects:
            problems.append(f"k={self.k} events need at least as many objects (n_objects={self.n_objects})")
        if self.k > len(self.predicates):
            problems.append(f"k={self.k} clips need {self.k} distinct predicates, have {len(self.predicates)}")
        if self.n_objects >= len(self.items):
            problems.append("need at least one item absent from every video for distractors")
        if self.n_candidates > len(self.predicates):
            problems.append(f"n_candidates={self.n_candidates} exceeds the predicate vocabulary")
        if self.n_candidates < 2:
            problems.append("multi-choice needs at least two candidates")
        unknown = [p for p in self.predicates if p not in PREDICATE_PHRASES]
        if unknown:
            problems.append(f"no phrases for predicates {unknown}")
        if len(self.template_weights) != len(TEMPLATES) or min(self.template_weights) < 0:
            problems.append(f"template_weights must give {len(TEMPLATES)} non-negative weights")
        if len(self.items) + len(self.predicates) > self.dim_r:
            problems.append("dim_r too small for orthogonal item and predicate prototypes")
        if problems:
            raise ValidationError("; ".join(problems))

    @property
    def l_v(self) -> int:
        return self.k * self.l_c

    @property
    def n_raw(self) -> int:
        return self.n_objects + self.n_clutter

    def answer_set(self) -> list[str]:
        return list(self.items) + [PREDICATE_PHRASES[p][0] for p in self.predicates]


@dataclass
class SyntheticDataset:
    spec: SyntheticWorldSpec
    seed: int
    packs: dict[str, VideoFeaturePack]
    events: dict[str, list[Event]]
    samples: dict[str, list[QASample]]
    answer_set: list[str]
    oracle: dict[str, str]
    captions: dict[str, str] = field(default_factory=dict)
    leak_accuracy: float = 0.0

    def texts(self) -> list[str]:
        out = list(self.answer_set)
        for split in self.samples.values():
            for s in split:
                out.append(s.question)
                out.extend(s.candidates or ())
        out.extend(self.captions.values())
        return out


def base(pred: str) -> str:
    return PREDICATE_PHRASES[pred][0]


def gerund(pred: str) -> str:
    return PREDICATE_PHRASES[pred][1]


def _zipf(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def _prototypes(spec: SyntheticWorldSpec, seed: int) -> tuple[dict, dict, np.ndarray]:
    rng = np.random.default_rng([seed, 7])
    q, _ = np.linalg.qr(rng.normal(size=(spec.dim_r, spec.dim_r)))
    basis = q.T
    items = {name: basis[i] for i, name in enumerate(spec.items)}
    offset = len(spec.items)
    preds = {name: basis[offset + i] for i, name in enumerate(spec.predicates)}
    if spec.dim_a == spec.dim_r:
        to_app = np.eye(spec.dim_r)
    else:
        to_app = rng.normal(size=(spec.dim_r, spec.dim_a)) / math.sqrt(spec.dim_r)
    return items, preds, to_app


def _sample_events(spec: SyntheticWorldSpec, rng: np.random.Generator) -> tuple[list[str], list[Event]]:
    item_p = _zipf(len(spec.items), spec.item_bias)
    pred_p = _zipf(len(spec.predicates), spec.predicate_bias)
    present = list(rng.choice(spec.items, size=spec.n_objects, replace=False, p=item_p))
    acted = list(rng.permutation(present))[: spec.k]
    preds = list(rng.choice(spec.predicates, size=spec.k, replace=False, p=pred_p))
    return present, [Event(c, str(p), str(i)) for c, (p, i) in enumerate(zip(preds, acted))]


def render_video(video_id: str, present: list[str], events: list[Event], spec: SyntheticWorldSpec,
                 protos: tuple[dict, dict, np.ndarray], rng: np.random.Generator) -> VideoFeaturePack:
    """Draw per-frame region features, boxes and frame appearance for one video."""
    items, preds, to_app = protos
    W, H = spec.frame_w, spec.frame_h
    n_obj = len(present)
    sizes = rng.uniform(40, 80, size=(n_obj, 2))
    centers = np.stack([rng.uniform(50, W - 50, n_obj), rng.uniform(50, H - 50, n_obj)], axis=1)
    l_v = spec.l_v
    feats = np.zeros((l_v, spec.n_raw, spec.dim_r))
    boxes = np.zeros((l_v, spec.n_raw, 4))
    app = np.zeros((l_v, spec.dim_a))
    acted_by_clip = {e.clip: e for e in events}
    for t in range(l_v):
        ev = acted_by_clip.get(t // spec.l_c)
        obj_feats = np.empty((n_obj, spec.dim_r))
        obj_boxes = np.empty((n_obj, 4))
        for i, name in enumerate(present):
            f = items[name] + spec.identity_noise * rng.normal(size=spec.dim_r) / math.sqrt(spec.dim_r)
            c = centers[i] + rng.normal(scale=2.0, size=2)
            half = sizes[i] / 2
            if ev is not None and ev.item == name:
                f = f + spec.predicate_strength * preds[ev.predicate]
                half = half * spec.acted_scale
            obj_feats[i] = f
            obj_boxes[i] = [max(0.0, c[0] - half[0]), max(0.0, c[1] - half[1]),
                            min(W, c[0] + half[0]), min(H, c[1] + half[1])]
        clutter = rng.normal(size=(spec.n_clutter, spec.dim_r)) / math.sqrt(spec.dim_r)
        cc = np.stack([rng.uniform(20, W - 20, spec.n_clutter), rng.uniform(20, H - 20, spec.n_clutter)], 1)
        cs = rng.uniform(10, 30, size=(spec.n_clutter, 2))
        clutter_boxes = np.concatenate([np.clip(cc - cs, 0, [W, H]), np.clip(cc + cs, 0, [W, H])], 1)
        conf = np.concatenate([rng.uniform(0.6, 1.0, n_obj), rng.uniform(0.05, 0.5, spec.n_clutter)])
        order = np.argsort(-conf, kind="stable")
        feats[t] = np.concatenate([obj_feats, clutter])[order]
        boxes[t] = np.concatenate([obj_boxes, clutter_boxes])[order]
        app[t] = obj_feats.mean(0) @ to_app + spec.appearance_noise * rng.normal(size=spec.dim_a) / math.sqrt(
            spec.dim_a)
    return VideoFeaturePack(video_id=video_id, frame_appearance=app.astype(np.float32),
                            region_features=feats.astype(np.float32), boxes=boxes.astype(np.float32),
                            frame_w=W, frame_h=H)


def _question_pool(events: list[Event]) -> list[tuple[str, str, str]]:
    """All askable ``(template, question, answer)`` triples for one video."""
    out = []
    for e in events:
        out.append(("which", f"which object did the person {base(e.predicate)}?", e.item))
        out.append(("how", f"how did the person interact with the {e.item}?", base(e.predicate)))
    for j, e in enumerate(events):
        for rel, tgt in (("before", j - 1), ("after", j + 1)):
            if not 0 <= tgt < len(events):
                continue
            t = events[tgt]
            out.append(("touch_order", f"what did the person touch {rel} {gerund(e.predicate)} the {e.item}?",
                        t.item))
            out.append(("do_order", f"what did the person do {rel} {gerund(e.predicate)} the {e.item}?",
                        base(t.predicate)))
    return out


_Q_WHICH = re.compile(r"^which object did the person (.+)\?$")
_Q_HOW = re.compile(r"^how did the person interact with the (\w+)\?$")
_Q_ORDER = re.compile(r"^what did the person (touch|do) (before|after) (.+) the (\w+)\?$")


def oracle_answer(question: str, events: list[Event]) -> str | None:
    """Answer a template question from the ordered event list (None if unanswerable)."""
    by_base = {base(p): p for p in PREDICATE_PHRASES}
    by_gerund = {gerund(p): p for p in PREDICATE_PHRASES}
    events = sorted(events, key=lambda e: e.clip)
    m = _Q_WHICH.match(question)
    if m:
        hits = [e.item for e in events if e.predicate == by_base.get(m.group(1))]
        return hits[0] if len(hits) == 1 else None
    m = _Q_HOW.match(question)
    if m:
        hits = [base(e.predicate) for e in events if e.item == m.group(1)]
        return hits[0] if len(hits) == 1 else None
    m = _Q_ORDER.match(question)
    if m:
        what, rel, phrase, item = m.groups()
        pred = by_gerund.get(phrase)
        idx = [j for j, e in enumerate(events) if e.predicate == pred and e.item == item]
        if len(idx) != 1:
            return None
        tgt = idx[0] + (-1 if rel == "before" else 1)
        if not 0 <= tgt < len(events):
            return None
        return events[tgt].item if what == "touch" else base(events[tgt].predicate)
    return None


def shuffle_events(events: list[Event], rng: np.random.Generator) -> list[Event]:
    """Reassign events to clips in random order (a clip-shuffled copy of the video)."""
    perm = rng.permutation(len(events))
    return [Event(int(c), e.predicate, e.item) for c, e in zip(perm, events)]


def _distractors(template: str, answer: str, present: list[str], spec: SyntheticWorldSpec,
                 rng: np.random.Generator) -> list[str]:
    need = spec.n_candidates - 1
    if template in ("which", "touch_order"):
        others = [i for i in present if i != answer]
        rng.shuffle(others)
        picks = others[:need]
        absent = [i for i in spec.items if i not in present]
        extra = list(rng.choice(absent, size=need - len(picks), replace=False)) if len(picks) < need else []
        return picks + [str(x) for x in extra]
    others = [base(p) for p in spec.predicates if base(p) != answer]
    return [str(x) for x in rng.choice(others, size=need, replace=False)]


def _captions(events: list[Event]) -> str:
    return " then ".join(f"the person {base(e.predicate)} the {e.item}" for e in events)


def _generate_split(split: str, count: int, spec: SyntheticWorldSpec, protos, rng: np.random.Generator,
                    open_ended: bool, answer_set: list[str], prefix: str):
    weights = np.asarray(spec.template_weights, dtype=np.float64)
    weights = weights / weights.sum()
    packs, events_by_vid, samples, captions = {}, {}, [], {}
    v = 0
    while len(samples) < count:
        vid = f"{prefix}{split}_{v:05d}"
        v += 1
        present, events = _sample_events(spec, rng)
        packs[vid] = render_video(vid, present, events, spec, protos, rng)
        events_by_vid[vid] = events
        captions[vid] = _captions(events)
        pool = _question_pool(events)
        by_template = {t: [q for q in pool if q[0] == t] for t in TEMPLATES}
        chosen: set[str] = set()
        for _ in range(spec.questions_per_video):
            if len(samples) >= count:
                break
            avail = np.array([w if any(q[1] not in chosen for q in by_template[t]) else 0.0
                              for t, w in zip(TEMPLATES, weights)])
            if avail.sum() == 0:
                break
            template = TEMPLATES[int(rng.choice(len(TEMPLATES), p=avail / avail.sum()))]
            options = [q for q in by_template[template] if q[1] not in chosen]
            _, question, answer = options[int(rng.integers(len(options)))]
            chosen.add(question)
            qid = f"{vid}_q{len(chosen) - 1}"
            qtype = parse_question_type(question).value
            if open_ended:
                samples.append(QASample(qid, vid, question, None, answer_set.index(answer), qtype, split,
                                        answer=answer, template=template))
            else:
                cands = [answer] + _distractors(template, answer, present, spec, rng)
                order = rng.permutation(len(cands))
                cands = [cands[i] for i in order]
                samples.append(QASample(qid, vid, question, cands, cands.index(answer), qtype, split,
                                        template=template))
    return packs, events_by_vid, samples, captions


def novel_distractor_split(samples: list[QASample], answer_set: list[str], rng: np.random.Generator,
                           split: str = "val_novel") -> list[QASample]:
    """Keep questions and correct answers; draw every distractor uniformly from the answer set."""
    out = []
    for s in samples:
        pool = [a for a in answer_set if a != s.answer]
        distract = [str(x) for x in rng.choice(pool, size=len(s.candidates) - 1, replace=False)]
        cands = [s.answer] + distract
        order = rng.permutation(len(cands))
        cands = [cands[i] for i in order]
        out.append(QASample(s.qid, s.video_id, s.question, cands, cands.index(s.answer), s.qtype, split,
                            template=s.template))
    return out


def text_prior_accuracy(train: list[QASample], test: list[QASample]) -> float:
    """Accuracy of a question-words-only answer prior (a leakage probe).

    Scores each candidate by how often it was correct, when offered, alongside
    each question word in the training split.
    """
    offered, won = Counter(), Counter()
    for s in train:
        words = set(split_words(s.question))
        for j, c in enumerate(s.candidates or ()):
            for w in words:
                offered[w, c] += 1
                if j == s.correct:
                    won[w, c] += 1
    hits = 0
    for s in test:
        words = set(split_words(s.question))
        scores = [sum(math.log((won[w, c] + 1) / (offered[w, c] + 2)) for w in words) for c in s.candidates]
        hits += int(int(np.argmax(scores)) == s.correct)
    return hits / max(1, len(test))


def generate_synthetic_dataset(spec: SyntheticWorldSpec, sizes: dict[str, int], seed: int,
                               open_ended: bool = False, max_attempts: int = 10) -> SyntheticDataset:
    """Build packs, QA samples and oracle answers for every requested split.

    Multi-choice datasets also get a ``val_novel`` split (when ``val`` is
    requested) whose distractors are random answers. Generation is redrawn
    with a fresh sub-stream while the text-only prior answers more than
    ``leak_threshold`` of the validation questions.
    """
    spec.validate()
    answer_set = spec.answer_set()
    protos = _prototypes(spec, seed)
    last_leak = 1.0
    for attempt in range(max_attempts):
        packs, events, samples, captions = {}, {}, {}, {}
        for s_idx, (split, count) in enumerate(sorted(sizes.items())):
            rng = np.random.default_rng([seed, attempt, s_idx, 11])
            p, e, qa, cap = _generate_split(split, count, spec, protos, rng, open_ended, answer_set,
                                            prefix="oe_" if open_ended else "")
            packs.update(p)
            events.update(e)
            captions.update(cap)
            samples[split] = qa
        leak = 0.0
        if not open_ended and "train" in samples:
            probe = samples.get("val") or samples["train"]
            leak = text_prior_accuracy(samples["train"], probe)
        last_leak = leak
        if leak < spec.leak_threshold:
            break
    else:
        raise ValidationError(f"text-only prior still answers {last_leak:.2f} of questions after rebalancing")
    if not open_ended and "val" in samples:
        samples["val_novel"] = novel_distractor_split(samples["val"], answer_set,
                                                      np.random.default_rng([seed, 13]))
    oracle = {s.qid: oracle_answer(s.question, events[s.video_id]) for qa in samples.values() for s in qa}
    return SyntheticDataset(spec=spec, seed=seed, packs=packs, events=events, samples=samples,
                            answer_set=answer_set, oracle=oracle, captions=captions, leak_accuracy=last_leak)


def spec_to_dict(spec: SyntheticWorldSpec) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()}


def spec_from_dict(d: dict) -> SyntheticWorldSpec:
    return SyntheticWorldSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
