"""Training harness: two-stage finetuning, pretraining, evaluation, checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .data.dataset import QADataset, mlm_batch
from .data.manifest import QASample
from .data.sampling import make_batches
from .data.workspace import Corpus
from .errors import ConfigError, NumericalError
from .model import CoVGT, ModelConfig
from .objectives import HARD_NEGATIVE_MODES
from .scoring import Prediction, predict_from_scores

log = logging.getLogger(__name__)

STREAMS = {"data": 1, "init": 2, "mlm": 3, "negatives": 4}
DECISIONS = ("joint", "video")


def decision_for(cfg: "TrainConfig | dict") -> str:
    """Open-ended decision rule matching how a model was trained: the joint
    product needs a trained question-answer factor."""
    shortcut = cfg.get("use_qa_shortcut", True) if isinstance(cfg, dict) else cfg.use_qa_shortcut
    return "joint" if shortcut else "video"


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Named, independent random sub-stream of the master seed."""
    return np.random.default_rng([seed, STREAMS[name], *extra])


def seed_torch(seed: int) -> None:
    torch.manual_seed(int(stream(seed, "init").integers(2**31 - 1)))


@dataclass
class TrainConfig:
    lr_init: float = 1e-3
    batch_size: int = 64
    epochs: int = 15
    stage2_epochs: int = 5
    patience: int = 3
    lam: float = 1.0
    n_neg_questions: int = 4
    hard_negative_mode: str = "type_parsed"
    resample_p: float = 0.3
    use_qa_shortcut: bool = True
    pretrain_epochs: int = 2
    pretrain_negatives: int = 15
    mlm_only: bool = False
    mlm_rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.lr_init <= 0:
            problems.append("lr_init must be positive")
        for name in ("batch_size", "epochs", "patience", "pretrain_epochs"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be at least 1")
        for name in ("stage2_epochs", "n_neg_questions", "pretrain_negatives", "lam"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if not 0 <= self.resample_p <= 1 or not 0 < self.mlm_rate < 1:
            problems.append("resample_p must lie in [0, 1] and mlm_rate in (0, 1)")
        if self.hard_negative_mode not in HARD_NEGATIVE_MODES:
            problems.append(f"hard_negative_mode must be one of {HARD_NEGATIVE_MODES}")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def cosine_lr(i: int, total: int, lr_init: float) -> float:
    """Cosine decay from ``lr_init`` at iteration 0 to 0 at iteration ``total - 1``."""
    if total <= 1:
        return lr_init
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * i / (total - 1)))


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def model_config_for(corpus: Corpus, cfg: ModelConfig) -> ModelConfig:
    """Fill the corpus-dependent sizes into ``cfg``."""
    return ModelConfig.from_dict({**cfg.to_dict(), "vocab_size": len(corpus.vocab),
                                  "n_answers": len(corpus.answer_set), "dim_r": corpus.dim_r or cfg.dim_r,
                                  "dim_a": corpus.dim_a or cfg.dim_a})


# -- checkpoints -----------------------------------------------------------
@dataclass
class Checkpoint:
    model_state: dict
    model_config: dict
    train_config: dict
    config_hash: str
    optimizer_state: dict | None = None
    stage: int = 1
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    best_val: float = float("nan")

    def save(self, path) -> Path:
        path = Path(path)
        torch.save(asdict(self), path)
        return path

    @classmethod
    def load(cls, path, expect_hash: str | None = None) -> "Checkpoint":
        raw = torch.load(Path(path), map_location="cpu", weights_only=False)
        ckpt = cls(**raw)
        if ckpt.config_hash != config_hash(ModelConfig.from_dict(ckpt.model_config)):
            raise ConfigError(f"{path}: stored config hash does not match its model config")
        if expect_hash is not None and ckpt.config_hash != expect_hash:
            raise ConfigError(f"{path}: checkpoint config hash {ckpt.config_hash} != expected {expect_hash}")
        return ckpt

    def build_model(self) -> CoVGT:
        model = CoVGT(ModelConfig.from_dict(self.model_config))
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def load_compatible(model: CoVGT, state: dict) -> list[str]:
    """Copy matching tensors from ``state`` (e.g. a pretraining checkpoint).

    Returns the names of model parameters left at their initial values.
    """
    own = model.state_dict()
    usable = {k: v for k, v in state.items() if k in own and own[k].shape == v.shape}
    model.load_state_dict(usable, strict=False)
    return sorted(set(own) - set(usable))


# -- evaluation ------------------------------------------------------------
@torch.no_grad()
def predict(model: CoVGT, corpus: Corpus, split: str, batch_size: int = 128, decision: str = "joint"
            ) -> list[tuple[QASample, Prediction]]:
    """Deterministic predictions for every sample of ``split``.

    ``decision`` only matters for open-ended tasks: ``joint`` multiplies the
    video-answer and question-answer scores, ``video`` uses the former alone.
    """
    if decision not in DECISIONS:
        raise ConfigError(f"decision must be one of {DECISIONS}")
    model.eval()
    ds = corpus.dataset(split)
    answers = ds.answer_tokens() if corpus.task == "openended" else None
    out = []
    for batch in make_batches(ds.samples, batch_size, seed=0, shuffle=False):
        tensors = ds.collate(batch)
        if answers is None:
            scores = model.multichoice_scores(tensors)
        else:
            video, question, _ = model.openended_scores(tensors, answers)
            scores = video * question if decision == "joint" else video
        for s, row in zip(batch, scores.double().numpy()):
            out.append((s, predict_from_scores(row)))
    return out


def evaluate(model: CoVGT, corpus: Corpus, split: str, batch_size: int = 128, decision: str = "joint") -> dict:
    """Overall and per-question-type accuracy as a JSON-ready dict."""
    preds = predict(model, corpus, split, batch_size, decision)
    per_type: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    hits = 0
    for s, p in preds:
        ok = int(p.chosen == s.correct)
        hits += ok
        per_type[s.qtype][0] += ok
        per_type[s.qtype][1] += 1
    n = len(preds)
    return {
        "split": split,
        "count": n,
        "accuracy": hits / n if n else 0.0,
        "per_type": {t: {"accuracy": c / m, "count": m} for t, (c, m) in sorted(per_type.items())},
    }


# -- training --------------------------------------------------------------
@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    best_val: float
    best_stage: int


def _loss(model: CoVGT, tensors: dict, cfg: TrainConfig, answers) -> torch.Tensor:
    if answers is None:
        return model.multichoice_loss(tensors, cfg.lam)
    return model.openended_loss(tensors, answers, cfg.lam, cfg.use_qa_shortcut)


def _run_stage(model: CoVGT, corpus: Corpus, cfg: TrainConfig, stage: int, epochs: int,
               history: list[dict], val_split: str | None) -> tuple[float, dict, int]:
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr_init)
    ds = corpus.dataset("train", cfg.hard_negative_mode)
    answers = ds.answer_tokens() if corpus.task == "openended" else None
    n_batches = math.ceil(len(ds) / cfg.batch_size)
    total = epochs * n_batches
    best_acc, best_state, best_epoch, since = -1.0, None, -1, 0
    step = 0
    for epoch in range(epochs):
        model.train()
        neg_rng = stream(cfg.seed, "negatives", stage, epoch)
        losses = []
        lr = cfg.lr_init
        for b, batch in enumerate(make_batches(ds.samples, cfg.batch_size, seed=cfg.seed * 1000 + stage,
                                               epoch=epoch)):
            lr = cosine_lr(step, total, cfg.lr_init)
            for g in opt.param_groups:
                g["lr"] = lr
            n_neg = cfg.n_neg_questions if cfg.lam else 0
            tensors = ds.collate(batch, neg_rng, n_neg, cfg.resample_p)
            loss = _loss(model, tensors, cfg, answers)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss.item()} at stage {stage}, epoch {epoch}, "
                                     f"batch {b} (lr={lr:.3g}); lower lr_init or check the input features")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        row = {"stage": stage, "epoch": epoch, "train_loss": float(np.mean(losses)), "lr": lr}
        if val_split is not None:
            row["val_acc"] = evaluate(model, corpus, val_split, decision=decision_for(cfg))["accuracy"]
        history.append(row)
        log.info("stage %d epoch %d loss %.4f val %s", stage, epoch, row["train_loss"], row.get("val_acc"))
        score = row.get("val_acc", -row["train_loss"])
        if score > best_acc:
            best_acc, best_epoch, since = score, epoch, 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            since += 1
            if since >= cfg.patience:
                break
    return best_acc, best_state, best_epoch


def train(model_cfg: ModelConfig, cfg: TrainConfig, corpus: Corpus, init_state: dict | None = None,
          val_split: str | None = "val") -> TrainResult:
    """Stage 1 trains everything; stage 2 restarts from the stage-1 best with the
    text encoder frozen. The better of the two stage bests is returned."""
    model_cfg = model_config_for(corpus, model_cfg)
    if val_split is not None and val_split not in corpus.splits:
        val_split = None
    seed_torch(cfg.seed)
    model = CoVGT(model_cfg)
    if init_state is not None:
        load_compatible(model, init_state)
    history: list[dict] = []
    best1, state1, epoch1 = _run_stage(model, corpus, cfg, 1, cfg.epochs, history, val_split)
    best, best_state, best_stage, best_epoch = best1, state1, 1, epoch1
    if cfg.stage2_epochs:
        model.load_state_dict(state1)
        for p in model.text_encoder.parameters():
            p.requires_grad_(False)
        best2, state2, epoch2 = _run_stage(model, corpus, cfg, 2, cfg.stage2_epochs, history, val_split)
        for p in model.text_encoder.parameters():
            p.requires_grad_(True)
        if best2 > best:
            best, best_state, best_stage, best_epoch = best2, state2, 2, epoch2
    model.load_state_dict(best_state)
    ckpt = Checkpoint(model_state=best_state, model_config=model_cfg.to_dict(), train_config=cfg.to_dict(),
                      config_hash=config_hash(model_cfg), stage=best_stage, epoch=best_epoch,
                      history=history, best_val=best)
    return TrainResult(ckpt, history, best, best_stage)


def pretrain(model_cfg: ModelConfig, cfg: TrainConfig, corpus: Corpus) -> TrainResult:
    """Video-caption contrastive learning plus MLM on the caption corpus."""
    model_cfg = model_config_for(corpus, ModelConfig.from_dict({**model_cfg.to_dict(), "use_mlm": True}))
    if len(corpus.captions) <= cfg.pretrain_negatives:
        raise ConfigError(f"{len(corpus.captions)} captions cannot supply {cfg.pretrain_negatives} negatives")
    seed_torch(cfg.seed)
    model = CoVGT(model_cfg)
    pairs = [QASample(f"cap_{vid}", vid, cap, None, 0, split="pretrain")
             for vid, cap in sorted(corpus.captions.items())]
    ds = QADataset(pairs, corpus.videos, corpus.vocab, hard_negative_mode="random")
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_init)
    total = cfg.pretrain_epochs * math.ceil(len(pairs) / cfg.batch_size)
    history, step = [], 0
    for epoch in range(cfg.pretrain_epochs):
        model.train()
        neg_rng = stream(cfg.seed, "negatives", 0, epoch)
        mlm_rng = stream(cfg.seed, "mlm", epoch)
        losses = []
        for batch in make_batches(pairs, cfg.batch_size, seed=cfg.seed, epoch=epoch):
            for g in opt.param_groups:
                g["lr"] = cosine_lr(step, total, cfg.lr_init)
            loss = model.mlm_loss(mlm_batch([s.question for s in batch], corpus.vocab, mlm_rng, cfg.mlm_rate))
            if not cfg.mlm_only:
                loss = loss + model.video_question_loss(ds.collate(batch, neg_rng, cfg.pretrain_negatives))
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite pretraining loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        history.append({"stage": 0, "epoch": epoch, "train_loss": float(np.mean(losses)),
                        "lr": cosine_lr(step - 1, total, cfg.lr_init)})
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    ckpt = Checkpoint(model_state=state, model_config=model_cfg.to_dict(), train_config=cfg.to_dict(),
                      config_hash=config_hash(model_cfg), stage=0, epoch=cfg.pretrain_epochs - 1,
                      history=history)
    return TrainResult(ckpt, history, float("nan"), 0)


# -- metric logs -----------------------------------------------------------
LOG_COLUMNS = ("stage", "epoch", "train_loss", "val_acc", "lr")


def metric_log_text(history: list[dict]) -> str:
    """Tab-separated metric log; floats are written with full precision."""
    lines = ["\t".join(LOG_COLUMNS)]
    for row in history:
        cells = []
        for c in LOG_COLUMNS:
            v = row.get(c, "")
            cells.append(repr(float(v)) if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def write_metric_log(history: list[dict], path) -> Path:
    path = Path(path)
    path.write_text(metric_log_text(history), encoding="utf-8")
    return path
