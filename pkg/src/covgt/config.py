"""Flat ``key = value`` configuration files shared by the CLI subcommands.

Model and training keys live in one namespace. Lines starting with ``#`` are
comments. ``--set key=value`` overrides are applied after the file.
"""

from __future__ import annotations

from dataclasses import MISSING, fields
from pathlib import Path
from typing import Iterable

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

HELP = {
    # model
    "d": "Hidden size shared by the video and text sides.",
    "n": "Regions kept per frame (graph nodes).",
    "l_c": "Frames per clip.",
    "k": "Clips per video; frames sampled per video are k * l_c.",
    "dim_r": "Region appearance feature size; filled in from the feature packs.",
    "dim_a": "Frame appearance feature size; filled in from the feature packs.",
    "d_loc": "Location embedding size; 0 selects d / 2.",
    "layers": "Self-attention layers in the node, edge and global transformers.",
    "heads": "Attention heads of the node and global transformers; must divide d.",
    "edge_heads": "Attention heads of the edge transformer; must divide n * n.",
    "gcn_layers": "Graph convolution layers applied per frame.",
    "gamma": "Weight of the IoU term when linking detections across frames.",
    "k_max": "Size of the clip position table; videos may have at most this many clips.",
    "text_layers": "Self-attention layers of the text encoder.",
    "text_heads": "Attention heads of the text encoder.",
    "max_len": "Longest token sequence the text encoder accepts.",
    "vocab_size": "Vocabulary size; filled in from the workspace.",
    "n_answers": "Global answer-set size; filled in from the workspace.",
    "use_dgt": "false replaces the graph transformer with mean pooling over regions.",
    "use_ntrans": "Enable the node transformer along time.",
    "use_etrans": "Enable the edge transformer along time.",
    "edge_renorm": "Re-apply a row softmax to the adjacency after the edge transformer.",
    "placement": "Where question tokens are injected: clip, frame+clip, object or none.",
    "mc_pool": "Multi-choice video pooling: elementwise_max over candidates or per_candidate.",
    "answer_mode": "Answer vector source: qa_pair (answer span of question+answer) or answer_only.",
    "classifier": "none for contrastive scoring, or cmtrans_cls / cm_cls classification baselines.",
    "use_mlm": "Build the masked-language-model head (set automatically by pretrain).",
    # training
    "lr_init": "Initial Adam learning rate, decayed to 0 by a cosine schedule.",
    "batch_size": "Questions per optimization step.",
    "epochs": "Stage-1 epoch budget (end-to-end training).",
    "stage2_epochs": "Stage-2 epoch budget with the text encoder frozen; 0 skips stage 2.",
    "patience": "Epochs without validation improvement before a stage stops.",
    "lam": "Weight of the video-question contrastive term; 0 disables it.",
    "n_neg_questions": "Negative questions per sample for the video-question term.",
    "hard_negative_mode": "Negative question source: type_parsed, type_ground_truth or random.",
    "resample_p": "Probability of swapping each training distractor for another question's answer.",
    "use_qa_shortcut": "Open-ended: also train the video-times-question product and decide with it.",
    "pretrain_epochs": "Epochs of caption pretraining.",
    "pretrain_negatives": "Negative captions per sample during pretraining.",
    "mlm_only": "Pretrain with the masked-language-model loss alone.",
    "mlm_rate": "Fraction of caption tokens selected for masked-language modelling.",
    "seed": "Master seed; data order, initialization, masking and negatives derive from it.",
}


def _field_map():
    out = {}
    for cls in (ModelConfig, TrainConfig):
        for f in fields(cls):
            if f.name in out:
                raise ConfigError(f"config key {f.name!r} is defined twice")
            out[f.name] = (cls, f)
    return out


FIELDS = _field_map()


def parse_value(key: str, raw: str):
    if key not in FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    f = FIELDS[key][1]
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_lines(lines: Iterable[str], source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def load_config(path=None, overrides: Iterable[str] = ()) -> tuple[ModelConfig, TrainConfig]:
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        values.update(parse_lines(path.read_text(encoding="utf-8").splitlines(), str(path)))
    values.update(parse_lines(overrides, "--set"))
    model = {k: v for k, v in values.items() if FIELDS[k][0] is ModelConfig}
    train = {k: v for k, v in values.items() if FIELDS[k][0] is TrainConfig}
    return ModelConfig(**model), TrainConfig(**train)


def dump_config(model: ModelConfig, train: TrainConfig) -> str:
    lines = []
    for title, cfg in (("model", model), ("training", train)):
        lines.append(f"# {title}")
        for f in fields(cfg):
            v = getattr(cfg, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def reference_markdown() -> str:
    """The configuration reference page, generated from the dataclasses."""
    out = ["# Configuration reference", "",
           "Config files hold one `key = value` per line; `#` starts a comment.",
           "Every key can also be given on the command line as `--set key=value`.", ""]
    for title, cls in (("Model", ModelConfig), ("Training", TrainConfig)):
        out += [f"## {title}", "", "| key | type | default | meaning |", "|---|---|---|---|"]
        for f in fields(cls):
            default = f.default if f.default is not MISSING else ""
            kind = f.type if isinstance(f.type, str) else f.type.__name__
            out.append(f"| `{f.name}` | {kind} | `{default}` | {HELP[f.name]} |")
        out.append("")
    return "\n".join(out)
