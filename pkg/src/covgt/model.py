"""The full video QA model: graph embedding, DGT, global transformer, text side."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn

from .attention import AttentionConfig
from .dgt import DgtOutput, DynamicGraphTransformer, dgt_forward
from .errors import ConfigError
from .fusion import MC_POOLS, PLACEMENTS, GlobalTransformer, cross_modal_interact, interact_at_level, \
    pool_multichoice_video
from .graph import LocationEncoder, ObjectEmbedder
from .objectives import choice_info_nce, info_nce_scores, loss_multichoice, similarity
from .scoring import CLASSIFIER_MODES, CrossModalClassifier, CrossModalTransformerClassifier
from .text import MLMHead, TextEncoder, mlm_loss, pool_answer

ANSWER_MODES = ("qa_pair", "answer_only")


@dataclass
class ModelConfig:
    """Architecture hyperparameters. Defaults are the CPU-sized toy setting."""

    d: int = 64
    n: int = 4
    l_c: int = 4
    k: int = 4
    dim_r: int = 32
    dim_a: int = 32
    d_loc: int = 0  # 0 means d // 2
    layers: int = 1
    heads: int = 4
    edge_heads: int = 4
    gcn_layers: int = 2
    gamma: float = 1.0
    k_max: int = 16
    text_layers: int = 2
    text_heads: int = 4
    max_len: int = 64
    vocab_size: int = 0
    n_answers: int = 0
    use_dgt: bool = True
    use_ntrans: bool = True
    use_etrans: bool = True
    edge_renorm: bool = True
    placement: str = "clip"
    mc_pool: str = "elementwise_max"
    answer_mode: str = "qa_pair"
    classifier: str = "none"
    use_mlm: bool = False

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}")
        if self.mc_pool not in MC_POOLS:
            raise ConfigError(f"mc_pool must be one of {MC_POOLS}")
        if self.answer_mode not in ANSWER_MODES:
            raise ConfigError(f"answer_mode must be one of {ANSWER_MODES}")
        if self.classifier not in ("none", *CLASSIFIER_MODES):
            raise ConfigError(f"classifier must be 'none' or one of {CLASSIFIER_MODES}")
        if self.d % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d={self.d}")

    @property
    def l_v(self) -> int:
        return self.k * self.l_c

    @property
    def loc_dim(self) -> int:
        return self.d_loc or self.d // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class CoVGT(nn.Module):
    """Contrastive video graph transformer.

    Video and text are embedded separately and compared by dot product. The
    classification variants (``classifier`` set) replace the dot-product
    decision with a learned scorer.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.vocab_size <= 0:
            raise ConfigError("vocab_size must be set before building the model")
        self.cfg = cfg
        d = cfg.d
        self.loc_encoder = LocationEncoder(cfg.loc_dim)
        self.embedder = ObjectEmbedder(cfg.dim_r, cfg.loc_dim, d)
        self.dgt = (DynamicGraphTransformer(d, cfg.n, cfg.dim_a, cfg.layers, cfg.heads, cfg.edge_heads,
                                            cfg.gcn_layers, cfg.use_ntrans, cfg.use_etrans, cfg.edge_renorm)
                    if cfg.use_dgt else None)
        self.global_trans = GlobalTransformer(AttentionConfig(cfg.layers, cfg.heads, d), cfg.k_max)
        self.text_encoder = TextEncoder(cfg.vocab_size, d, cfg.text_layers, cfg.text_heads, cfg.max_len)
        self.text_proj = nn.Linear(self.text_encoder.out_dim, d, bias=False)
        self.mlm_head = MLMHead(self.text_encoder.out_dim, cfg.vocab_size) if cfg.use_mlm else None
        self.classifier = None
        if cfg.classifier == "cmtrans_cls":
            self.classifier = CrossModalTransformerClassifier(d, cfg.layers, cfg.heads, cfg.k_max)
        elif cfg.classifier == "cm_cls":
            self.classifier = CrossModalClassifier(d)

    # -- video side -------------------------------------------------------
    def encode_nodes(self, region: torch.Tensor, rel: torch.Tensor) -> torch.Tensor:
        return self.embedder(region, self.loc_encoder(rel))

    def run_dgt(self, nodes: torch.Tensor, appearance: torch.Tensor) -> DgtOutput:
        return dgt_forward(nodes, appearance, self.dgt)

    def query_video(self, nodes: torch.Tensor, appearance: torch.Tensor, dgt_out: DgtOutput | None,
                    X: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Query-aware global video vectors, one per text query.

        ``nodes`` ``[B, k, l_c, n, d]``; ``X`` ``[B, C, M, d]``. Returns ``[B, C, d]``.
        """
        B, C = X.shape[:2]
        placement = self.cfg.placement
        if placement == "object":
            k, l_c, n, d = nodes.shape[-4:]
            flat = nodes.unsqueeze(1).expand(B, C, k, l_c, n, d).reshape(B, C, k * l_c * n, d)
            inter = cross_modal_interact(flat, X, mask).reshape(B, C, k, l_c, n, d)
            app = appearance.unsqueeze(1).expand(B, C, *appearance.shape[1:])
            clips = dgt_forward(inter, app, self.dgt).clip_vectors
        else:
            expand = DgtOutput(
                clip_vectors=dgt_out.clip_vectors.unsqueeze(1).expand(B, C, *dgt_out.clip_vectors.shape[1:]),
                frame_vectors=dgt_out.frame_vectors.unsqueeze(1).expand(B, C, *dgt_out.frame_vectors.shape[1:]))
            clips = interact_at_level(expand, X, placement, mask).clip_vectors
        return self.global_trans(clips)

    # -- text side --------------------------------------------------------
    def encode_tokens(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Projected token representations ``[..., M, d]``."""
        lead = ids.shape[:-1]
        flat_ids, flat_mask = ids.reshape(-1, ids.shape[-1]), mask.reshape(-1, mask.shape[-1])
        reps = self.text_encoder(flat_ids, flat_mask)
        return self.text_proj(reps).reshape(*lead, ids.shape[-1], -1)

    # -- scoring ----------------------------------------------------------
    def video_inputs(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor, DgtOutput | None]:
        dtype = self.embedder.proj.weight.dtype
        nodes = self.encode_nodes(batch["region"].to(dtype), batch["rel"].to(dtype))
        app = batch["appearance"].to(dtype)
        dgt_out = None if self.cfg.placement == "object" else self.run_dgt(nodes, app)
        return nodes, app, dgt_out

    def question_scores(self, batch: dict, video=None) -> tuple[torch.Tensor, torch.Tensor]:
        """Similarities of the video with its question (column 0) and negatives."""
        nodes, app, dgt_out = video if video is not None else self.video_inputs(batch)
        Xq = self.encode_tokens(batch["q_ids"], batch["q_mask"])
        f_qv = self.query_video(nodes, app, dgt_out, Xq, batch["q_mask"])
        f_q = pool_answer(Xq, batch["q_span"])
        return similarity(f_qv, f_q), f_q

    def multichoice_scores(self, batch: dict, video=None) -> torch.Tensor:
        """``[B, C]`` candidate scores for multi-choice batches."""
        nodes, app, dgt_out = video if video is not None else self.video_inputs(batch)
        X = self.encode_tokens(batch["qa_ids"], batch["qa_mask"])
        if self.cfg.classifier == "cmtrans_cls":
            if dgt_out is None:
                dgt_out = self.run_dgt(nodes, app)
            B, C = X.shape[:2]
            clips = dgt_out.clip_vectors.unsqueeze(1).expand(B, C, *dgt_out.clip_vectors.shape[1:])
            return self.classifier(clips, X, batch["qa_mask"])
        per_candidate = self.query_video(nodes, app, dgt_out, X, batch["qa_mask"])
        if self.cfg.classifier == "cm_cls":
            return self.classifier(per_candidate)
        if self.cfg.answer_mode == "qa_pair":
            f_A = pool_answer(X, batch["qa_span"])
        else:
            f_A = pool_answer(self.encode_tokens(batch["ans_ids"], batch["ans_mask"]), batch["ans_span"])
        if self.cfg.mc_pool == "elementwise_max":
            f_qv = pool_multichoice_video(per_candidate, "elementwise_max").unsqueeze(1)
        else:
            f_qv = per_candidate
        return similarity(f_qv, f_A)

    def openended_scores(self, batch: dict, answers: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
                         video=None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Video-answer scores, question-answer scores ``[B, |A|]`` and the
        video-question similarities ``[B, 1 + N]``."""
        nodes, app, dgt_out = video if video is not None else self.video_inputs(batch)
        Xq = self.encode_tokens(batch["q_ids"], batch["q_mask"])
        f_qv = self.query_video(nodes, app, dgt_out, Xq, batch["q_mask"])
        f_q = pool_answer(Xq, batch["q_span"])
        a_ids, a_mask, a_span = answers
        f_A = pool_answer(self.encode_tokens(a_ids, a_mask), a_span)
        video_scores = f_qv[:, 0] @ f_A.T
        question_scores = f_q[:, 0] @ f_A.T
        return video_scores, question_scores, similarity(f_qv, f_q)

    # -- losses -----------------------------------------------------------
    def multichoice_loss(self, batch: dict, lam: float = 1.0) -> torch.Tensor:
        video = self.video_inputs(batch)
        scores = self.multichoice_scores(batch, video)
        if self.classifier is not None or not lam or batch["q_ids"].shape[1] < 2:
            return choice_info_nce(scores, batch["correct"])
        q_sims, _ = self.question_scores(batch, video)
        return loss_multichoice(scores, batch["correct"], q_sims[:, 0], q_sims[:, 1:], lam)

    def openended_loss(self, batch: dict, answers, lam: float = 1.0, use_qa_shortcut: bool = True
                       ) -> torch.Tensor:
        video_scores, question_scores, q_sims = self.openended_scores(batch, answers)
        loss = loss_multichoice(video_scores, batch["correct"], q_sims[:, 0], q_sims[:, 1:], lam)
        if use_qa_shortcut:
            # Train the joint product itself: with only the two factors trained
            # apart, two negative scores multiply into a confident wrong answer.
            loss = loss + choice_info_nce(video_scores * question_scores, batch["correct"]) \
                + choice_info_nce(question_scores, batch["correct"])
        return loss

    def video_question_loss(self, batch: dict) -> torch.Tensor:
        q_sims, _ = self.question_scores(batch)
        return info_nce_scores(q_sims[:, 0], q_sims[:, 1:])

    def mlm_loss(self, batch: dict) -> torch.Tensor:
        if self.mlm_head is None:
            raise ConfigError("model was built without an MLM head (use_mlm=false)")
        reps = self.text_encoder(batch["mlm_ids"], batch["mlm_mask"])
        return mlm_loss(reps, batch["mlm_targets"], batch["mlm_target_mask"], self.mlm_head)

    def text_parameters(self):
        yield from self.text_encoder.parameters()
        if self.mlm_head is not None:
            yield from self.mlm_head.parameters()


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
