"""Finite-difference verification of every differentiable parameter path."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import torch

from .errors import NumericalError
from .model import CoVGT, ModelConfig

GradHook = Callable[[str, torch.Tensor], torch.Tensor]

TINY = dict(d=8, n=3, l_c=2, k=2, dim_r=4, dim_a=4, d_loc=4, layers=1, heads=2, edge_heads=3, gcn_layers=2,
            k_max=4, text_layers=1, text_heads=2, max_len=8, vocab_size=12, use_mlm=True)


def tiny_config(**overrides) -> ModelConfig:
    """The smallest configuration exercising every module.

    ``edge_heads`` must divide n^2 = 9, hence 3.
    """
    return ModelConfig(**{**TINY, **overrides})


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float
    seconds: float
    evaluations: int = 0
    failed: list[str] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return not self.failed

    def lines(self) -> list[str]:
        out = [f"{name}\t{err:.3e}\t{'FAIL' if name in self.failed else 'ok'}" for name, err in self.errors.items()]
        out.append(f"max\t{self.max_error:.3e}\t{len(self.errors)} groups, {self.seconds:.1f}s")
        return out


def tiny_batch(cfg: ModelConfig, seed: int, batch: int = 2, candidates: int = 2, neg_questions: int = 2,
               seq_len: int = 6) -> dict[str, torch.Tensor]:
    """Random float64 inputs shaped like a collated multi-choice batch."""
    g = torch.Generator().manual_seed(seed)
    dt = torch.float64
    shape = (batch, cfg.k, cfg.l_c, cfg.n)
    xy = torch.rand(*shape, 2, generator=g, dtype=dt) * 0.5
    wh = torch.rand(*shape, 2, generator=g, dtype=dt) * 0.4 + 0.1
    rel = torch.cat([xy, xy + wh, (wh[..., :1] * wh[..., 1:])], dim=-1)

    def tokens(*lead):
        ids = torch.randint(5, cfg.vocab_size, (*lead, seq_len), generator=g)
        ids[..., 0] = 2  # [CLS]
        mask = torch.ones_like(ids, dtype=torch.bool)
        mask[..., -1] = False  # one padded slot per sequence
        ids[..., -1] = 0
        span = torch.zeros_like(mask)
        span[..., 1:-1] = True
        return ids, mask, span

    out = {
        "region": torch.randn(*shape, cfg.dim_r, generator=g, dtype=dt),
        "rel": rel,
        "appearance": torch.randn(batch, cfg.k, cfg.l_c, cfg.dim_a, generator=g, dtype=dt),
        "correct": torch.randint(0, candidates, (batch,), generator=g),
    }
    out["q_ids"], out["q_mask"], out["q_span"] = tokens(batch, 1 + neg_questions)
    out["qa_ids"], out["qa_mask"], out["qa_span"] = tokens(batch, candidates)
    out["qa_span"][..., 1:3] = False  # answer span is the tail of the QA pair
    out["ans_ids"], out["ans_mask"], out["ans_span"] = tokens(batch, candidates)
    ids, mask, _ = tokens(batch)
    targets = ids.clone()
    ids[:, 2] = 4  # [MASK]
    tmask = torch.zeros_like(mask)
    tmask[:, 2] = True
    out.update(mlm_ids=ids, mlm_mask=mask, mlm_targets=targets, mlm_target_mask=tmask)
    return out


def total_loss(model: CoVGT, batch: dict, lam: float = 1.0) -> torch.Tensor:
    """Multi-choice contrastive loss plus the video-question and MLM terms."""
    loss = model.multichoice_loss(batch, lam)
    if model.mlm_head is not None:
        loss = loss + model.mlm_loss(batch)
    return loss


def gradcheck(cfg: ModelConfig | None = None, seed: int = 0, eps: float = 1e-5, tolerance: float = 1e-4,
              grad_hook: GradHook | None = None, loss_fn=total_loss) -> GradcheckReport:
    """Compare autograd with central differences for every named parameter.

    Each parameter tensor is one group; its error is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-12)``.
    ``grad_hook`` lets tests corrupt analytic gradients to prove failures are caught.
    """
    cfg = cfg or tiny_config()
    start = time.perf_counter()
    torch.manual_seed(seed)
    model = CoVGT(cfg).double()
    batch = tiny_batch(cfg, seed + 1)
    model.zero_grad()
    loss_fn(model, batch).backward()
    analytic = {}
    for name, p in model.named_parameters():
        g = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        analytic[name] = grad_hook(name, g) if grad_hook is not None else g

    errors, failed, evals = {}, [], 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            numeric = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn(model, batch).item()
                flat[i] = orig - eps
                down = loss_fn(model, batch).item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * eps)
                evals += 2
            a = analytic[name].reshape(-1)
            scale = max(a.abs().max().item(), numeric.abs().max().item(), 1e-12)
            err = (a - numeric).abs().max().item() / scale
            errors[name] = err
            if not err < tolerance:
                failed.append(name)
    return GradcheckReport(errors, tolerance, time.perf_counter() - start, evals, failed)


def require_pass(report: GradcheckReport) -> GradcheckReport:
    if not report.passed:
        raise NumericalError(f"gradient check failed for {len(report.failed)} groups: {', '.join(report.failed)}")
    return report
