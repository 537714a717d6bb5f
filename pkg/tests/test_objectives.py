import math

import numpy as np
import pytest
import torch

from covgt.errors import DataError
from covgt.objectives import (ContrastBatch, NegativeQuestionSampler, QuestionRecord, QuestionType,
                              choice_info_nce, info_nce, info_nce_scores, loss_multichoice,
                              parse_question_type, sample_negative_answers, sample_negative_questions)


@pytest.mark.parametrize("n", [1, 4, 15, 63])
def test_info_nce_equal_scores_is_log_n_plus_one(n):
    pos = torch.full((3,), 0.7, dtype=torch.float64)
    neg = torch.full((3, n), 0.7, dtype=torch.float64)
    assert info_nce_scores(pos, neg).item() == pytest.approx(math.log(n + 1), abs=1e-6)


def test_info_nce_known_value():
    # one negative one unit below the positive: log(1 + e^-1)
    val = info_nce_scores(torch.tensor([1.0], dtype=torch.float64), torch.tensor([[0.0]], dtype=torch.float64))
    assert val.item() == pytest.approx(math.log1p(math.exp(-1.0)), abs=1e-12)
    assert val.item() == pytest.approx(0.3133, abs=1e-4)


def test_info_nce_shift_invariance_and_stability():
    rng = np.random.default_rng(0)
    pos = torch.tensor(rng.normal(size=5))
    neg = torch.tensor(rng.normal(size=(5, 7)))
    base = info_nce_scores(pos, neg).item()
    for c in (-300.0, 1e3, 5e4):
        assert info_nce_scores(pos + c, neg + c).item() == pytest.approx(base, abs=1e-9)


def test_info_nce_negative_mask_drops_padding():
    pos = torch.tensor([0.0])
    neg = torch.tensor([[0.0, 50.0]])
    mask = torch.tensor([[True, False]])
    assert info_nce_scores(pos, neg, mask).item() == pytest.approx(math.log(2), abs=1e-6)


def test_info_nce_from_vectors():
    a = torch.tensor([[1.0, 0.0]])
    p = torch.tensor([[2.0, 0.0]])
    n = torch.tensor([[[0.0, 1.0]]])
    assert info_nce(ContrastBatch(a, p, n)).item() == pytest.approx(math.log1p(math.exp(-2.0)), abs=1e-6)
    with pytest.raises(ValueError):
        ContrastBatch(a, p, torch.zeros(1, 0, 2))


def test_choice_info_nce_matches_cross_entropy_and_checks_index():
    scores = torch.randn(4, 5)
    correct = torch.tensor([0, 4, 2, 1])
    assert torch.allclose(choice_info_nce(scores, correct), torch.nn.functional.cross_entropy(scores, correct))
    with pytest.raises(DataError):
        choice_info_nce(scores, torch.tensor([0, 5, 0, 0]))


def test_loss_multichoice_lambda_zero_drops_question_term():
    scores = torch.randn(2, 3)
    correct = torch.tensor([1, 2])
    q_pos, q_neg = torch.randn(2), torch.randn(2, 4)
    assert torch.equal(loss_multichoice(scores, correct, q_pos, q_neg, lam=0.0), choice_info_nce(scores, correct))
    both = loss_multichoice(scores, correct, q_pos, q_neg, lam=0.5)
    assert torch.allclose(both, choice_info_nce(scores, correct) + 0.5 * info_nce_scores(q_pos, q_neg))


@pytest.mark.parametrize("q,t", [
    ("Why did the boy run?", QuestionType.WHY),
    ("what is on the table", QuestionType.WHAT),
    ("How many dogs are there?", QuestionType.HOW_MANY),
    ("how many times did he jump", QuestionType.HOW_TIMES),
    ("how did the person open it", QuestionType.HOW),
    ("so who left first", QuestionType.WHO),
    ("the cat sat on the mat where", QuestionType.OTHER),
    ("is it raining", QuestionType.OTHER),
])
def test_parse_question_type(q, t):
    assert parse_question_type(q) is t


def test_negative_answers_never_duplicate_correct():
    rng = np.random.default_rng(0)
    cands = ["a", "b", "c", "d"]
    pool = ["a", "b", "c", "d", "e", "f", "g"]
    total = 0
    for _ in range(500):
        out, r = sample_negative_answers(cands, 2, pool, rng, p=0.3)
        assert out[2] == "c" and len(set(out)) == 4
        total += r
    assert abs(total / (500 * 3) - 0.3) < 0.05
    assert sample_negative_answers(cands, 0, cands, rng, p=1.0) == (cands, 0)


def _records():
    rec = []
    for v in range(6):
        rec.append(QuestionRecord(f"v{v}_0", f"v{v}", f"why did thing {v} happen", "why"))
        rec.append(QuestionRecord(f"v{v}_1", f"v{v}", f"what colour is object {v}", "desc"))
    return rec


def test_negative_questions_same_type_other_videos():
    sampler = NegativeQuestionSampler(_records())
    anchor = _records()[0]
    rng = np.random.default_rng(0)
    qs, fallback = sampler.sample(anchor, 4, rng)
    assert not fallback and len(qs) == 4
    assert all(q.startswith("why") and q != anchor.question for q in qs)
    qs, fallback = sampler.sample(anchor, 7, rng)
    assert fallback and len(set(qs)) == 7
    assert all("thing 0" not in q and "object 0" not in q for q in qs)


def test_negative_question_modes_and_errors():
    gt = NegativeQuestionSampler(_records(), mode="type_ground_truth")
    assert set(gt.by_type) == {"why", "desc"}
    anyq = NegativeQuestionSampler(_records(), mode="random")
    assert set(anyq.by_type) == {"*"}
    with pytest.raises(ValueError):
        NegativeQuestionSampler(_records(), mode="bogus")
    with pytest.raises(DataError):
        sample_negative_questions(_records()[0], {"why": _records()[:2]}, 5, np.random.default_rng(0))
    assert sample_negative_questions(_records()[0], {}, 0, np.random.default_rng(0)) == ([], False)
