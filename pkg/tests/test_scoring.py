import numpy as np
import pytest
import torch

from covgt.scoring import (CrossModalClassifier, CrossModalTransformerClassifier, accuracy, predict_from_scores,
                           predict_multichoice, predict_openended, read_predictions, write_predictions)


def test_multichoice_picks_largest_dot_product():
    f = torch.tensor([1.0, 2.0])
    F_A = torch.tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    p = predict_multichoice(f, F_A)
    assert p.chosen == 1 and p.scores == [1.0, 2.0, -3.0]
    per = torch.tensor([[5.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    assert predict_multichoice(per, F_A).chosen == 0
    with pytest.raises(ValueError):
        predict_multichoice(f, F_A[:1])


def test_ties_go_to_first_index():
    assert predict_from_scores([0.3, 0.7, 0.7]).chosen == 1
    assert predict_from_scores([1.0, 1.0, 1.0]).chosen == 0


def test_openended_joint_product_can_flip_signs():
    f_qv = torch.tensor([1.0, 0.0])
    f_q = torch.tensor([0.0, 1.0])
    F_A = torch.tensor([[2.0, 1.0], [-3.0, -2.0]])
    # video alone prefers answer 0; product of two negatives makes answer 1 win
    assert predict_openended(f_qv, f_q, F_A, use_qa_shortcut=False).chosen == 0
    joint = predict_openended(f_qv, f_q, F_A)
    assert joint.chosen == 1 and joint.scores == [2.0, 6.0]


def test_accuracy():
    assert accuracy([1, 2, 3], [1, 0, 3]) == pytest.approx(2 / 3)
    assert accuracy([], []) == 0.0
    with pytest.raises(ValueError):
        accuracy([1], [1, 2])


def test_classifiers_shapes_and_mask():
    torch.manual_seed(0)
    cls = CrossModalTransformerClassifier(8, 1, 2, k_max=4)
    clips = torch.randn(2, 3, 4, 8)
    tokens = torch.randn(2, 3, 5, 8)
    mask = torch.ones(2, 3, 5, dtype=torch.bool)
    mask[..., 3:] = False
    out = cls(clips, tokens, mask)
    assert out.shape == (2, 3)
    tokens2 = tokens.clone()
    tokens2[..., 3:, :] += 10.0
    assert torch.allclose(cls(clips, tokens2, mask), out, atol=1e-5)
    assert CrossModalClassifier(8)(torch.randn(2, 3, 8)).shape == (2, 3)


def test_prediction_file_roundtrip(tmp_path):
    rows = [("q1", predict_from_scores([0.1, 0.5])), ("q2", predict_from_scores(np.array([2.0, -1.0])))]
    write_predictions(tmp_path / "p.jsonl", rows)
    back = read_predictions(tmp_path / "p.jsonl")
    assert back == [{"qid": "q1", "chosen": 1, "scores": [0.1, 0.5]},
                    {"qid": "q2", "chosen": 0, "scores": [2.0, -1.0]}]
