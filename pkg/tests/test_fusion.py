import numpy as np
import pytest
import torch

from covgt.attention import AttentionConfig
from covgt.dgt import DgtOutput
from covgt.errors import ConfigError
from covgt.fusion import (GlobalTransformer, PositionTable, cross_modal_interact, interact_at_level,
                          pool_multichoice_video, sinusoid_table)


def test_interaction_matches_oracle_and_beta_normalized():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4))
    Xq = rng.normal(size=(5, 4))
    out, beta = cross_modal_interact(torch.tensor(x), torch.tensor(Xq), return_weights=True)
    for i in range(3):
        logits = Xq @ x[i]
        w = np.exp(logits - logits.max())
        w /= w.sum()
        np.testing.assert_allclose(out[i].numpy(), x[i] + w @ Xq, atol=1e-12)
    assert torch.allclose(beta.sum(-1), torch.ones(3, dtype=torch.float64), atol=1e-6)


def test_interaction_single_vector_and_mask():
    x = torch.randn(4)
    Xq = torch.randn(3, 4)
    mask = torch.tensor([True, False, False])
    out, beta = cross_modal_interact(x, Xq, mask, return_weights=True)
    assert beta.tolist() == [1.0, 0.0, 0.0]
    assert torch.allclose(out, x + Xq[0])
    with pytest.raises(ValueError):
        cross_modal_interact(x, torch.zeros(0, 4))


def test_sinusoid_table_values():
    t = sinusoid_table(3, 4)
    assert t[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert t[1, 0].item() == pytest.approx(np.sin(1.0), abs=1e-7)
    assert t[1, 3].item() == pytest.approx(np.cos(1.0 / 100.0), abs=1e-7)


def test_position_table_limit():
    with pytest.raises(ConfigError):
        PositionTable(4, 8)(5)


def test_global_transformer_sees_clip_order():
    torch.manual_seed(0)
    g = GlobalTransformer(AttentionConfig(1, 2, 8), k_max=8).double()
    clips = torch.randn(2, 4, 8, dtype=torch.float64)
    assert g(clips).shape == (2, 8)
    assert not torch.allclose(g(clips), g(clips.flip(1)))


def test_multichoice_pooling():
    per = torch.tensor([[[1.0, 5.0], [3.0, 2.0]]])
    assert pool_multichoice_video(per).tolist() == [[3.0, 5.0]]
    assert pool_multichoice_video(per, "per_candidate") is per
    with pytest.raises(ConfigError):
        pool_multichoice_video(per, "mean")


def test_interact_at_level_counts_and_passthrough():
    clips = torch.randn(2, 3, 8)
    frames = torch.randn(2, 3, 4, 8)
    out = DgtOutput(clips, frames)
    Xq = torch.randn(2, 5, 8)
    assert interact_at_level(out, Xq, "clip").aux["interactions"] == 3
    both = interact_at_level(out, Xq, "frame+clip")
    assert both.aux["interactions"] == 3 * 4 + 3
    for p in ("none", "object"):
        same = interact_at_level(out, Xq, p)
        assert torch.equal(same.clip_vectors, clips)
    with pytest.raises(ConfigError):
        interact_at_level(out, Xq, "token")
