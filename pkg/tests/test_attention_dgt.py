import numpy as np
import pytest
import torch

from covgt.attention import MHSA, AttentionConfig, SelfAttentionLayer
from covgt.dgt import (DynamicGraphTransformer, EdgeTransformer, FrameAggregate, FrameAppearanceFusion,
                       NodeTransformer, SpatialGraphConv, clip_pool, dgt_forward, mean_pool_regions)
from covgt.errors import ConfigError


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def test_attention_config_validation():
    with pytest.raises(ConfigError):
        AttentionConfig(layers=1, heads=3, model_dim=8)
    with pytest.raises(ConfigError):
        AttentionConfig(layers=0, heads=2, model_dim=8)
    assert AttentionConfig(1, 4, 64).key_dim == 16


def test_attention_rows_sum_to_one_and_mask_respected():
    layer = SelfAttentionLayer(8, 2)
    x = torch.randn(3, 5, 8)
    mask = torch.tensor([[True] * 5, [True, True, False, False, False], [True, False, True, False, True]])
    A = layer.attention(x, mask)
    assert A.shape == (3, 2, 5, 5)
    assert torch.allclose(A.sum(-1), torch.ones(3, 2, 5), atol=1e-6)
    assert (A[1, :, :, 2:] == 0).all()
    assert (A[2, :, :, 1] == 0).all()


@torch.no_grad()
def test_attention_matches_manual_oracle():
    layer = SelfAttentionLayer(4, 1).double()
    x = torch.randn(3, 4, dtype=torch.float64)
    q = x @ layer.q.weight.T + layer.q.bias
    k = x @ layer.k.weight.T
    v = x @ layer.v.weight.T + layer.v.bias
    s = (q @ k.T / 2.0).numpy()
    e = np.exp(s - s.max(1, keepdims=True))
    A = e / e.sum(1, keepdims=True)
    pre = torch.from_numpy(A) @ v @ layer.out.weight.T + layer.out.bias + x
    expected = torch.nn.functional.layer_norm(pre, (4,), layer.norm.weight, layer.norm.bias)
    assert torch.allclose(layer(x), expected, atol=1e-10)


def test_mhsa_is_permutation_equivariant():
    m = MHSA(AttentionConfig(2, 2, 8)).double()
    x = torch.randn(6, 8, dtype=torch.float64)
    p = torch.randperm(6)
    assert torch.allclose(m(x)[p], m(x[p]), atol=1e-12)


def test_mhsa_errors():
    m = MHSA(AttentionConfig(1, 2, 8))
    with pytest.raises(ValueError):
        m(torch.zeros(2, 0, 8))
    with pytest.raises(ConfigError):
        m(torch.zeros(2, 3, 6))


def test_node_transformer_runs_along_time_per_object():
    nt = NodeTransformer(AttentionConfig(1, 2, 8)).double()
    x = torch.randn(4, 3, 8, dtype=torch.float64)  # [l_c, n, d]
    out = nt(x)
    # Changing object 2 in any frame leaves objects 0 and 1 untouched.
    y = x.clone()
    y[:, 2] += 1.0
    assert torch.allclose(nt(y)[:, :2], out[:, :2])
    assert not torch.allclose(nt(y)[:, 2], out[:, 2])


def test_edge_transformer_width_and_renorm():
    with pytest.raises(ConfigError):
        EdgeTransformer(3, AttentionConfig(1, 2, 8))
    et = EdgeTransformer(3, AttentionConfig(1, 3, 9))
    R = torch.softmax(torch.randn(2, 4, 3, 3), -1)
    out = et(R)
    assert out.shape == R.shape
    assert torch.allclose(out.sum(-1), torch.ones(2, 4, 3), atol=1e-6)


def test_graph_conv_matches_loop_oracle():
    gcn = SpatialGraphConv(4, layers=2).double()
    F_ = torch.randn(3, 4, dtype=torch.float64)
    R = torch.softmax(torch.randn(3, 3, dtype=torch.float64), -1)
    W = [w.detach().numpy() for w in gcn.weights]
    f, r = F_.numpy(), R.numpy()
    h = f.copy()
    for w in W:
        nxt = np.zeros_like(h)
        for i in range(3):
            msg = h[i].copy()
            for j in range(3):
                msg = msg + r[i, j] * h[j]
            nxt[i] = np.maximum(msg @ w, 0.0)
        h = nxt
    np.testing.assert_allclose(gcn(F_, R).detach().numpy(), f + h, atol=1e-6)


def test_frame_aggregate_weights_sum_to_one():
    agg = FrameAggregate(8)
    nodes = torch.randn(5, 4, 8)
    a = agg.weights(nodes)
    assert torch.allclose(a.sum(-1), torch.ones(5), atol=1e-6)
    assert torch.allclose(agg(nodes), (a.unsqueeze(-1) * nodes).sum(-2))


def test_fusion_dimension_check():
    fuse = FrameAppearanceFusion(4, 8)
    assert fuse(torch.randn(3, 8), torch.randn(3, 4)).shape == (3, 8)
    with pytest.raises(ConfigError):
        fuse(torch.randn(3, 8), torch.randn(3, 5))


def test_clip_pool_is_frame_mean():
    f = torch.randn(2, 3, 4, 8)
    assert torch.allclose(clip_pool(f), f.mean(-2))


def test_dgt_edge_heads_must_divide_n_squared():
    with pytest.raises(ConfigError, match="divide"):
        DynamicGraphTransformer(8, 3, 4, heads=2, edge_heads=2)


def _dgt(**kw):
    args = dict(d=8, n=3, dim_a=4, layers=1, heads=2, edge_heads=3)
    args.update(kw)
    return DynamicGraphTransformer(**args).double()


def test_dgt_shapes_and_aux_normalization():
    dgt = _dgt()
    nodes = torch.randn(2, 4, 2, 3, 8, dtype=torch.float64)  # [B, k, l_c, n, d]
    app = torch.randn(2, 4, 2, 4, dtype=torch.float64)
    out = dgt(nodes, app, keep_aux=True)
    assert out.clip_vectors.shape == (2, 4, 8)
    assert out.frame_vectors.shape == (2, 4, 2, 8)
    for key in ("R_init", "R_updated", "R_edge"):
        assert torch.allclose(out.aux[key].sum(-1), torch.ones(2, 4, 2, 3, dtype=torch.float64), atol=1e-6)
    assert torch.allclose(out.aux["alpha"].sum(-1), torch.ones(2, 4, 2, dtype=torch.float64), atol=1e-6)


def test_dgt_ablation_flags_drop_modules():
    dgt = _dgt(use_ntrans=False, use_etrans=False)
    assert dgt.node_trans is None and dgt.edge_trans is None
    names = [n for n, _ in dgt.named_parameters()]
    assert not any(n.startswith(("node_trans", "edge_trans")) for n in names)
    out = dgt(torch.randn(1, 2, 2, 3, 8, dtype=torch.float64), torch.randn(1, 2, 2, 4, dtype=torch.float64))
    assert out.clip_vectors.shape == (1, 2, 8)


def test_dgt_clip_is_frame_order_invariant():
    # No positions inside a clip and a mean over frames: reversing frames
    # within each clip leaves the clip vectors unchanged.
    dgt = _dgt()
    nodes = torch.randn(1, 2, 3, 3, 8, dtype=torch.float64)
    app = torch.randn(1, 2, 3, 4, dtype=torch.float64)
    a = dgt(nodes, app).clip_vectors
    b = dgt(nodes.flip(2), app.flip(2)).clip_vectors
    assert torch.allclose(a, b, atol=1e-10)


def test_mean_pool_ablation():
    nodes = torch.randn(2, 3, 4, 5, 8)
    out = mean_pool_regions(nodes)
    assert torch.allclose(out.clip_vectors, nodes.mean(dim=(-2, -3)), atol=1e-6)
    assert dgt_forward(nodes, torch.zeros(2, 3, 4, 6), None).clip_vectors.shape == (2, 3, 8)


def test_dgt_frame_hook_applied_before_clip_pool():
    dgt = _dgt()
    nodes = torch.randn(1, 2, 2, 3, 8, dtype=torch.float64)
    app = torch.randn(1, 2, 2, 4, dtype=torch.float64)
    base = dgt(nodes, app)
    shifted = dgt_forward(nodes, app, dgt, interaction_hook=lambda f: f + 1.0)
    assert torch.allclose(shifted.clip_vectors, base.clip_vectors + 1.0)
