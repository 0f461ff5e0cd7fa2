import numpy as np
import pytest
import torch

from actionpose.config import ModelConfig
from actionpose.model import ActionPose, expected_parameter_count, finetune_parameter_names

CFG = ModelConfig(C_f=32, T_max=12, l1=2, l2=1, l3=2, heads=4, vocab_size=20, text_max_len=8, align_dim=16)


@pytest.fixture
def model():
    torch.manual_seed(0)
    return ActionPose(CFG).eval()


def inputs(B=2, T=9, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(B, T, 17, 3, generator=g) * 2 - 1
    x[..., 2] = 1.0
    return x


def test_pose_encode_shapes(model):
    tap, final = model.pose_encode(inputs(T=9))
    assert tap.shape == final.shape == (2, 10, 17, CFG.C_f)


def test_pose_encode_rejects_bad_shapes(model):
    with pytest.raises(ValueError):
        model.pose_encode(torch.zeros(1, 13, 17, 3))
    with pytest.raises(ValueError):
        model.pose_encode(torch.zeros(1, 5, 16, 3))


def test_frame_permutation_equivariance(model):
    model.pose_encoder.use_temporal_pos = False
    x = inputs(T=8)
    perm = torch.randperm(8, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        tap, final = model.pose_encode(x)
        tap_p, final_p = model.pose_encode(x[:, perm])
    torch.testing.assert_close(final_p[:, 1:], final[:, 1:][:, perm], atol=1e-5, rtol=1e-5)
    torch.testing.assert_close(tap_p[:, 0], tap[:, 0], atol=1e-5, rtol=1e-5)


def test_all_masked_input_is_finite(model):
    with torch.no_grad():
        tap, final = model.pose_encode(torch.zeros(1, 6, 17, 3))
        h = model.embed_pose(torch.zeros(1, 6, 17, 3))
    assert torch.isfinite(tap).all() and torch.isfinite(final).all() and torch.isfinite(h).all()


def test_text_encode(model):
    ids = torch.tensor([[2, 5, 3, 0, 0], [2, 7, 8, 9, 3]])
    with torch.no_grad():
        a = model.text_encode(ids)
        b = model.text_encode(ids)
    assert a.shape == (2, 5, CFG.C_f)
    torch.testing.assert_close(a, b, rtol=0, atol=0)
    with torch.no_grad():
        alone = model.text_encode(ids[:1, :3])
    torch.testing.assert_close(alone[0], a[0, :3], atol=1e-5, rtol=1e-5)
    with pytest.raises(ValueError):
        model.text_encode(torch.ones(1, 9, dtype=torch.long))


def test_pooled_embeddings_unit_norm(model):
    with torch.no_grad():
        hp = model.embed_pose(inputs())
        hw = model.embed_text(torch.tensor([[2, 5, 3], [2, 6, 3]]))
    assert hp.shape == hw.shape == (2, CFG.align_dim)
    np.testing.assert_allclose(hp.norm(dim=-1).numpy(), 1.0, atol=1e-6)
    np.testing.assert_allclose(hw.norm(dim=-1).numpy(), 1.0, atol=1e-6)


def test_uniform_joint_weights_average(model):
    tok = torch.randn(3, 17, CFG.C_f)
    torch.testing.assert_close(model.pose_pool.reduce(tok), tok.mean(dim=1), atol=1e-6, rtol=1e-6)


def test_regress_shape_and_zero_head(model):
    x = inputs(T=7)
    assert model.regress(x).shape == (2, 7, 17, 3)
    with torch.no_grad():
        model.head.linear.weight.zero_()
        model.head.linear.bias.zero_()
        assert torch.count_nonzero(model.regress(x)) == 0


def test_parameter_count_closed_form():
    for cfg in (CFG, ModelConfig(), ModelConfig(C_f=48, l1=3, l2=2, heads=6, align_dim=24, pool_layers=1)):
        m = ActionPose(cfg)
        assert sum(p.numel() for p in m.parameters()) == expected_parameter_count(cfg)


def test_every_parameter_gets_gradient(model):
    model.train()
    x = inputs(B=3)
    ids = torch.tensor([[[2, 5, 3], [2, 6, 3]], [[2, 7, 3], [2, 8, 3]], [[2, 9, 3], [2, 10, 3]]])
    h_p, h_w, pred = model(x, ids)
    s = torch.softmax(torch.einsum("bd,bkd->bk", h_p, h_w) / 0.1, -1)
    loss = -torch.log(s[:, 0]).mean() + pred.square().mean() + pred.diff(dim=1).abs().mean()
    loss.backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not torch.any(p.grad != 0)]
    assert dead == []


def test_pooling_does_not_affect_regression(model):
    x = inputs()
    with torch.no_grad():
        before = model.regress(x)
        for p in list(model.pose_pool.parameters()) + list(model.text_pool.parameters()):
            p.add_(torch.randn_like(p))
        after = model.regress(x)
    torch.testing.assert_close(before, after, rtol=0, atol=0)


def test_finetune_names_cover_pose_encoder_and_head(model):
    names = set(finetune_parameter_names(model))
    expected = {n for n, _ in model.named_parameters() if n.startswith(("pose_encoder.", "head."))}
    assert names == expected
    assert not any(n.startswith(("text_encoder.", "pose_pool.", "text_pool.")) for n in names)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(C_f=30, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(l1=0)
