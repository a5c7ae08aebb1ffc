import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vaffnet.errors import RangeError
from vaffnet.network import (
    EncoderConfig,
    FUSION_MODES,
    VAFFNet,
    count_parameters,
    fuse,
    independent_encoder_parameter_count,
    predict_triplet,
)


def small(mode="vgm", **kw):
    torch.manual_seed(0)
    cfg = EncoderConfig(topology="reduced", n_ch=8, gate_hidden=8, **kw)
    return VAFFNet(cfg, fusion_mode=mode)


def batch(b=2, h=32, w=32, seed=0):
    return torch.rand(b, 3, h, w, generator=torch.Generator().manual_seed(seed))


@pytest.mark.parametrize("mode", FUSION_MODES)
def test_shapes_and_ranges(mode):
    net = small(mode)
    out = net(batch(h=40, w=48))
    assert out.rv_prob.shape == out.faz_prob.shape == out.rvj_heatmap.shape == (2, 40, 48)
    assert out.rvj_grid.shape == (2, 5, 6, 4)
    for t in (out.rv_prob, out.faz_prob, out.rvj_heatmap, out.rvj_grid, *out.gates.values()):
        assert float(t.min()) > 0 and float(t.max()) < 1
    assert set(out.gates) == ({"rv", "faz", "rvj"} if mode == "vgm" else set())


def test_fused_features_shape():
    feats, first = small().encode(batch(h=24, w=24))
    assert len(feats) == 3 and all(f.shape == (2, 8, 24, 24) for f in feats)
    assert len(first) == 3


def test_non_power_of_two_size():
    out = small()(batch(b=1, h=36, w=36))
    assert out.rvj_grid.shape == (1, 5, 5, 4)


def test_range_error():
    with pytest.raises(RangeError):
        small()(batch() * 2)


def test_zero_input_gives_finite_gates():
    net = small().eval()
    out = net(torch.zeros(1, 3, 16, 16))
    for g in out.gates.values():
        assert torch.isfinite(g).all() and float(g.min()) > 0 and float(g.max()) < 1


def test_three_independent_gates_and_heads():
    net = small()
    ids = {id(p) for g in net.gates.values() for p in g.parameters()}
    assert len(ids) == sum(len(list(g.parameters())) for g in net.gates.values())
    rv = {id(p) for p in net.rv_head.parameters()}
    assert rv.isdisjoint(id(p) for p in net.faz_head.parameters())


def test_eval_determinism_and_layer_order_matters():
    net = small().eval()
    x = batch(b=1)
    with torch.no_grad():
        a, b = net(x), net(x)
        swapped = net(x[:, [0, 2, 1]])
    assert torch.equal(a.rv_prob, b.rv_prob) and torch.equal(a.rvj_grid, b.rvj_grid)
    assert not torch.allclose(a.rv_prob, swapped.rv_prob)


def test_single_ivc_replicates():
    net = small(input_mode="single_ivc").eval()
    x = batch(b=1)
    y = x.clone()
    y[:, 1:] = torch.rand(1, 2, 32, 32)
    with torch.no_grad():
        assert torch.equal(net(x).rv_prob, net(y).rv_prob)


def test_triplicate_first_layers_differ():
    net = small(input_mode="triplicate")
    assert net.cfg.first_layer_init == ("random", "xavier", "he")
    x = batch(b=1)
    x[:, 1:] = x[:, :1]
    feats, _ = net.encode(x)
    assert not torch.allclose(feats[0], feats[1])


def rand_feats(seed, shape=(2, 5, 6, 7)):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(*shape, generator=g, dtype=torch.float64) for _ in range(3)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_fusion_degeneracy(seed):
    f = rand_feats(seed)
    ones = torch.ones(2, 3, 6, 7, dtype=torch.float64)
    torch.testing.assert_close(fuse(ones, f, "vgm"), fuse(None, f, "sum"), rtol=1e-6, atol=0)
    torch.testing.assert_close(fuse(ones / 3, f, "vgm"), fuse(None, f, "avg"), rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("i", range(3))
def test_gate_selector(i):
    f = rand_feats(i)
    gate = torch.zeros(2, 3, 6, 7, dtype=torch.float64)
    gate[:, i] = 1
    base = fuse(gate, f, "vgm")
    assert torch.equal(base, f[i])
    perturbed = [x if k == i else x + 100 for k, x in enumerate(f)]
    assert torch.equal(fuse(gate, perturbed, "vgm"), base)


def test_elementwise_modes():
    f = rand_feats(3)
    s = torch.stack(f)
    assert torch.equal(fuse(None, f, "max"), s.max(0).values)
    assert torch.equal(fuse(None, f, "min"), s.min(0).values)
    with pytest.raises(ValueError):
        fuse(None, f, "vgm")


def test_weight_sharing_after_steps():
    net = small()
    opt = torch.optim.Adam(net.parameters(), lr=1e-2)
    for step in range(3):
        out = net(batch(seed=step))
        loss = out.rv_prob.mean() + out.rvj_grid.mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    enc = [net.encoder_parameters(i) for i in range(3)]
    for k in enc[0]:
        if k.startswith("body."):
            assert torch.equal(enc[0][k], enc[1][k]) and torch.equal(enc[0][k], enc[2][k])
    assert not torch.equal(enc[0]["first.conv.weight"], enc[1]["first.conv.weight"])


def test_parameter_sharing_is_smaller():
    for topo in ("reduced", "resnet50"):
        cfg = EncoderConfig(topology=topo)
        net = VAFFNet(cfg)
        enc = sum(count_parameters(b) for b in net.first_blocks) + count_parameters(net.encoder)
        assert enc < independent_encoder_parameter_count(cfg)


def test_reduced_is_much_smaller():
    full = count_parameters(VAFFNet(EncoderConfig(topology="resnet50")).encoder.trunk)
    red = count_parameters(VAFFNet(EncoderConfig(topology="reduced")).encoder.trunk)
    assert red * 8 <= full


def test_predict_triplet_numpy(small_phantoms):
    out = predict_triplet(small(), small_phantoms[0].triplet)
    assert isinstance(out.rv_prob, np.ndarray) and out.rv_prob.shape == (64, 64)
    assert out.rvj_grid.shape == (8, 8, 4)
