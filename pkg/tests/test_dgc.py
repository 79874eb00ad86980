import numpy as np
import pytest
import torch

import oracles
from conftest import directional_gradcheck
from tvsd.dgc import (
    DualGatedCoAttention,
    affinity,
    channel_gate,
    coattend,
    dgc_forward,
    flatten_spatial,
    fuse,
    refine,
    spatial_gate,
    unflatten_spatial,
)
from tvsd.errors import NumericError, ShapeError

D = torch.float64


def randn(*shape, seed=0):
    return torch.randn(*shape, dtype=D, generator=torch.Generator().manual_seed(seed))


def oracle_params(module):
    p = {k: v.tolist() for k, v in module.state_dict().items()}
    p.setdefault("refine_a2.weight", p["refine_a1.weight"])
    p.setdefault("refine_a2.bias", p["refine_a1.bias"])
    return p


def make_module(c, seed=0, share_refine=True):
    torch.manual_seed(seed)
    return DualGatedCoAttention(c, share_refine=share_refine).double()


# --- affinity --------------------------------------------------------------


def test_flatten_roundtrip_row_major():
    e = torch.arange(24, dtype=D).reshape(1, 2, 3, 4)
    flat = flatten_spatial(e)
    assert flat.shape == (1, 12, 2)
    assert flat[0, 1 * 4 + 2].tolist() == [e[0, 0, 1, 2].item(), e[0, 1, 1, 2].item()]
    torch.testing.assert_close(unflatten_spatial(flat, 3, 4), e, rtol=0, atol=0)


def test_affinity_identity():
    # WH = C = 4, with E-hat the identity: position i carries unit vector i.
    e = torch.eye(4, dtype=D).reshape(1, 4, 2, 2)
    a = affinity(e, e, torch.eye(4, dtype=D))
    torch.testing.assert_close(a[0], torch.eye(4, dtype=D), rtol=0, atol=0)


def test_affinity_zero_features():
    a = affinity(torch.zeros(1, 3, 2, 2, dtype=D), randn(1, 3, 2, 2), randn(3, 3, seed=1))
    assert (a == 0).all()


def test_affinity_matches_oracle():
    e1, e2, m = randn(1, 3, 2, 2, seed=1), randn(1, 3, 2, 2, seed=2), randn(3, 3, seed=3)
    expected = oracles.affinity(e1[0].tolist(), e2[0].tolist(), m.tolist())
    np.testing.assert_allclose(affinity(e1, e2, m)[0].numpy(), expected, rtol=0, atol=1e-12)


def test_affinity_shape_errors():
    with pytest.raises(ShapeError):
        affinity(randn(1, 3, 2, 2), randn(1, 3, 2, 3), randn(3, 3))
    with pytest.raises(ShapeError):
        affinity(randn(1, 3, 2, 2), randn(1, 3, 2, 2), randn(4, 4))


# --- coattend --------------------------------------------------------------


def test_coattend_uniform_affinity_gives_partner_mean():
    e1, e2 = randn(1, 3, 2, 3, seed=1), randn(1, 3, 2, 3, seed=2)
    h1, h2 = coattend(torch.zeros(1, 6, 6, dtype=D), e1, e2)
    torch.testing.assert_close(h1, e2.mean(dim=(2, 3), keepdim=True).expand_as(h1), rtol=0, atol=1e-15)
    torch.testing.assert_close(h2, e1.mean(dim=(2, 3), keepdim=True).expand_as(h2), rtol=0, atol=1e-15)


def test_coattend_constant_partner():
    v = torch.tensor([0.3, -1.2, 2.0], dtype=D)
    e2 = v[None, :, None, None].expand(1, 3, 3, 3).contiguous()
    h1, _ = coattend(randn(1, 9, 9, seed=4) * 5, randn(1, 3, 3, 3), e2)
    torch.testing.assert_close(h1, e2, rtol=0, atol=1e-14)


def test_coattend_matches_oracle():
    e1, e2, m = randn(1, 3, 2, 2, seed=5), randn(1, 3, 2, 2, seed=6), randn(3, 3, seed=7)
    a = affinity(e1, e2, m)
    h1, h2 = coattend(a, e1, e2)
    a_list = a[0].tolist()
    np.testing.assert_allclose(h1[0].numpy(), oracles.attend(a_list, e2[0].tolist()), rtol=0, atol=1e-12)
    np.testing.assert_allclose(
        h2[0].numpy(), oracles.attend(oracles.transpose(a_list), e1[0].tolist()), rtol=0, atol=1e-12
    )


def test_softmax_rows_sum_to_one():
    # Attending over an all-ones partner returns the row sums of the softmax.
    for seed in range(20):
        a = randn(2, 12, 12, seed=seed) * 30
        ones = torch.ones(2, 5, 3, 4, dtype=D)
        h1, h2 = coattend(a, ones, ones)
        assert (h1 - 1).abs().max() < 1e-6 and (h2 - 1).abs().max() < 1e-6


def test_coattend_convex_combination_bounds():
    for seed in range(100):
        e1, e2 = randn(1, 4, 3, 3, seed=2 * seed), randn(1, 4, 3, 3, seed=2 * seed + 1)
        h1, h2 = coattend(affinity(e1, e2, randn(4, 4, seed=seed) * 3), e1, e2)
        for h, partner in ((h1, e2), (h2, e1)):
            lo = partner.amin(dim=(2, 3), keepdim=True)
            hi = partner.amax(dim=(2, 3), keepdim=True)
            assert (h >= lo - 1e-12).all() and (h <= hi + 1e-12).all()


def test_coattend_shift_invariance():
    e1, e2 = randn(1, 4, 3, 3, seed=1), randn(1, 4, 3, 3, seed=2)
    a = affinity(e1, e2, randn(4, 4, seed=3))
    for c in (-50.0, 0.5, 123.0):
        for base, shifted in zip(coattend(a, e1, e2), coattend(a + c, e1, e2)):
            torch.testing.assert_close(base, shifted, rtol=0, atol=1e-9)


def test_coattend_rejects_non_finite():
    a = torch.zeros(1, 4, 4, dtype=D)
    a[0, 1, 2] = float("nan")
    with pytest.raises(NumericError):
        coattend(a, randn(1, 2, 2, 2), randn(1, 2, 2, 2))


def test_coattend_shape_error():
    with pytest.raises(ShapeError):
        coattend(torch.zeros(1, 5, 5, dtype=D), randn(1, 2, 2, 2), randn(1, 2, 2, 2))


# --- fuse ------------------------------------------------------------------


def test_fuse_zero():
    q = fuse(torch.zeros(1, 2, 3, 3, dtype=D), torch.zeros(1, 2, 3, 3, dtype=D), randn(2, 4, 3, 3), None)
    assert (q == 0).all()


def test_fuse_antisymmetric_weights_cancel():
    half = randn(2, 2, 3, 3, seed=1)
    weight = torch.cat([half, -half], dim=1)
    bias = torch.tensor([0.25, -1.5], dtype=D)
    h = randn(1, 2, 4, 4, seed=2)
    q = fuse(h, h, weight, bias)
    torch.testing.assert_close(q, bias[None, :, None, None].expand_as(q), rtol=0, atol=1e-15)


def test_fuse_matches_oracle():
    h1, h2 = randn(1, 2, 3, 3, seed=3), randn(1, 2, 3, 3, seed=4)
    w, b = randn(2, 4, 3, 3, seed=5), randn(2, seed=6)
    expected = oracles.conv2d(h1[0].tolist() + h2[0].tolist(), w.tolist(), b.tolist())
    np.testing.assert_allclose(fuse(h1, h2, w, b)[0].numpy(), expected, rtol=0, atol=1e-12)


def test_fuse_shape_error():
    with pytest.raises(ShapeError):
        fuse(randn(1, 2, 3, 3), randn(1, 2, 3, 4), randn(2, 4, 3, 3), None)


# --- gates -----------------------------------------------------------------


def test_gates_zero_params_half():
    m = make_module(4)
    with torch.no_grad():
        for name in ("spatial_a1", "spatial_a2", "channel_a1", "channel_a2"):
            for p in getattr(m, name).parameters():
                p.zero_()
    for g in m.gates(randn(2, 4, 3, 3)):
        assert (g.spatial == 0.5).all() and (g.channel == 0.5).all()


def test_gates_saturate_with_large_bias():
    q = randn(1, 4, 3, 3)
    k = spatial_gate(q, torch.zeros(1, 4, 1, 1, dtype=D), torch.tensor([20.0], dtype=D))
    u = channel_gate(q, torch.zeros(4, 4, dtype=D), torch.full((4,), 20.0, dtype=D))
    assert (k > 1 - 1e-8).all() and (u > 1 - 1e-8).all()
    k_lo = spatial_gate(q, torch.zeros(1, 4, 1, 1, dtype=D), torch.tensor([10.0], dtype=D))
    assert (k_lo < k).all()


def test_gates_strictly_inside_unit_interval():
    m = make_module(4, seed=3)
    for g in m.gates(randn(3, 4, 5, 5) * 3):
        for t in (g.spatial, g.channel):
            assert ((t > 0) & (t < 1)).all()


def test_gates_match_oracle():
    m = make_module(3, seed=2)
    q = randn(1, 3, 3, 2, seed=9)
    g1, g2 = m.gates(q)
    ql = q[0].tolist()
    for g, sp, ch in ((g1, m.spatial_a1, m.channel_a1), (g2, m.spatial_a2, m.channel_a2)):
        sp_expected = oracles.spatial_gate(ql, sp.weight.tolist(), sp.bias.tolist())
        ch_expected = oracles.channel_gate(ql, ch.weight.tolist(), ch.bias.tolist())
        np.testing.assert_allclose(g.spatial[0, 0].detach().numpy(), sp_expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(g.channel[0, :, 0, 0].detach().numpy(), ch_expected, rtol=0, atol=1e-12)


def test_gates_have_separate_parameters():
    m = make_module(4, seed=1)
    g1, g2 = m.gates(randn(1, 4, 3, 3))
    assert not torch.equal(g1.spatial, g2.spatial)
    assert not torch.equal(g1.channel, g2.channel)


# --- refine ----------------------------------------------------------------


def test_refine_identity_gates():
    e, h = randn(1, 2, 3, 3, seed=1), randn(1, 2, 3, 3, seed=2)
    w, b = randn(2, 4, 3, 3, seed=3), randn(2, seed=4)
    ones_k, ones_u = torch.ones(1, 1, 3, 3, dtype=D), torch.ones(1, 2, 1, 1, dtype=D)
    torch.testing.assert_close(refine(e, h, ones_k, ones_u, w, b), refine(e, h, None, None, w, b), rtol=0, atol=0)


def test_refine_zero_spatial_gate():
    e, h = randn(1, 2, 3, 3, seed=1), randn(1, 2, 3, 3, seed=2)
    w, b = randn(2, 4, 3, 3, seed=3), randn(2, seed=4)
    out = refine(e, h, torch.zeros(1, 1, 3, 3, dtype=D), torch.rand(1, 2, 1, 1, dtype=D), w, b)
    torch.testing.assert_close(out, refine(e, torch.zeros_like(h), None, None, w, b), rtol=0, atol=0)


def test_refine_matches_oracle():
    e, h = randn(1, 2, 3, 2, seed=1), randn(1, 2, 3, 2, seed=2)
    k, u = torch.rand(1, 1, 3, 2, dtype=D), torch.rand(1, 2, 1, 1, dtype=D)
    w, b = randn(2, 4, 3, 3, seed=3), randn(2, seed=4)
    expected = oracles.refine(e[0].tolist(), h[0].tolist(), k[0, 0].tolist(), u[0, :, 0, 0].tolist(), w.tolist(), b.tolist())
    np.testing.assert_allclose(refine(e, h, k, u, w, b)[0].numpy(), expected, rtol=0, atol=1e-12)


def test_refine_shape_error():
    with pytest.raises(ShapeError):
        refine(randn(1, 2, 3, 3), randn(1, 3, 3, 3), None, None, randn(2, 5, 3, 3), None)


# --- composition -----------------------------------------------------------


def _mirror_gates(m):
    with torch.no_grad():
        m.spatial_a2.load_state_dict(m.spatial_a1.state_dict())
        m.channel_a2.load_state_dict(m.channel_a1.state_dict())


def test_identical_inputs_symmetric_params_give_identical_outputs():
    # M = 0.5 I keeps A bitwise symmetric, so equality is exact.
    m = make_module(4, seed=5)
    _mirror_gates(m)
    with torch.no_grad():
        m.weight.copy_(0.5 * torch.eye(4, dtype=D))
    e = randn(2, 4, 3, 3, seed=6)
    c1, c2 = dgc_forward(e, e.clone(), m)
    torch.testing.assert_close(c1, c2, rtol=0, atol=0)


def test_identical_inputs_general_symmetric_weight():
    # A general symmetric M is only symmetric up to matmul rounding.
    m = make_module(4, seed=5)
    _mirror_gates(m)
    with torch.no_grad():
        m.weight.copy_(0.5 * (m.weight + m.weight.T))
    e = randn(2, 4, 3, 3, seed=6)
    c1, c2 = dgc_forward(e, e.clone(), m)
    torch.testing.assert_close(c1, c2, rtol=0, atol=1e-14)


def test_without_dual_gate_is_plain_coattention_refinement():
    m = make_module(4, seed=7)
    e1, e2 = randn(1, 4, 3, 3, seed=1), randn(1, 4, 3, 3, seed=2)
    out = m(e1, e2, dual_gate=False)
    h1, h2 = coattend(affinity(e1, e2, m.weight), e1, e2)
    r = m.refine_a1
    expected1 = torch.nn.functional.conv2d(torch.cat([e1, h1], 1), r.weight, r.bias, padding=1)
    expected2 = torch.nn.functional.conv2d(torch.cat([e2, h2], 1), r.weight, r.bias, padding=1)
    torch.testing.assert_close(out.c1, expected1, rtol=0, atol=0)
    torch.testing.assert_close(out.c2, expected2, rtol=0, atol=0)
    assert out.gates1 is None and out.fused is None


@pytest.mark.parametrize("share_refine", [True, False])
@pytest.mark.parametrize("dual_gate", [True, False])
def test_end_to_end_4x4x8_matches_oracle(share_refine, dual_gate):
    m = make_module(8, seed=11, share_refine=share_refine)
    e1, e2 = randn(1, 8, 4, 4, seed=12), randn(1, 8, 4, 4, seed=13)
    c1, c2 = dgc_forward(e1, e2, m, dual_gate=dual_gate)
    o1, o2 = oracles.dgc(e1[0].tolist(), e2[0].tolist(), oracle_params(m), dual_gate)
    np.testing.assert_allclose(c1[0].detach().numpy(), o1, rtol=0, atol=1e-10)
    np.testing.assert_allclose(c2[0].detach().numpy(), o2, rtol=0, atol=1e-10)


def test_shared_refine_is_one_module():
    m = make_module(4)
    assert m.refine_a1 is m.refine_a2
    unshared = make_module(4, share_refine=False)
    assert unshared.refine_a1 is not unshared.refine_a2


def test_weight_matrix_init_bound():
    m = make_module(16, seed=0)
    assert m.weight.abs().max() <= (6.0 / 32) ** 0.5


@pytest.mark.parametrize("share_refine", [True, False])
def test_dgc_gradient_check_3x3x4(share_refine):
    m = make_module(4, seed=21, share_refine=share_refine)
    e1 = randn(1, 4, 3, 3, seed=22).requires_grad_()
    e2 = randn(1, 4, 3, 3, seed=23).requires_grad_()
    w1, w2 = randn(1, 4, 3, 3, seed=24), randn(1, 4, 3, 3, seed=25)

    def objective():
        c1, c2 = dgc_forward(e1, e2, m)
        return (c1 * w1).sum() + (c2 * w2).sum()

    params = dict(m.named_parameters())
    params.update(e1=e1, e2=e2)
    assert "weight" in params
    errors = directional_gradcheck(objective, params)
    assert max(errors.values()) < 1e-4, errors
