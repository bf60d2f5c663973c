import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sefpnet._validation import ConfigError, ShapeError
from sefpnet.isa import ISA, IFIRound, broadcast_enrollment, context_attention, context_interaction, convex_blend


def _rand(*shape, seed=0, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64) * scale


def _randomize(module, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.5)
    return module


def brute_force_ci(noisy, enroll):
    """Loop-based softmax(Y E^T) E on frame vectors [real bins, imag bins]."""
    y = noisy.numpy()
    e = enroll.numpy()
    ty, te, f = y.shape[1], e.shape[1], y.shape[2]
    out = np.zeros_like(y)
    for t in range(ty):
        yv = np.concatenate([y[0, t], y[1, t]])
        scores = []
        for s in range(te):
            ev = np.concatenate([e[0, s], e[1, s]])
            scores.append(sum(yv[i] * ev[i] for i in range(2 * f)))
        scores = np.array(scores)
        w = np.exp(scores - scores.max())
        w = w / w.sum()
        for s in range(te):
            out[0, t] += w[s] * e[0, s]
            out[1, t] += w[s] * e[1, s]
    return out


@pytest.mark.parametrize("seed", range(5))
def test_context_interaction_matches_brute_force_3x3(seed):
    noisy = _rand(1, 2, 3, 3, seed=seed)
    enroll = _rand(1, 2, 3, 3, seed=seed + 100)
    out = context_interaction(noisy, enroll)
    np.testing.assert_allclose(out[0].numpy(), brute_force_ci(noisy[0], enroll[0]), rtol=0, atol=1e-9)


def test_single_enrollment_frame_is_tiled_exactly():
    noisy = _rand(2, 2, 7, 5, seed=1)
    enroll = _rand(2, 2, 1, 5, seed=2)
    out = context_interaction(noisy, enroll)
    assert torch.equal(out, enroll.expand(-1, -1, 7, -1))


def test_dominant_frame_selected():
    enroll = _rand(1, 2, 3, 3, seed=3)
    for c in (10.0, 100.0):
        noisy = c * enroll[:, :, 1:2].expand(-1, -1, 4, -1)
        out = context_interaction(noisy, enroll)
        ref = brute_force_ci(noisy[0], enroll[0])
        np.testing.assert_allclose(out[0].numpy(), ref, atol=1e-9)
    # at the larger scale the attention is one-hot on the matching frame
    attn = context_attention(noisy, enroll)
    assert torch.all(attn.argmax(dim=-1) == 1)
    np.testing.assert_allclose(out[0].numpy(), enroll[0, :, 1:2].expand(-1, 4, -1).numpy(), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 12), st.integers(1, 12), st.integers(1, 17), st.integers(0, 2**31 - 1))
def test_attention_rows_sum_to_one(b, ty, te, f, seed):
    attn = context_attention(_rand(b, 2, ty, f, seed=seed, scale=3), _rand(b, 2, te, f, seed=seed + 1, scale=3))
    assert attn.shape == (b, ty, te)
    assert float((attn.sum(-1) - 1).abs().max()) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_permutation_invariance_over_enrollment_frames(ty, te, seed):
    noisy = _rand(1, 2, ty, 6, seed=seed)
    enroll = _rand(1, 2, te, 6, seed=seed + 1)
    perm = torch.randperm(te, generator=torch.Generator().manual_seed(seed))
    a = context_interaction(noisy, enroll)
    b = context_interaction(noisy, enroll[:, :, perm])
    assert torch.allclose(a, b, rtol=1e-12, atol=1e-12)
    attn_a = context_attention(noisy, enroll)
    attn_b = context_attention(noisy, enroll[:, :, perm])
    assert torch.allclose(attn_b, attn_a[:, :, perm], rtol=1e-12, atol=1e-15)


def test_context_interaction_errors():
    with pytest.raises(ShapeError):
        context_interaction(_rand(1, 2, 3, 4), _rand(1, 2, 3, 5))
    with pytest.raises(ShapeError):
        context_interaction(_rand(1, 2, 3, 4), torch.zeros(1, 2, 0, 4, dtype=torch.float64))
    with pytest.raises(ShapeError):
        context_interaction(_rand(1, 3, 3, 4), _rand(1, 3, 3, 4))


def test_broadcast_enrollment():
    enroll = _rand(2, 2, 5, 4, seed=4)
    out = broadcast_enrollment(enroll, 9)
    assert out.shape == (2, 2, 9, 4)
    e = enroll.numpy()
    mean = np.zeros((2, 2, 4))
    for s in range(5):
        mean += e[:, :, s]
    mean /= 5
    for t in range(9):
        np.testing.assert_allclose(out[:, :, t].numpy(), mean, rtol=1e-14, atol=1e-15)
    one = _rand(1, 2, 1, 4, seed=5)
    assert torch.equal(broadcast_enrollment(one, 3), one.expand(-1, -1, 3, -1))
    const = torch.full((1, 2, 6, 4), 0.25, dtype=torch.float64)
    assert torch.equal(broadcast_enrollment(const, 2), torch.full((1, 2, 2, 4), 0.25, dtype=torch.float64))
    with pytest.raises(ConfigError):
        broadcast_enrollment(one, 0)


def test_ifi_equal_inputs_returns_input_bitwise():
    ifi = _randomize(IFIRound().double(), 6).eval()
    a = _rand(2, 2, 5, 7, seed=7)
    assert torch.equal(ifi(a, a.clone()), a)


def test_ifi_saturation():
    a, b = _rand(1, 2, 4, 5, seed=8), _rand(1, 2, 4, 5, seed=9)
    ifi = IFIRound().double().eval()
    ifi.reset_to_neutral()
    with torch.no_grad():
        ifi.ga.bn2.bias.fill_(50.0)
    assert torch.allclose(ifi(a, b), a, atol=1e-15)
    with torch.no_grad():
        ifi.ga.bn2.bias.fill_(-50.0)
    assert torch.allclose(ifi(a, b), b, atol=1e-15)


def test_ifi_neutral_is_exact_average():
    ifi = _randomize(IFIRound().double(), 10).eval()
    ifi.reset_to_neutral()
    a, b = _rand(3, 2, 6, 5, seed=11), _rand(3, 2, 6, 5, seed=12)
    assert torch.equal(ifi(a, b), (a + b) / 2)


@pytest.mark.parametrize("seed", range(20))
def test_ifi_convex_bound(seed):
    ifi = _randomize(IFIRound().double(), seed).train(seed % 2 == 0)
    a, b = _rand(2, 2, 5, 6, seed=seed, scale=5), _rand(2, 2, 5, 6, seed=seed + 50, scale=5)
    out = ifi(a, b)
    assert torch.all(out >= torch.minimum(a, b)) and torch.all(out <= torch.maximum(a, b))


def test_ifi_shape_mismatch():
    with pytest.raises(ShapeError):
        IFIRound()(torch.zeros(1, 2, 3, 4), torch.zeros(1, 2, 4, 4))


def test_convex_blend_clamps_rounding():
    a = torch.tensor([0.1, 1e16, -3.0], dtype=torch.float64)
    b = torch.tensor([0.3, 1.0, -3.0], dtype=torch.float64)
    p = torch.tensor([0.7, 1 - 1e-16, 0.2], dtype=torch.float64)
    out = convex_blend(p, a, b)
    assert torch.all(out >= torch.minimum(a, b)) and torch.all(out <= torch.maximum(a, b))


def straight_line_isa(isa, noisy, enroll):
    e_ci = context_interaction(noisy, enroll)
    e_o = broadcast_enrollment(enroll, noisy.shape[2])
    r1, r2 = isa.round1, isa.round2
    p1 = torch.sigmoid(r1.ga(e_ci + e_o) + r1.la(e_ci + e_o))
    mid = p1 * e_ci + (1 - p1) * e_o
    p2 = torch.sigmoid(r2.ga(mid) + r2.la(mid))
    return p2 * e_ci + (1 - p2) * e_o


def test_isa_matches_compositional_reference():
    isa = _randomize(ISA().double(), 13).eval()
    noisy, enroll = _rand(1, 2, 4, 5, seed=14), _rand(1, 2, 3, 5, seed=15)
    assert torch.allclose(isa(noisy, enroll), straight_line_isa(isa, noisy, enroll), rtol=0, atol=1e-14)


def test_isa_rounds_are_untied():
    isa = ISA()
    assert isa.round1.ga.conv1.weight.data_ptr() != isa.round2.ga.conv1.weight.data_ptr()
    assert isa.round1.ga.hidden == 64


def test_isa_output_between_ci_and_pooled_enrollment():
    isa = _randomize(ISA().double(), 16).eval()
    noisy = torch.full((1, 2, 6, 5), 0.3, dtype=torch.float64)
    enroll = _rand(1, 2, 1, 5, seed=17)
    out = isa(noisy, enroll)
    e_ci = context_interaction(noisy, enroll)
    e_o = broadcast_enrollment(enroll, 6)
    assert torch.all(out >= torch.minimum(e_ci, e_o)) and torch.all(out <= torch.maximum(e_ci, e_o))


@pytest.mark.parametrize("te", [1, 2, 9, 40])
def test_guidance_has_noisy_length(te):
    out = ISA().eval()(torch.randn(1, 2, 11, 9), torch.randn(1, 2, te, 9))
    assert out.shape == (1, 2, 11, 9)


def test_ci_only_returns_context_interaction():
    noisy, enroll = _rand(1, 2, 4, 5, seed=18), _rand(1, 2, 3, 5, seed=19)
    assert torch.equal(ISA(use_ifi=False)(noisy, enroll), context_interaction(noisy, enroll))
    assert len(list(ISA(use_ifi=False).parameters())) == 0


def test_isa_gradients(fd_errors):
    isa = _randomize(ISA().double(), 20).eval()
    noisy = _rand(1, 2, 4, 5, seed=21).requires_grad_()
    enroll = _rand(1, 2, 3, 5, seed=22).requires_grad_()
    w = _rand(1, 2, 4, 5, seed=23)
    errs = fd_errors(lambda: (isa(noisy, enroll) * w).sum(), list(isa.parameters()) + [noisy, enroll])
    assert max(errs.values()) < 1e-4, errs
