import pytest
import torch

from oracles import dense_window_attention
from symface.diffcore import grad_check
from symface.errors import ShapeError
from symface.generator import (
    Generator,
    SwinConfig,
    WindowAttention,
    audit_skip_connections,
    composite,
    count_parameters,
    effective_window,
    relative_position_index,
    shift_attention_mask,
    shifted_window_attention,
    window_partition,
    window_reverse,
)

TINY = SwinConfig(patch_size=2, embed_dim=8, depths=[2, 2], heads=[1, 2], window_size=2)


@pytest.mark.parametrize("shift", [0, 2])
@pytest.mark.parametrize("seed", range(3))
def test_window_attention_matches_dense_oracle(shift, seed):
    torch.manual_seed(seed)
    attn = WindowAttention(dim=16, num_heads=2, window_size=4)
    with torch.no_grad():
        attn.relative_position_bias_table.normal_(0, 0.5)
    x = torch.randn(1, 8, 8, 16)
    with torch.no_grad():
        fast = shifted_window_attention(attn, x, 4, shift)
        slow = dense_window_attention(attn, x, 4, shift)
    assert (fast - slow).abs().max() <= 1e-5


def test_partition_round_trip():
    x = torch.randn(2, 8, 12, 3)
    assert torch.equal(window_reverse(window_partition(x, 4), 4, 8, 12), x)
    with pytest.raises(ShapeError):
        window_partition(x, 5)


def test_shift_mask_blocks_seam():
    mask = shift_attention_mask(8, 8, 4, 2)
    assert mask.shape == (4, 16, 16)
    assert (mask[0] == 0).all()  # top-left window never straddles the seam
    assert torch.isinf(mask[3]).any()


def test_relative_index_range():
    idx = relative_position_index(4, 4)
    assert idx.min() == 0 and idx.max() == 48
    assert (idx.diagonal() == 24).all()


def test_effective_window():
    assert effective_window(2, 2, 4, 2) == (2, 0)
    assert effective_window(8, 8, 4, 2) == (4, 2)


@pytest.mark.parametrize("size", [16, 32, 64, 128])
def test_generator_shapes(size):
    gen = Generator(SwinConfig(), seed=0)
    x = torch.rand(2, 3, size, size)
    m = (torch.rand(2, 1, size, size) > 0.5).float()
    out = gen(x, m)
    assert out.shape == (2, 3, size, size)
    assert out.min() >= 0 and out.max() <= 1


def test_generator_rejects_bad_size():
    with pytest.raises(ShapeError):
        Generator(SwinConfig())(torch.rand(1, 3, 40, 40), torch.zeros(1, 1, 40, 40))


def test_generator_ignores_hole_content():
    gen = Generator(TINY, seed=1)
    x = torch.rand(1, 3, 16, 16)
    m = torch.zeros(1, 1, 16, 16)
    m[..., 4:10, 4:10] = 1
    y = x.clone()
    y[..., 4:10, 4:10] = torch.rand(1, 3, 6, 6)
    assert torch.equal(gen(x, m), gen(y, m))


def test_generator_seeded():
    a, b = Generator(TINY, seed=3), Generator(TINY, seed=3)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_composite_keeps_known_pixels():
    out, img = torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 4)
    m = torch.zeros(1, 1, 4, 4)
    m[..., :2, :] = 1
    c = composite(out, img, m)
    assert torch.equal(c[..., 2:, :], img[..., 2:, :])
    assert torch.equal(c[..., :2, :], out[..., :2, :])


def test_no_skip_audit():
    report = audit_skip_connections(Generator(SwinConfig(), seed=0), size=32)
    assert report["merge_ops"] == 2 and report["expand_ops"] == 2
    assert report["decoder_concats"] == 0
    assert report["skip_paths"] == 0


def test_default_parameter_count_is_stable():
    assert count_parameters(Generator(SwinConfig())) == 750_435


def test_generator_forward_gradient():
    gen = Generator(TINY, seed=2).double()
    m = torch.zeros(1, 1, 16, 16, dtype=torch.float64)
    m[..., 3:9, 5:12] = 1
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    w = torch.randn(1, 3, 16, 16, dtype=torch.float64)
    assert grad_check(lambda t: (gen(t, m) * w).sum(), x, epsilon=1e-6) < 1e-4


def test_config_validation():
    with pytest.raises(ShapeError):
        SwinConfig(depths=[2, 2], heads=[2])
    with pytest.raises(ShapeError):
        SwinConfig(embed_dim=30, heads=[4, 4, 4])


def test_identical_tokens_attend_uniformly():
    torch.manual_seed(0)
    attn = WindowAttention(8, 2, 2).double()
    token = torch.randn(8, dtype=torch.float64)
    x = token.expand(1, 4, 4, 8).clone()
    out = shifted_window_attention(attn, x, 2, 0)
    v = attn.qkv(token)[16:]
    expected = attn.proj(v).expand_as(out)
    assert torch.allclose(out, expected, atol=1e-12)


def test_unshifted_attention_commutes_with_window_swaps():
    torch.manual_seed(1)
    attn = WindowAttention(8, 2, 2).double()
    x = torch.randn(1, 4, 4, 8, dtype=torch.float64)
    swapped = x.clone()
    swapped[:, :2, :2], swapped[:, 2:, 2:] = x[:, 2:, 2:], x[:, :2, :2]
    out = shifted_window_attention(attn, x, 2, 0)
    out_swapped = shifted_window_attention(attn, swapped, 2, 0)
    assert torch.allclose(out_swapped[:, :2, :2], out[:, 2:, 2:], atol=1e-12)
    assert torch.allclose(out_swapped[:, 2:, 2:], out[:, :2, :2], atol=1e-12)
    assert torch.allclose(out_swapped[:, :2, 2:], out[:, :2, 2:], atol=1e-12)


def test_fully_masked_input_ignores_image():
    gen = Generator(TINY, seed=0).eval()
    mask = torch.ones(1, 1, 16, 16)
    a = gen(torch.rand(1, 3, 16, 16), mask)
    b = gen(torch.rand(1, 3, 16, 16), mask)
    assert torch.equal(a, b)
