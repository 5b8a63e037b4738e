"""M2AE, G2MCIM, VRUM, and transformer stage contracts."""

import numpy as np
import pytest

import oracles
from gmlnbts.errors import ShapeError, SpecError
from gmlnbts.model import (G2MCIM, M2AE, VRUM, M2aeSpec, StageSpec,
                           TransformerStage, VrumSpec, modal_weighted_mix,
                           relation_pairs)
from gmlnbts.tensor import Tensor, no_grad


def _rng(seed=0):
    return np.random.default_rng(seed)


# -- M2AE -------------------------------------------------------------------

def test_m2ae_output_shape_and_branch_width():
    enc = M2AE(M2aeSpec(1, 16), _rng(1), dtype=np.float64)
    x = Tensor(_rng(2).standard_normal((1, 1, 16, 16, 16)))
    y = enc(x)
    assert y.shape == (1, 16, 16, 16, 16)
    # four branches of out/4 channels each
    assert enc.point.weight.shape[0] == 4
    assert enc.mid.weight.shape[0] == 4
    assert enc.wide.weight.shape[0] == 4
    assert enc.pooled.weight.shape[0] == 4


def test_m2ae_zero_refine_is_pure_inception():
    enc = M2AE(M2aeSpec(1, 8), _rng(3), dtype=np.float64)
    x = Tensor(_rng(4).standard_normal((1, 1, 6, 6, 6)))
    enc.refine.weight.data[...] = 0.0
    enc.refine.bias.data[...] = 0.0
    got = enc(x).data
    # with the residual conv silenced the block returns the branch concat
    from gmlnbts.tensor import concat
    from gmlnbts.volume_ops import avg_pool3d
    want = concat([
        enc.point(x), enc.mid(enc.mid_reduce(x)),
        enc.wide(enc.wide_reduce(x)), enc.pooled(avg_pool3d(x, 3, 1, 1)),
    ], axis=1).data
    assert np.array_equal(got, want)


def test_m2ae_validates_input():
    enc = M2AE(M2aeSpec(1, 8), _rng(0))
    with pytest.raises(ShapeError):
        enc(Tensor(np.zeros((1, 1, 4, 4, 4), dtype=np.float32)))  # below widest kernel
    with pytest.raises(SpecError):
        M2aeSpec(1, 10)  # not divisible by 4


# -- G2MCIM -----------------------------------------------------------------

def test_relation_pairs_convention():
    v = Tensor(np.array([[[1.0, 2], [3, 4], [5, 6], [7, 8]]]))
    r = relation_pairs(v)
    assert r.shape == (1, 4, 4, 4)
    assert np.allclose(r.data[0, 1, 2], [3, 4, 5, 6])     # receiver 1, sender 2
    assert np.allclose(r.data[0, 2, 2], [5, 6, 5, 6])     # diagonal self-pair


def test_relation_pairs_shape_scales_with_channels():
    v = Tensor(np.zeros((2, 4, 16)))
    assert relation_pairs(v).shape == (2, 4, 4, 32)


def test_edge_weights_normalize_over_senders():
    fusion = G2MCIM(16, rng=_rng(5), dtype=np.float64)
    pairs = relation_pairs(Tensor(_rng(6).standard_normal((2, 4, 16))))
    s = fusion.edge_weights(pairs)
    assert s.shape == (2, 4, 4, 16)
    assert np.abs(s.data.sum(axis=2) - 1.0).max() <= 1e-6


def test_zero_encoders_give_uniform_weights_and_mean_mixing():
    fusion = G2MCIM(4, rng=_rng(7), dtype=np.float64)
    for _, p in fusion.named_parameters():
        p.data[...] = 0.0
    feats = [Tensor(_rng(8 + i).standard_normal((1, 4, 3, 3, 3))) for i in range(4)]
    out = fusion(feats).data
    mean = np.mean([f.data for f in feats], axis=0)
    for i in range(4):
        want = feats[i].data + mean
        assert np.allclose(out[:, 4 * i:4 * (i + 1)], want, atol=1e-12)


def test_fuse_matches_bruteforce_oracle():
    rng = _rng(9)
    fusion = G2MCIM(2, rng=rng, dtype=np.float64)
    stack = Tensor(rng.standard_normal((1, 4, 2, 2, 2, 2)))
    weights = Tensor(rng.dirichlet(np.ones(4), size=(1, 4, 2)).transpose(0, 1, 3, 2))
    got = fusion.fuse(stack, weights).data
    want = oracles.g2mcim_fuse(stack.data, weights.data)
    assert np.max(np.abs(got - want)) <= 1e-10


def test_modal_weighted_mix_gradients_flow():
    rng = _rng(10)
    s = Tensor(rng.standard_normal((1, 4, 4, 3)), requires_grad=True)
    f = Tensor(rng.standard_normal((1, 4, 3, 5)), requires_grad=True)
    modal_weighted_mix(s, f).sum().backward()
    assert s.grad is not None and f.grad is not None


def test_g2mcim_forward_concat_shape_and_gradients():
    fusion = G2MCIM(16, rng=_rng(11))
    feats = [Tensor(_rng(20 + i).standard_normal((1, 16, 8, 8, 8)).astype(np.float32),
                    requires_grad=True) for i in range(4)]
    out = fusion(feats)
    assert out.shape == (1, 64, 8, 8, 8)
    (out ** 2).mean().backward()
    for i, f in enumerate(feats):
        assert f.grad is not None
        assert np.linalg.norm(f.grad) > 0, f"modality {i} got no gradient"


def test_g2mcim_not_permutation_equivariant():
    # modality-specific relation encoders must break permutation symmetry
    fusion = G2MCIM(4, rng=_rng(12), dtype=np.float64)
    feats = [Tensor(_rng(30 + i).standard_normal((1, 4, 2, 2, 2))) for i in range(4)]
    with no_grad():
        base = fusion(feats).data
        swapped = fusion([feats[1], feats[0], feats[2], feats[3]]).data
    # undo the permutation on the output blocks; a weight-shared encoder
    # would make these equal
    undo = np.concatenate([swapped[:, 4:8], swapped[:, 0:4], swapped[:, 8:]], axis=1)
    assert not np.allclose(undo, base, atol=1e-8)


def test_g2mcim_rejects_mismatched_modalities():
    fusion = G2MCIM(4, rng=_rng(13))
    feats = [Tensor(np.zeros((1, 4, 2, 2, 2), dtype=np.float32)) for _ in range(3)]
    with pytest.raises(ShapeError):
        fusion(feats)
    bad = [Tensor(np.zeros((1, 4, 2, 2, 2), dtype=np.float32)) for _ in range(3)]
    bad.append(Tensor(np.zeros((1, 4, 3, 2, 2), dtype=np.float32)))
    with pytest.raises(ShapeError):
        fusion(bad)


# -- VRUM -------------------------------------------------------------------

@pytest.mark.parametrize("factor", [2, 4])
def test_vrum_shape_contract(factor):
    spec = VrumSpec(6, 4, factor)
    up = VRUM(spec, _rng(14), dtype=np.float64).eval()
    for d in (1, 2, 3, 5, 8):
        x = Tensor(np.random.default_rng(d).standard_normal((1, 6, d, d, d)))
        with no_grad():
            y = up(x)
        assert y.shape == (1, 4, factor * d, factor * d, factor * d)


def test_vrum_internal_branches_agree_on_size():
    up = VRUM(VrumSpec(4, 4, 4), _rng(15), dtype=np.float64)
    x = Tensor(np.random.default_rng(16).standard_normal((1, 4, 3, 3, 3)))
    with no_grad():
        small = up.detail_small(x)
        large = up.detail_large(x)
    assert small.shape == large.shape == (1, 2, 12, 12, 12)


def test_vrum_zero_weights_zero_output():
    up = VRUM(VrumSpec(3, 4, 2), _rng(17), dtype=np.float64)
    for _, p in up.named_parameters():
        p.data[...] = 0.0
    x = Tensor(np.random.default_rng(18).standard_normal((1, 3, 4, 4, 4)))
    up.train()
    y = up(x)
    assert np.allclose(y.data, 0.0)


def test_vrum_factor_example_quarter_to_full():
    up = VRUM(VrumSpec(5, 6, 4), _rng(19)).eval()
    x = Tensor(np.zeros((1, 5, 8, 8, 8), dtype=np.float32))
    with no_grad():
        assert up(x).shape == (1, 6, 32, 32, 32)


def test_vrum_rejects_bad_factor():
    with pytest.raises(SpecError):
        VrumSpec(4, 4, 3)
    with pytest.raises(SpecError):
        VrumSpec(4, 4, 8)


# -- transformer stage --------------------------------------------------------

def test_stage_token_grid():
    spec = StageSpec(dim=32, heads=2, blocks=2, embed_kernel=4, embed_stride=4,
                     embed_pad=0, sr_ratio=4)
    stage = TransformerStage(64, spec, _rng(20))
    x = Tensor(np.random.default_rng(21).standard_normal((1, 64, 16, 16, 16)).astype(np.float32))
    with no_grad():
        y = stage(x)
    assert y.shape == (1, 32, 4, 4, 4)


def test_stage_rejects_indivisible_dims():
    spec = StageSpec(dim=8, heads=2, blocks=1, embed_kernel=4, embed_stride=4, embed_pad=0)
    stage = TransformerStage(4, spec, _rng(22))
    with pytest.raises(ShapeError):
        stage(Tensor(np.zeros((1, 4, 6, 8, 8), dtype=np.float32)))


def test_attention_rows_sum_to_one():
    from gmlnbts.model.transformer import SpatialReductionAttention
    from gmlnbts.tensor import softmax

    spec = StageSpec(dim=8, heads=2, blocks=1, embed_kernel=2, embed_stride=2,
                     embed_pad=0, sr_ratio=2)
    attn = SpatialReductionAttention(spec, _rng(23), dtype=np.float64)
    x = Tensor(np.random.default_rng(24).standard_normal((1, 8, 8)))
    # reproduce the score path and check normalization directly
    from gmlnbts.tensor import matmul, mul, reshape, transpose
    q = transpose(reshape(attn.q(x), (1, 8, 2, 4)), (0, 2, 1, 3))
    pooled = attn.sr(Tensor(np.random.default_rng(25).standard_normal((1, 8, 2, 2, 2))))
    from gmlnbts.model.transformer import volume_to_tokens
    src = attn.sr_norm(volume_to_tokens(pooled))
    kv = attn.kv(src)
    k = transpose(reshape(kv[:, :, :8], (1, 1, 2, 4)), (0, 2, 3, 1))
    rows = softmax(mul(matmul(q, k), 0.5), axis=-1).data
    assert np.abs(rows.sum(axis=-1) - 1.0).max() <= 1e-6


def test_zeroed_projections_leave_residual_stream():
    spec = StageSpec(dim=8, heads=2, blocks=2, embed_kernel=2, embed_stride=2,
                     embed_pad=0, sr_ratio=1, mlp_ratio=2)
    stage = TransformerStage(4, spec, _rng(26), dtype=np.float64)
    for blk in stage.block_list:
        blk.attn.proj.weight.data[...] = 0.0
        blk.contract.weight.data[...] = 0.0
    # stage output then equals the patch embedding (norm at the end is affine-identity at init)
    x = Tensor(np.random.default_rng(27).standard_normal((1, 4, 4, 4, 4)))
    with no_grad():
        y = stage(x)
        embed = stage.embed(x)
    from gmlnbts.model.transformer import tokens_to_volume, volume_to_tokens
    normed = tokens_to_volume(stage.norm_out(volume_to_tokens(embed)), embed.shape[2:])
    assert np.allclose(y.data, normed.data, atol=1e-10)


def test_zeroed_encoders_give_exactly_uniform_edge_weights():
    fusion = G2MCIM(4, rng=_rng(40), dtype=np.float64)
    for _, p in fusion.named_parameters():
        p.data[...] = 0.0
    pairs = relation_pairs(Tensor(_rng(41).standard_normal((2, 4, 4))))
    s = fusion.edge_weights(pairs)
    assert np.array_equal(s.data, np.full((2, 4, 4, 4), 0.25))
