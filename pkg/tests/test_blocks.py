"""Attention, rotary transform, and the two block styles."""

import math

import numpy as np
import pytest

from pifi import autograd as ag
from pifi.autograd import Graph, Tensor, backward
from pifi.blocks import (
    PRESETS,
    AttentionConfig,
    BlockConfig,
    STYLE_DONOR,
    STYLE_SLM,
    attention_forward,
    block_shapes,
    donor_block_forward,
    get_preset,
    slm_block_forward,
)
from pifi.errors import ConfigError, ContractError, ShapeError
from pifi.gradcheck import grad_check
from pifi.params import ParamStore, init_params


def make_params(cfg: BlockConfig, seed=0, dtype=np.float64) -> ParamStore:
    store = init_params(block_shapes(cfg), seed)
    if dtype is not np.float32:
        for _, t in store.items():
            t.data = t.data.astype(dtype)
    return store


def rand_params(shapes, rng, dtype=np.float64, scale=0.5):
    store = ParamStore()
    for name, shape in shapes.items():
        store[name] = Tensor(rng.standard_normal(shape).astype(dtype) * scale,
                             requires_grad=True)
    return store


# ------------------------------------------------------------- reference

def dense_attention_reference(x, params, n_heads, causal=False):
    """Independent per-head attention in plain numpy (no GQA machinery)."""
    def lin(v, w, b):
        return v @ w + b

    b, s, d = x.shape
    hd = d // n_heads
    q = lin(x, params["attn.q.weight"].data, params.get_bias("attn.q.bias"))
    k = lin(x, params["attn.k.weight"].data, params.get_bias("attn.k.bias"))
    v = lin(x, params["attn.v.weight"].data, params.get_bias("attn.v.bias"))
    out = np.zeros_like(x)
    for bi in range(b):
        heads = []
        for h in range(n_heads):
            sl = slice(h * hd, (h + 1) * hd)
            scores = q[bi][:, sl] @ k[bi][:, sl].T / math.sqrt(hd)
            if causal:
                scores = np.where(np.tril(np.ones_like(scores, dtype=bool)), scores, -np.inf)
            e = np.exp(scores - scores.max(axis=-1, keepdims=True))
            p = e / e.sum(axis=-1, keepdims=True)
            heads.append(p @ v[bi][:, sl])
        out[bi] = np.concatenate(heads, axis=-1)
    return out @ params["attn.o.weight"].data + params.get_bias("attn.o.bias")


class StoreWithBias(ParamStore):
    def get_bias(self, name):
        return self[name].data if name in self else 0.0


# ------------------------------------------------------------- attention

def test_gqa_with_equal_heads_matches_dense_reference():
    rng = np.random.default_rng(0)
    cfg = AttentionConfig(d_model=8, n_heads=2, n_kv_heads=2, qkv_bias=True, o_bias=True)
    shapes = {
        "attn.q.weight": (8, 8), "attn.k.weight": (8, 8), "attn.v.weight": (8, 8),
        "attn.o.weight": (8, 8), "attn.q.bias": (8,), "attn.k.bias": (8,),
        "attn.v.bias": (8,), "attn.o.bias": (8,),
    }
    params = StoreWithBias(rand_params(shapes, rng).items())
    x = Tensor(rng.standard_normal((3, 5, 8)))
    got = attention_forward(x, x, None, cfg, params).data
    want = dense_attention_reference(x.data, params, n_heads=2)
    assert np.allclose(got, want, atol=1e-10)


def test_gqa_grouping_matches_explicit_repeat():
    # 4 query heads sharing 2 kv heads == dense attention where the kv
    # projections are duplicated per group
    rng = np.random.default_rng(1)
    d, hd = 8, 2
    cfg = AttentionConfig(d_model=d, n_heads=4, n_kv_heads=2)
    shapes = {"attn.q.weight": (d, 8), "attn.k.weight": (d, 4),
              "attn.v.weight": (d, 4), "attn.o.weight": (8, d)}
    params = StoreWithBias(rand_params(shapes, rng).items())
    x = Tensor(rng.standard_normal((2, 6, d)))
    got = attention_forward(x, x, None, cfg, params).data

    wide = StoreWithBias()
    kw = params["attn.k.weight"].data
    vw = params["attn.v.weight"].data
    expand = lambda w: np.concatenate([w[:, 0:2], w[:, 0:2], w[:, 2:4], w[:, 2:4]], axis=1)
    wide["attn.q.weight"] = params["attn.q.weight"]
    wide["attn.k.weight"] = Tensor(expand(kw))
    wide["attn.v.weight"] = Tensor(expand(vw))
    wide["attn.o.weight"] = params["attn.o.weight"]
    want = dense_attention_reference(x.data, wide, n_heads=4)
    assert np.allclose(got, want, atol=1e-10)


def test_single_token_ignores_causal_flag():
    rng = np.random.default_rng(2)
    shapes = {"attn.q.weight": (8, 8), "attn.k.weight": (8, 8),
              "attn.v.weight": (8, 8), "attn.o.weight": (8, 8)}
    params = rand_params(shapes, rng)
    x = Tensor(rng.standard_normal((2, 1, 8)))
    base = AttentionConfig(d_model=8, n_heads=2, n_kv_heads=2, causal=False)
    causal = AttentionConfig(d_model=8, n_heads=2, n_kv_heads=2, causal=True)
    a = attention_forward(x, x, None, base, params).data
    b = attention_forward(x, x, None, causal, params).data
    assert np.array_equal(a, b)


def test_uniform_value_rows_pass_through():
    # identical value vectors make every convex combination that vector
    rng = np.random.default_rng(3)
    d = 8
    row = rng.standard_normal(d)
    shapes = {"attn.q.weight": (d, d), "attn.k.weight": (d, d),
              "attn.v.weight": (d, d), "attn.o.weight": (d, d)}
    params = rand_params(shapes, rng)
    params["attn.o.weight"] = Tensor(np.eye(d))
    x = Tensor(np.tile(row, (2, 5, 1)))
    cfg = AttentionConfig(d_model=d, n_heads=2, n_kv_heads=2)
    out = attention_forward(x, x, None, cfg, params).data
    want = np.tile(row @ params["attn.v.weight"].data, (2, 5, 1))
    assert np.allclose(out, want, atol=1e-10)


def test_attention_rejects_bad_mask_shape():
    rng = np.random.default_rng(4)
    shapes = {"attn.q.weight": (8, 8), "attn.k.weight": (8, 8),
              "attn.v.weight": (8, 8), "attn.o.weight": (8, 8)}
    params = rand_params(shapes, rng)
    x = Tensor(rng.standard_normal((2, 5, 8)))
    cfg = AttentionConfig(d_model=8, n_heads=2, n_kv_heads=2)
    with pytest.raises(ShapeError):
        attention_forward(x, x, np.ones((2, 4)), cfg, params)


def test_pad_mask_blocks_masked_keys():
    rng = np.random.default_rng(5)
    d = 8
    shapes = {"attn.q.weight": (d, d), "attn.k.weight": (d, d),
              "attn.v.weight": (d, d), "attn.o.weight": (d, d)}
    params = rand_params(shapes, rng)
    cfg = AttentionConfig(d_model=d, n_heads=2, n_kv_heads=2)
    x = Tensor(rng.standard_normal((1, 4, d)))
    mask = np.array([[1, 1, 1, 0]])
    out_masked = attention_forward(x, x, mask, cfg, params).data
    y = x.data.copy()
    y[0, 3] = 99.0  # content at the masked key slot must not matter...
    out_changed = attention_forward(Tensor(y), Tensor(y), mask, cfg, params).data
    assert np.allclose(out_masked[:, :3], out_changed[:, :3], atol=1e-10)


# ------------------------------------------------------------- rope

def test_rope_position_zero_is_identity():
    rng = np.random.default_rng(6)
    x = Tensor(rng.standard_normal((2, 3, 1, 8)))
    out = ag.rope(x, np.array([0]), theta=10000.0)
    assert np.allclose(out.data, x.data, atol=1e-12)


def test_rope_preserves_pair_norms():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((1, 2, 5, 8)))
    out = ag.rope(x, np.arange(5), theta=123.0).data
    for i in range(4):
        a = x.data[..., 2 * i:2 * i + 2]
        b = out[..., 2 * i:2 * i + 2]
        assert np.allclose(np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1), atol=1e-10)


def test_rope_two_dims_is_plane_rotation():
    x = Tensor(np.array([[[[0.3, -1.2]]]]))
    out = ag.rope(x, np.array([1]), theta=1.0).data[0, 0, 0]
    c, s = math.cos(1.0), math.sin(1.0)
    assert np.allclose(out, [0.3 * c - (-1.2) * s, 0.3 * s + (-1.2) * c], atol=1e-12)


def test_rope_rejects_odd_head_dim():
    with pytest.raises(ContractError):
        ag.rope(Tensor(np.zeros((1, 1, 1, 3))), np.array([0]), theta=10.0)


# ------------------------------------------------------------- donor block

def donor_cfg(d=16, ffn=24, heads=4, kv=2, extra=0):
    attn = AttentionConfig(d_model=d, n_heads=heads, n_kv_heads=kv, causal=True, rope=True)
    return BlockConfig(style=STYLE_DONOR, attention=attn, d_ffn=ffn, eps=1e-6, extra_norms=extra)


def test_donor_block_zero_weights_is_identity():
    cfg = donor_cfg()
    params = make_params(cfg)
    for name, t in params.items():
        if name.endswith(".weight"):
            t.data = np.zeros_like(t.data)
    x = Tensor(np.random.default_rng(8).standard_normal((2, 5, 16)))
    out = donor_block_forward(x, cfg, params)
    assert np.allclose(out.data, x.data, atol=1e-12)


def test_donor_block_gradcheck():
    cfg = donor_cfg()
    rng = np.random.default_rng(9)
    params = rand_params(block_shapes(cfg), rng, scale=0.3)
    for name, t in params.items():
        if name.endswith(".gain"):
            t.data = np.ones_like(t.data)
    x = Tensor(rng.standard_normal((2, 3, 16)))

    def f():
        return ag.sum_axis(ag.mul(donor_block_forward(x, cfg, params), x), axis=None)

    assert grad_check(f, params, eps=1e-5) < 1e-4


def test_frozen_donor_params_get_no_grads():
    cfg = donor_cfg()
    params = make_params(cfg, dtype=np.float32)
    params.set_requires_grad(False)
    x = Tensor(np.random.default_rng(10).standard_normal((1, 4, 16)).astype(np.float32),
               requires_grad=True)
    with Graph() as g:
        loss = ag.sum_axis(donor_block_forward(x, cfg, params), axis=None)
    grads = backward(g, loss)
    assert x.tid in grads
    for _, t in params.items():
        assert t.grad is None and t.tid not in grads


def test_donor_block_rejects_slm_style():
    cfg = BlockConfig(style=STYLE_SLM,
                      attention=AttentionConfig(d_model=8, n_heads=2, n_kv_heads=2,
                                                qkv_bias=True, o_bias=True),
                      d_ffn=16)
    with pytest.raises(ConfigError):
        donor_block_forward(Tensor(np.zeros((1, 2, 8))), cfg, ParamStore())


def test_donor_block_extra_norms_run_and_count():
    cfg = donor_cfg(extra=2)
    shapes = block_shapes(cfg)
    assert "norm3.gain" in shapes and "norm4.gain" in shapes
    params = make_params(cfg)
    x = Tensor(np.random.default_rng(11).standard_normal((1, 3, 16)))
    out = donor_block_forward(x, cfg, params)
    assert out.shape == x.shape


# ------------------------------------------------------------- slm block

def slm_cfg(d=16, ffn=24, heads=4, dropout=0.0):
    attn = AttentionConfig(d_model=d, n_heads=heads, n_kv_heads=heads,
                           qkv_bias=True, o_bias=True)
    return BlockConfig(style=STYLE_SLM, attention=attn, d_ffn=ffn, dropout=dropout, eps=1e-6)


def test_slm_block_eval_mode_deterministic():
    cfg = slm_cfg(dropout=0.5)
    params = make_params(cfg, dtype=np.float32)
    x = Tensor(np.random.default_rng(12).standard_normal((2, 4, 16)).astype(np.float32))
    a = slm_block_forward(x, cfg, params, training=False).data
    b = slm_block_forward(x, cfg, params, training=False).data
    assert (a == b).all()


def test_slm_block_zero_ffn_is_attention_plus_norms():
    cfg = slm_cfg()
    params = make_params(cfg)
    rng = np.random.default_rng(13)
    for name, t in params.items():
        if name.startswith(("attn.", "ffn.")) and name.endswith(".weight"):
            t.data = rng.standard_normal(t.data.shape) * 0.3
    params["ffn.w2.weight"].data[:] = 0.0
    params["ffn.w2.bias"].data[:] = 0.0
    x = Tensor(rng.standard_normal((2, 4, 16)))
    got = slm_block_forward(x, cfg, params).data

    from pifi.blocks import attention_forward as attn_f
    a = ag.layer_norm(ag.add(x, attn_f(x, x, None, cfg.attention, params)),
                      params["norm1.gain"], params["norm1.bias"], cfg.eps)
    want = ag.layer_norm(a, params["norm2.gain"], params["norm2.bias"], cfg.eps).data
    assert np.allclose(got, want, atol=1e-12)


def test_slm_block_gradcheck():
    cfg = slm_cfg()
    rng = np.random.default_rng(14)
    params = rand_params(block_shapes(cfg), rng, scale=0.3)
    x = Tensor(rng.standard_normal((2, 3, 16)))

    def f():
        return ag.sum_axis(ag.mul(slm_block_forward(x, cfg, params), x), axis=None)

    assert grad_check(f, params, eps=1e-5) < 1e-4


def test_dropout_only_in_training_mode():
    cfg = slm_cfg(dropout=0.4)
    params = make_params(cfg, dtype=np.float32)
    x = Tensor(np.random.default_rng(15).standard_normal((2, 4, 16)).astype(np.float32))
    rng_a = np.random.default_rng(1)
    rng_b = np.random.default_rng(2)
    a = slm_block_forward(x, cfg, params, training=True, drop_rng=rng_a).data
    b = slm_block_forward(x, cfg, params, training=True, drop_rng=rng_b).data
    assert not np.allclose(a, b)  # different dropout masks


# ------------------------------------------------------------- presets

def test_preset_registry_has_required_families():
    for name in ("llama31_8b", "llama31_70b", "qwen2_0p5b", "qwen2_7b",
                 "gemma2_9b", "falcon7b", "desk_donor"):
        assert name in PRESETS


def test_accounting_only_preset_is_not_runnable():
    falcon = get_preset("falcon7b")
    assert not falcon.runnable
    with pytest.raises(ConfigError):
        falcon.block_config()
    assert falcon.layer_param_count() == 207_070_080


def test_attention_config_invariants():
    with pytest.raises(ConfigError):
        AttentionConfig(d_model=10, n_heads=3, n_kv_heads=1)
    with pytest.raises(ConfigError):
        AttentionConfig(d_model=8, n_heads=4, n_kv_heads=3)
    cfg = AttentionConfig(d_model=3584, n_heads=16, n_kv_heads=8, head_dim=256)
    assert cfg.q_width == 4096 and cfg.kv_width == 2048
