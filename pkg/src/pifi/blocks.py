"""Transformer building blocks and their parameter-shape catalogs.

Two block styles are composed throughout:

* ``slm_post_ln_gelu`` -- post-LayerNorm residual blocks with a biased
  gelu feed-forward; every linear map carries a bias. The backbone style.
* ``donor_pre_rmsnorm_gated`` -- pre-RMSNorm blocks with grouped-query
  attention and a bias-free silu-gated feed-forward. The style of the
  grafted donor layers.

Each block style has a shape catalog (name -> tensor shape) that is the
single source of truth for initialization, counting, and archive layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ShapeError

STYLE_SLM = "slm_post_ln_gelu"
STYLE_DONOR = "donor_pre_rmsnorm_gated"

DEFAULT_ROPE_THETA = 10000.0


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    n_heads: int
    n_kv_heads: int
    head_dim: Optional[int] = None  # defaults to d_model // n_heads
    causal: bool = False
    rope: bool = False
    rope_theta: float = DEFAULT_ROPE_THETA
    qkv_bias: bool = False
    o_bias: bool = False

    def __post_init__(self):
        if self.d_model % self.n_heads and self.head_dim is None:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.n_heads % self.n_kv_heads:
            raise ConfigError(f"n_heads {self.n_heads} not divisible by n_kv_heads {self.n_kv_heads}")

    @property
    def hd(self) -> int:
        return self.head_dim if self.head_dim is not None else self.d_model // self.n_heads

    @property
    def q_width(self) -> int:
        return self.n_heads * self.hd

    @property
    def kv_width(self) -> int:
        return self.n_kv_heads * self.hd


@dataclass(frozen=True)
class BlockConfig:
    style: str
    attention: AttentionConfig
    d_ffn: int
    dropout: float = 0.0
    eps: float = 1e-5
    extra_norms: int = 0  # post-sublayer RMSNorm pair (0 or 2)

    def __post_init__(self):
        if self.style not in (STYLE_SLM, STYLE_DONOR):
            raise ConfigError(f"unknown block style {self.style!r}")
        if self.extra_norms not in (0, 2):
            raise ConfigError("extra_norms must be 0 or 2")


# ---------------------------------------------------------------------------
# shape catalogs


def attention_shapes(cfg: AttentionConfig) -> dict[str, tuple]:
    d, qw, kw = cfg.d_model, cfg.q_width, cfg.kv_width
    shapes = {
        "attn.q.weight": (d, qw),
        "attn.k.weight": (d, kw),
        "attn.v.weight": (d, kw),
        "attn.o.weight": (qw, d),
    }
    if cfg.qkv_bias:
        shapes["attn.q.bias"] = (qw,)
        shapes["attn.k.bias"] = (kw,)
        shapes["attn.v.bias"] = (kw,)
    if cfg.o_bias:
        shapes["attn.o.bias"] = (d,)
    return shapes


def block_shapes(cfg: BlockConfig) -> dict[str, tuple]:
    d = cfg.attention.d_model
    shapes = dict(attention_shapes(cfg.attention))
    if cfg.style == STYLE_DONOR:
        shapes["norm1.gain"] = (d,)
        shapes["norm2.gain"] = (d,)
        if cfg.extra_norms:
            shapes["norm3.gain"] = (d,)
            shapes["norm4.gain"] = (d,)
        shapes["ffn.gate.weight"] = (d, cfg.d_ffn)
        shapes["ffn.up.weight"] = (d, cfg.d_ffn)
        shapes["ffn.down.weight"] = (cfg.d_ffn, d)
    else:
        shapes["norm1.gain"] = (d,)
        shapes["norm1.bias"] = (d,)
        shapes["norm2.gain"] = (d,)
        shapes["norm2.bias"] = (d,)
        shapes["ffn.w1.weight"] = (d, cfg.d_ffn)
        shapes["ffn.w1.bias"] = (cfg.d_ffn,)
        shapes["ffn.w2.weight"] = (cfg.d_ffn, d)
        shapes["ffn.w2.bias"] = (d,)
    return shapes


def count_shapes(shapes: dict[str, tuple]) -> int:
    return int(sum(int(np.prod(s)) for s in shapes.values()))


# ---------------------------------------------------------------------------
# attention


def _attention_bias(pad_mask, causal, s_q, s_kv, dtype):
    """Additive (1, 1|b, s_q, s_kv) mask: 0 where allowed, -inf elsewhere."""
    bias = None
    if causal:
        allow = np.tril(np.ones((s_q, s_kv), dtype=bool), k=s_kv - s_q)
        bias = np.where(allow, 0.0, -np.inf).astype(dtype)[None, None]
    if pad_mask is not None:
        pm = np.where(pad_mask.astype(bool), 0.0, -np.inf).astype(dtype)
        pm = pm[:, None, None, :]  # keys masked per batch row
        bias = pm if bias is None else bias + pm
    return bias


def _linear(x, params, prefix, name):
    w = params[f"{prefix}{name}.weight"]
    out = ag.matmul(x, w)
    bias_name = f"{prefix}{name}.bias"
    if bias_name in params:
        out = ag.add(out, params[bias_name])
    return out


def _split_heads(x, n_heads, hd):
    b, s, _ = x.shape
    return ag.transpose(ag.reshape(x, (b, s, n_heads, hd)), (0, 2, 1, 3))


def attention_forward(x_q: Tensor, x_kv: Tensor, pad_mask, cfg: AttentionConfig,
                      params, prefix: str = "") -> Tensor:
    """Grouped-query scaled dot-product attention.

    ``pad_mask`` marks real key positions (b, s_kv) with 1; masked scores
    get -inf ahead of the softmax. Each kv head serves
    n_heads/n_kv_heads query heads.
    """
    b, s_q, d = x_q.shape
    s_kv = x_kv.shape[1]
    if d != cfg.d_model or x_kv.shape[-1] != cfg.d_model:
        raise ShapeError(f"attention width mismatch: {x_q.shape}/{x_kv.shape} vs d_model {cfg.d_model}")
    if pad_mask is not None and pad_mask.shape != (b, s_kv):
        raise ShapeError(f"pad mask shape {pad_mask.shape} incompatible with (b={b}, s_kv={s_kv})")

    q = _split_heads(_linear(x_q, params, prefix, "attn.q"), cfg.n_heads, cfg.hd)
    k = _split_heads(_linear(x_kv, params, prefix, "attn.k"), cfg.n_kv_heads, cfg.hd)
    v = _split_heads(_linear(x_kv, params, prefix, "attn.v"), cfg.n_kv_heads, cfg.hd)

    if cfg.rope:
        q_pos = np.arange(s_q)
        kv_pos = np.arange(s_kv)
        q = ag.rope(q, q_pos, cfg.rope_theta)
        k = ag.rope(k, kv_pos, cfg.rope_theta)

    group = cfg.n_heads // cfg.n_kv_heads
    if group > 1:
        k = ag.repeat_kv(k, group)
        v = ag.repeat_kv(v, group)

    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(cfg.hd))
    bias = _attention_bias(pad_mask, cfg.causal, s_q, s_kv, scores.dtype)
    if bias is not None:
        scores = ag.add(scores, Tensor(bias))
    probs = ag.softmax_rows(scores)
    ctx = ag.matmul(probs, v)  # (b, h, s_q, hd)
    merged = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b, s_q, cfg.q_width))
    return _linear(merged, params, prefix, "attn.o")


# ---------------------------------------------------------------------------
# blocks


def donor_block_forward(x: Tensor, cfg: BlockConfig, params, pad_mask=None) -> Tensor:
    """Pre-RMSNorm gated block: x + Attn(N1(x)), then the gated mlp branch.

    With extra_norms=2 the sublayer outputs pass through norm3/norm4
    before the residual add (sandwich form).
    """
    if cfg.style != STYLE_DONOR:
        raise ConfigError(f"donor_block_forward needs style {STYLE_DONOR}, got {cfg.style}")
    eps = cfg.eps
    attn_in = ag.rms_norm(x, params["norm1.gain"], eps)
    attn_out = attention_forward(attn_in, attn_in, pad_mask, cfg.attention, params)
    if cfg.extra_norms:
        attn_out = ag.rms_norm(attn_out, params["norm3.gain"], eps)
    h = ag.add(x, attn_out)

    ffn_in = ag.rms_norm(h, params["norm2.gain"], eps)
    gate = ag.silu(ag.matmul(ffn_in, params["ffn.gate.weight"]))
    up = ag.matmul(ffn_in, params["ffn.up.weight"])
    ffn_out = ag.matmul(ag.mul(gate, up), params["ffn.down.weight"])
    if cfg.extra_norms:
        ffn_out = ag.rms_norm(ffn_out, params["norm4.gain"], eps)
    return ag.add(h, ffn_out)


def slm_block_forward(x: Tensor, cfg: BlockConfig, params, pad_mask=None,
                      training=False, drop_rng=None) -> Tensor:
    """Post-LayerNorm block: LN1(x + Attn(x)), LN2(a + gelu mlp)."""
    if cfg.style != STYLE_SLM:
        raise ConfigError(f"slm_block_forward needs style {STYLE_SLM}, got {cfg.style}")

    def drop(t):
        if training and cfg.dropout > 0.0:
            return ag.dropout(t, cfg.dropout, drop_rng)
        return t

    attn_out = drop(attention_forward(x, x, pad_mask, cfg.attention, params))
    a = ag.layer_norm(ag.add(x, attn_out), params["norm1.gain"], params["norm1.bias"], cfg.eps)
    hidden = ag.gelu(ag.add(ag.matmul(a, params["ffn.w1.weight"]), params["ffn.w1.bias"]))
    ffn_out = drop(ag.add(ag.matmul(hidden, params["ffn.w2.weight"]), params["ffn.w2.bias"]))
    return ag.layer_norm(ag.add(a, ffn_out), params["norm2.gain"], params["norm2.bias"], cfg.eps)


# ---------------------------------------------------------------------------
# donor shape presets


@dataclass(frozen=True)
class ShapePreset:
    """Per-layer shape of one donor family; drives counting and builds.

    ``gated_ffn=False`` with ``norm_bias=True`` describes the
    parallel-block family (single biased LayerNorm, plain gelu mlp);
    such presets are accounting-only and cannot be run as donor blocks.
    """

    name: str
    d_model: int
    d_ffn: int
    n_heads: int
    n_kv_heads: int
    head_dim: Optional[int] = None
    qkv_bias: bool = False
    extra_norms: int = 0
    gated_ffn: bool = True
    norm_bias: bool = False

    @property
    def runnable(self) -> bool:
        return self.gated_ffn and not self.norm_bias

    def attention_config(self, causal=True, rope=True) -> AttentionConfig:
        return AttentionConfig(
            d_model=self.d_model, n_heads=self.n_heads, n_kv_heads=self.n_kv_heads,
            head_dim=self.head_dim, causal=causal, rope=rope, qkv_bias=self.qkv_bias,
        )

    def block_config(self, causal=True, rope=True, eps=1e-5) -> BlockConfig:
        if not self.runnable:
            raise ConfigError(f"preset {self.name} is accounting-only (parallel block variant)")
        return BlockConfig(style=STYLE_DONOR, attention=self.attention_config(causal, rope),
                           d_ffn=self.d_ffn, dropout=0.0, eps=eps, extra_norms=self.extra_norms)

    def layer_shapes(self) -> dict[str, tuple]:
        if self.runnable:
            return block_shapes(self.block_config())
        # parallel variant: plain 2-matrix mlp, one LayerNorm with bias
        shapes = dict(attention_shapes(self.attention_config()))
        shapes["norm1.gain"] = (self.d_model,)
        if self.norm_bias:
            shapes["norm1.bias"] = (self.d_model,)
        shapes["ffn.w1.weight"] = (self.d_model, self.d_ffn)
        shapes["ffn.w2.weight"] = (self.d_ffn, self.d_model)
        return shapes

    def layer_param_count(self) -> int:
        return count_shapes(self.layer_shapes())


PRESETS: dict[str, ShapePreset] = {
    p.name: p for p in [
        ShapePreset("llama31_8b", d_model=4096, d_ffn=14336, n_heads=32, n_kv_heads=8),
        ShapePreset("llama31_70b", d_model=8192, d_ffn=28672, n_heads=64, n_kv_heads=8),
        ShapePreset("qwen2_0p5b", d_model=896, d_ffn=4864, n_heads=14, n_kv_heads=2, qkv_bias=True),
        ShapePreset("qwen2_1p5b", d_model=1536, d_ffn=8960, n_heads=12, n_kv_heads=2, qkv_bias=True),
        ShapePreset("qwen2_7b", d_model=3584, d_ffn=18944, n_heads=28, n_kv_heads=4, qkv_bias=True),
        ShapePreset("gemma2_9b", d_model=3584, d_ffn=14336, n_heads=16, n_kv_heads=8,
                    head_dim=256, extra_norms=2),
        ShapePreset("falcon7b", d_model=4544, d_ffn=18176, n_heads=71, n_kv_heads=1,
                    gated_ffn=False, norm_bias=True),
        ShapePreset("desk_donor", d_model=128, d_ffn=344, n_heads=4, n_kv_heads=2),
    ]
}


def get_preset(name: str) -> ShapePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown shape preset {name!r}; known: {sorted(PRESETS)}") from None


def resolve_block_config(preset_or_cfg, causal=True, rope=True) -> BlockConfig:
    if isinstance(preset_or_cfg, BlockConfig):
        return preset_or_cfg
    if isinstance(preset_or_cfg, ShapePreset):
        return preset_or_cfg.block_config(causal=causal, rope=rope)
    return get_preset(preset_or_cfg).block_config(causal=causal, rope=rope)
