"""Model assembly: plain backbones and donor-grafted compositions.

A composed model runs

    backbone -> bridge_in -> frozen donor layer(s) -> bridge_out -> head

for classification (the pooled state crosses the donor stack as a
length-1 sequence), and

    encoder -> bridge_in -> donor layer(s) -> bridge_out -> decoder

for sequence-to-sequence, where the whole source sequence crosses. The
plain (vanilla) variant is the same code path with the donor stack and
both projections structurally absent.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .blocks import (
    STYLE_SLM,
    AttentionConfig,
    BlockConfig,
    ShapePreset,
    attention_forward,
    block_shapes,
    count_shapes,
    donor_block_forward,
    get_preset,
    resolve_block_config,
    slm_block_forward,
)
from .errors import ConfigError, ExtractionError
from .params import ParamStore, init_params

FAMILIES = ("encoder", "encoder_decoder", "decoder_only")
POOLINGS = ("cls", "mean_all", "mean_nonpad", "last_nonpad")


@dataclass(frozen=True)
class SlmConfig:
    family: str
    vocab_size: int
    d_model: int = 64
    n_layers: int = 4
    n_dec_layers: int = 2
    n_heads: int = 4
    d_ffn: int = 256
    max_positions: int = 64
    n_segments: int = 2
    dropout: float = 0.1
    eps: float = 1e-5
    include_pooler: bool = False  # classic full-backbone presets carry one

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ffn", "max_positions"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def block_config(self, causal: bool) -> BlockConfig:
        attn = AttentionConfig(d_model=self.d_model, n_heads=self.n_heads,
                               n_kv_heads=self.n_heads, causal=causal,
                               qkv_bias=True, o_bias=True)
        return BlockConfig(style=STYLE_SLM, attention=attn, d_ffn=self.d_ffn,
                           dropout=self.dropout, eps=self.eps)


@dataclass(frozen=True)
class PiFiConfig:
    donor_preset: object  # preset name, ShapePreset, or BlockConfig
    donor_layer_indices: tuple = (1,)  # 1-based into the donor archive
    pooling: str = "cls"
    freeze_policy: str = "donor_frozen"  # donor_frozen | donor_trainable
    donor_init: str = "from_archive"  # from_archive | random
    donor_causal: bool = True
    donor_rope: bool = True

    def __post_init__(self):
        object.__setattr__(self, "donor_layer_indices", tuple(self.donor_layer_indices))
        idx = self.donor_layer_indices
        if len(idx) < 1:
            raise ConfigError("at least one donor layer index is required")
        if any(i < 1 for i in idx) or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigError(f"donor layer indices must be strictly increasing and 1-based: {idx}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.freeze_policy not in ("donor_frozen", "donor_trainable"):
            raise ConfigError(f"unknown freeze policy {self.freeze_policy!r}")
        if self.donor_init not in ("from_archive", "random"):
            raise ConfigError(f"unknown donor init {self.donor_init!r}")

    @property
    def n_inserted(self) -> int:
        return len(self.donor_layer_indices)

    def block_config(self) -> BlockConfig:
        return resolve_block_config(self.donor_preset, causal=self.donor_causal,
                                    rope=self.donor_rope)


def _check_pooling(family: str, pooling: str):
    if pooling == "cls" and family != "encoder":
        raise ConfigError("cls pooling is only defined for the encoder family")
    if pooling == "last_nonpad" and family != "decoder_only":
        raise ConfigError("last_nonpad pooling is only defined for decoder_only models")


# ---------------------------------------------------------------------------
# shape catalogs


def _stack_shapes(cfg: SlmConfig, causal: bool, prefix="", segments=False) -> dict[str, tuple]:
    d = cfg.d_model
    shapes = {
        f"{prefix}embed.tok": (cfg.vocab_size, d),
        f"{prefix}embed.pos": (cfg.max_positions, d),
    }
    if segments:
        shapes[f"{prefix}embed.seg"] = (cfg.n_segments, d)
    shapes[f"{prefix}embed.norm.gain"] = (d,)
    shapes[f"{prefix}embed.norm.bias"] = (d,)
    block = block_shapes(cfg.block_config(causal))
    for i in range(cfg.n_layers):
        for name, shape in block.items():
            shapes[f"{prefix}layers.{i}.{name}"] = shape
    return shapes


def _dec_block_shapes(cfg: SlmConfig) -> dict[str, tuple]:
    d = cfg.d_model
    attn = {}
    base = cfg.block_config(causal=True)
    for name, shape in block_shapes(base).items():
        if name.startswith("attn."):
            attn["self." + name[5:]] = shape
            attn["cross." + name[5:]] = shape
    attn["norm1.gain"] = (d,)
    attn["norm1.bias"] = (d,)
    attn["norm2.gain"] = (d,)
    attn["norm2.bias"] = (d,)
    attn["norm3.gain"] = (d,)
    attn["norm3.bias"] = (d,)
    attn["ffn.w1.weight"] = (d, cfg.d_ffn)
    attn["ffn.w1.bias"] = (cfg.d_ffn,)
    attn["ffn.w2.weight"] = (cfg.d_ffn, d)
    attn["ffn.w2.bias"] = (d,)
    return attn


def slm_shapes(cfg: SlmConfig) -> dict[str, tuple]:
    """Full backbone catalog for any family, pooler included when asked."""
    if cfg.family == "encoder":
        shapes = _stack_shapes(cfg, causal=False, segments=True)
        if cfg.include_pooler:
            shapes["pooler.weight"] = (cfg.d_model, cfg.d_model)
            shapes["pooler.bias"] = (cfg.d_model,)
        return shapes
    if cfg.family == "decoder_only":
        return _stack_shapes(cfg, causal=True, segments=False)
    shapes = _stack_shapes(cfg, causal=False, prefix="enc.", segments=False)
    d = cfg.d_model
    shapes["dec.embed.tok"] = (cfg.vocab_size, d)
    shapes["dec.embed.pos"] = (cfg.max_positions, d)
    shapes["dec.embed.norm.gain"] = (d,)
    shapes["dec.embed.norm.bias"] = (d,)
    block = _dec_block_shapes(cfg)
    for i in range(cfg.n_dec_layers):
        for name, shape in block.items():
            shapes[f"dec.layers.{i}.{name}"] = shape
    shapes["dec.out.weight"] = (d, cfg.vocab_size)
    shapes["dec.out.bias"] = (cfg.vocab_size,)
    return shapes


def head_shapes(d_model: int, n_classes: int) -> dict[str, tuple]:
    """Dense+tanh pooler stage followed by the class projection."""
    return {
        "pool.weight": (d_model, d_model),
        "pool.bias": (d_model,),
        "cls.weight": (d_model, n_classes),
        "cls.bias": (n_classes,),
    }


def projection_shapes(d_in: int, d_out: int) -> dict[str, tuple]:
    return {"weight": (d_in, d_out)}  # bias-free by design


# ---------------------------------------------------------------------------
# the composed model


class PiFiModel:
    """A backbone with an optional frozen donor stack spliced before the head."""

    def __init__(self, slm_cfg: SlmConfig, pifi_cfg: Optional[PiFiConfig],
                 slm: ParamStore, head: Optional[ParamStore],
                 l_in: Optional[ParamStore] = None, l_out: Optional[ParamStore] = None,
                 donor_layers: Optional[list[ParamStore]] = None,
                 n_classes: Optional[int] = None):
        self.slm_cfg = slm_cfg
        self.pifi_cfg = pifi_cfg
        self.slm = slm
        self.head = head
        self.l_in = l_in
        self.l_out = l_out
        self.donor_layers = donor_layers or []
        self.n_classes = n_classes
        self.training = False
        self._drop_rng = np.random.default_rng(0)
        self.donor_cfg = pifi_cfg.block_config() if pifi_cfg is not None else None

    # -- bookkeeping ---------------------------------------------------

    @property
    def is_vanilla(self) -> bool:
        return self.pifi_cfg is None

    def set_training(self, flag: bool, dropout_seed: int = 0):
        self.training = flag
        self._drop_rng = np.random.default_rng(np.random.Philox(key=dropout_seed))

    def named_params(self) -> dict[str, Tensor]:
        flat: dict[str, Tensor] = {}
        for name, t in self.slm.items():
            flat[f"slm.{name}"] = t
        if self.l_in is not None:
            for name, t in self.l_in.items():
                flat[f"l_in.{name}"] = t
        for j, store in enumerate(self.donor_layers):
            for name, t in store.items():
                flat[f"donor.{j}.{name}"] = t
        if self.l_out is not None:
            for name, t in self.l_out.items():
                flat[f"l_out.{name}"] = t
        if self.head is not None:
            for name, t in self.head.items():
                flat[f"head.{name}"] = t
        return flat

    def trainable_params(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named_params().items() if t.requires_grad}

    def donor_digest(self) -> str:
        merged = ParamStore()
        for j, store in enumerate(self.donor_layers):
            for name, t in store.items():
                merged[f"{j}.{name}"] = t
        return merged.byte_digest()

    def count_params(self) -> dict[str, int]:
        parts = {
            "slm": self.slm.n_params(),
            "l_llm": sum(s.n_params() for s in self.donor_layers),
            "l_in": self.l_in.n_params() if self.l_in else 0,
            "l_out": self.l_out.n_params() if self.l_out else 0,
            "head": self.head.n_params() if self.head else 0,
        }
        parts["total"] = sum(parts.values())
        flat = self.named_params()
        parts["trainable"] = sum(t.data.size for t in flat.values() if t.requires_grad)
        parts["frozen"] = parts["total"] - parts["trainable"]
        return parts

    # -- forward pieces -------------------------------------------------

    def _embed(self, ids, prefix="", segments=None):
        store = self.slm
        b, s = ids.shape
        pos = np.broadcast_to(np.arange(s), (b, s))
        x = ag.add(ag.embedding(store[f"{prefix}embed.tok"], ids),
                   ag.embedding(store[f"{prefix}embed.pos"], pos))
        if segments is not None and f"{prefix}embed.seg" in store:
            x = ag.add(x, ag.embedding(store[f"{prefix}embed.seg"], segments))
        x = ag.layer_norm(x, store[f"{prefix}embed.norm.gain"],
                          store[f"{prefix}embed.norm.bias"], self.slm_cfg.eps)
        if self.training and self.slm_cfg.dropout > 0:
            x = ag.dropout(x, self.slm_cfg.dropout, self._drop_rng)
        return x

    def _run_stack(self, x, pad_mask, causal, prefix=""):
        cfg = self.slm_cfg.block_config(causal)
        n = self.slm_cfg.n_layers
        for i in range(n):
            sub = _SubStore(self.slm, f"{prefix}layers.{i}.")
            x = slm_block_forward(x, cfg, sub, pad_mask=pad_mask,
                                  training=self.training, drop_rng=self._drop_rng)
        return x

    def _pool(self, h, pad_mask):
        mode = self.pifi_cfg.pooling if self.pifi_cfg else self._default_pooling()
        b, s, d = h.shape
        if mode == "cls":
            return ag.take_positions(h, np.zeros(b, dtype=np.int64))
        if mode == "mean_all":
            return ag.scale(ag.sum_axis(h, axis=1), 1.0 / s)
        if mode == "mean_nonpad":
            m = pad_mask.astype(h.dtype)
            kept = ag.mul(h, Tensor(m[:, :, None]))
            inv = (1.0 / np.maximum(m.sum(axis=1), 1.0)).astype(h.dtype)
            return ag.mul(ag.sum_axis(kept, axis=1), Tensor(inv[:, None]))
        # last_nonpad: padding is trailing, so the last real index is count-1
        counts = pad_mask.astype(np.int64).sum(axis=1)
        return ag.take_positions(h, np.maximum(counts - 1, 0))

    def _default_pooling(self):
        return "cls" if self.slm_cfg.family == "encoder" else "last_nonpad"

    def _donor_pass(self, x, pad_mask=None):
        """bridge_in -> donor stack -> bridge_out on a (b, s, d) sequence."""
        x = ag.matmul(x, self.l_in["weight"])
        for store in self.donor_layers:
            x = donor_block_forward(x, self.donor_cfg, store, pad_mask=pad_mask)
        return ag.matmul(x, self.l_out["weight"])

    def _head(self, pooled):
        h = ag.tanh(ag.add(ag.matmul(pooled, self.head["pool.weight"]), self.head["pool.bias"]))
        return ag.add(ag.matmul(h, self.head["cls.weight"]), self.head["cls.bias"])

    # -- public forwards -------------------------------------------------

    def forward_classify(self, token_ids, pad_mask, segments=None, trace=None):
        """(b, s) ids + mask -> (b, C) logits. ``trace`` collects shapes."""
        if self.slm_cfg.family not in ("encoder", "decoder_only"):
            raise ConfigError("forward_classify needs an encoder or decoder_only model")
        if self.head is None:
            raise ConfigError("model has no classification head")
        causal = self.slm_cfg.family == "decoder_only"
        h = self._run_stack(self._embed(token_ids, segments=segments), pad_mask, causal)
        pooled = self._pool(h, pad_mask)
        if not self.is_vanilla:
            seq = ag.reshape(pooled, (pooled.shape[0], 1, pooled.shape[1]))
            if trace is not None:
                trace["donor_input_shape"] = seq.shape
            seq = self._donor_pass(seq)
            pooled = ag.reshape(seq, pooled.shape)
        return self._head(pooled)

    def forward_seq2seq(self, src_ids, src_mask, tgt_in_ids):
        """Teacher-forced logits (b, t, V) for an encoder-decoder model."""
        if self.slm_cfg.family != "encoder_decoder":
            raise ConfigError("forward_seq2seq needs an encoder_decoder model")
        if tgt_in_ids.shape[1] > self.slm_cfg.max_positions:
            raise ConfigError(f"target length {tgt_in_ids.shape[1]} exceeds "
                              f"max_positions {self.slm_cfg.max_positions}")
        memory = self._run_stack(self._embed(src_ids, prefix="enc."), src_mask,
                                 causal=False, prefix="enc.")
        if not self.is_vanilla:
            memory = self._donor_pass(memory, pad_mask=src_mask)
        x = self._embed(tgt_in_ids, prefix="dec.")
        dec_cfg = self.slm_cfg.block_config(causal=True)
        cross_cfg = self.slm_cfg.block_config(causal=False)
        for i in range(self.slm_cfg.n_dec_layers):
            sub = _SubStore(self.slm, f"dec.layers.{i}.")
            x = _dec_block_forward(x, memory, src_mask, dec_cfg, cross_cfg, sub,
                                   training=self.training, drop_rng=self._drop_rng)
        return ag.add(ag.matmul(x, self.slm["dec.out.weight"]), self.slm["dec.out.bias"])

    def greedy_decode(self, src_ids, src_mask, max_len, bos_id, eos_id):
        """Argmax decoding until eos or max_len; returns lists of token ids."""
        b = src_ids.shape[0]
        out = [[] for _ in range(b)]
        if max_len <= 0:
            return out
        done = np.zeros(b, dtype=bool)
        tgt = np.full((b, 1), bos_id, dtype=np.int64)
        for _ in range(max_len):
            logits = self.forward_seq2seq(src_ids, src_mask, tgt)
            nxt = np.argmax(logits.data[:, -1, :], axis=-1)
            for i in range(b):
                if not done[i]:
                    if nxt[i] == eos_id:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
            if done.all():
                break
            tgt = np.concatenate([tgt, nxt[:, None]], axis=1)
        return out

    # -- persistence ------------------------------------------------------

    def config_dict(self) -> dict:
        cfg = {"slm": asdict(self.slm_cfg), "n_classes": self.n_classes}
        if self.pifi_cfg is not None:
            pf = asdict(self.pifi_cfg)
            if isinstance(self.pifi_cfg.donor_preset, ShapePreset):
                pf["donor_preset"] = self.pifi_cfg.donor_preset.name
            cfg["pifi"] = pf
        return cfg


class _SubStore:
    """Read-only prefix view over a ParamStore, for per-layer access."""

    __slots__ = ("_store", "_prefix")

    def __init__(self, store: ParamStore, prefix: str):
        self._store = store
        self._prefix = prefix

    def __getitem__(self, name):
        return self._store[self._prefix + name]

    def __contains__(self, name):
        return (self._prefix + name) in self._store


def _dec_block_forward(x, memory, src_mask, self_cfg, cross_cfg, params,
                       training=False, drop_rng=None):
    """Decoder block: causal self-attention, cross-attention, gelu mlp,
    each post-normalized onto the residual stream."""
    def drop(t):
        if training and self_cfg.dropout > 0:
            return ag.dropout(t, self_cfg.dropout, drop_rng)
        return t

    sa = drop(attention_forward(x, x, None, self_cfg.attention, params, prefix="self."))
    a = ag.layer_norm(ag.add(x, sa), params["norm1.gain"], params["norm1.bias"], self_cfg.eps)
    ca = drop(attention_forward(a, memory, src_mask, cross_cfg.attention, params, prefix="cross."))
    m = ag.layer_norm(ag.add(a, ca), params["norm2.gain"], params["norm2.bias"], self_cfg.eps)
    hidden = ag.gelu(ag.add(ag.matmul(m, params["ffn.w1.weight"]), params["ffn.w1.bias"]))
    ffn = drop(ag.add(ag.matmul(hidden, params["ffn.w2.weight"]), params["ffn.w2.bias"]))
    return ag.layer_norm(ag.add(m, ffn), params["norm3.gain"], params["norm3.bias"], self_cfg.eps)


# ---------------------------------------------------------------------------
# builders


def _init_store(shapes, seed) -> ParamStore:
    return init_params(shapes, seed)


def build_vanilla(slm_cfg: SlmConfig, n_classes: Optional[int], seed: int) -> PiFiModel:
    """The baseline: the same pipeline with no donor stack or projections."""
    slm = _init_store(slm_shapes(slm_cfg), seed)
    head = None
    if slm_cfg.family != "encoder_decoder":
        if n_classes is None:
            raise ConfigError("classification models need n_classes")
        head = _init_store(head_shapes(slm_cfg.d_model, n_classes), seed)
    return PiFiModel(slm_cfg, None, slm, head, n_classes=n_classes)


def _donor_layer_stores(pifi_cfg: PiFiConfig, donor_cfg: BlockConfig, donor_source, seed):
    shapes = block_shapes(donor_cfg)
    stores = []
    if pifi_cfg.donor_init == "from_archive":
        if donor_source is None:
            raise ConfigError("donor_init=from_archive requires a donor archive")
        from .archive import extract_donor_layers
        for arrays in extract_donor_layers(donor_source, pifi_cfg.donor_layer_indices):
            store = ParamStore()
            for name, shape in shapes.items():
                if name not in arrays:
                    raise ExtractionError(f"archive layer is missing tensor {name!r}")
                if tuple(arrays[name].shape) != tuple(shape):
                    raise ExtractionError(
                        f"archive tensor {name!r} has shape {arrays[name].shape}, expected {shape}")
                store[name] = Tensor(arrays[name], requires_grad=True)
            stores.append(store)
    else:
        for j, idx in enumerate(pifi_cfg.donor_layer_indices):
            named = {f"donor.{idx}.{name}": shape for name, shape in shapes.items()}
            raw = init_params(named, seed)
            store = ParamStore({name.split(".", 2)[2]: t for name, t in raw.items()})
            stores.append(store)
    return stores


def build_pifi(slm_cfg: SlmConfig, pifi_cfg: PiFiConfig, donor_source=None,
               n_classes: Optional[int] = None, seed: int = 0) -> PiFiModel:
    """Assemble the composed model and apply the freeze policy."""
    _check_pooling(slm_cfg.family, pifi_cfg.pooling)
    donor_cfg = pifi_cfg.block_config()
    d_donor = donor_cfg.attention.d_model

    slm = _init_store(slm_shapes(slm_cfg), seed)
    l_in = _init_store({"weight": (slm_cfg.d_model, d_donor)}, seed + 101)
    l_out = _init_store({"weight": (d_donor, slm_cfg.d_model)}, seed + 202)
    donor_layers = _donor_layer_stores(pifi_cfg, donor_cfg, donor_source, seed)
    head = None
    if slm_cfg.family != "encoder_decoder":
        if n_classes is None:
            raise ConfigError("classification models need n_classes")
        head = _init_store(head_shapes(slm_cfg.d_model, n_classes), seed)

    if pifi_cfg.freeze_policy == "donor_frozen":
        for store in donor_layers:
            store.set_requires_grad(False)

    return PiFiModel(slm_cfg, pifi_cfg, slm, head, l_in=l_in, l_out=l_out,
                     donor_layers=donor_layers, n_classes=n_classes)


def build_donor_only_classifier(archive, donor_preset, layer_index: str, n_classes: int,
                                seed: int = 0):
    """Frozen donor embeddings + one frozen donor layer + a trainable head.

    ``layer_index`` is "first" or "last"; pooling is the final non-pad
    position (the donor block is causal).
    """
    preset = donor_preset if isinstance(donor_preset, ShapePreset) else get_preset(donor_preset)
    if layer_index not in ("first", "last"):
        raise ConfigError("layer_index must be 'first' or 'last'")
    index = 1 if layer_index == "first" else archive.layer_count()
    if "embed.tok" not in archive.names():
        raise ExtractionError("archive has no embedding tensors (embed.tok)")

    return DonorOnlyClassifier(archive, preset, index, n_classes, seed)


class DonorOnlyClassifier:
    """Minimal probe model: donor embeddings and a single donor block,
    both frozen, with only the classification head trained."""

    def __init__(self, archive, preset: ShapePreset, index: int, n_classes: int, seed: int):
        from .archive import extract_donor_layers

        self.preset = preset
        self.index = index
        self.n_classes = n_classes
        self.block_cfg = preset.block_config(causal=True, rope=True)
        self.embed = Tensor(archive.tensor("embed.tok"), requires_grad=False)
        (arrays,) = extract_donor_layers(archive, [index])
        self.layer = ParamStore({k: Tensor(v, requires_grad=False) for k, v in arrays.items()})
        self.head = init_params(head_shapes(preset.d_model, n_classes), seed)
        self.training = False

    def set_training(self, flag: bool, dropout_seed: int = 0):
        self.training = flag

    def named_params(self) -> dict[str, Tensor]:
        flat = {"donor.embed.tok": self.embed}
        for name, t in self.layer.items():
            flat[f"donor.0.{name}"] = t
        for name, t in self.head.items():
            flat[f"head.{name}"] = t
        return flat

    def trainable_params(self):
        return {k: t for k, t in self.named_params().items() if t.requires_grad}

    def donor_digest(self) -> str:
        store = ParamStore({"embed.tok": self.embed})
        for name, t in self.layer.items():
            store[name] = t
        return store.byte_digest()

    def forward_classify(self, token_ids, pad_mask, segments=None, trace=None):
        x = ag.embedding(self.embed, token_ids)
        h = donor_block_forward(x, self.block_cfg, self.layer, pad_mask=pad_mask)
        counts = pad_mask.astype(np.int64).sum(axis=1)
        pooled = ag.take_positions(h, np.maximum(counts - 1, 0))
        z = ag.tanh(ag.add(ag.matmul(pooled, self.head["pool.weight"]), self.head["pool.bias"]))
        return ag.add(ag.matmul(z, self.head["cls.weight"]), self.head["cls.bias"])


# ---------------------------------------------------------------------------
# persistence


def save_model(model: PiFiModel, out_dir, stem="model"):
    from .archive import save_archive

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_archive({name: t.data for name, t in model.named_params().items()},
                 out_dir / f"{stem}.pifa")
    (out_dir / f"{stem}.json").write_text(json.dumps(model.config_dict(), indent=2, sort_keys=True))


def load_model(out_dir, stem="model") -> PiFiModel:
    from .archive import load_archive

    out_dir = Path(out_dir)
    cfg = json.loads((out_dir / f"{stem}.json").read_text())
    slm_cfg = SlmConfig(**cfg["slm"])
    pifi_cfg = PiFiConfig(**cfg["pifi"]) if "pifi" in cfg else None
    arc = load_archive(out_dir / f"{stem}.pifa")

    if pifi_cfg is None:
        model = build_vanilla(slm_cfg, cfg.get("n_classes"), seed=0)
    else:
        # rebuild with random donors of the right shape, then overwrite
        tmp = PiFiConfig(**{**asdict(pifi_cfg), "donor_init": "random"})
        model = build_pifi(slm_cfg, tmp, n_classes=cfg.get("n_classes"), seed=0)
        model.pifi_cfg = pifi_cfg
    for name, t in model.named_params().items():
        t.data = arc.tensor(name)
    if pifi_cfg is not None and pifi_cfg.freeze_policy == "donor_frozen":
        for store in model.donor_layers:
            store.set_requires_grad(False)
    return model


def model_param_count(slm_cfg: SlmConfig, pifi_cfg: Optional[PiFiConfig],
                      n_classes: Optional[int]) -> dict[str, int]:
    """Config-level counting; matches PiFiModel.count_params structurally."""
    parts = {"slm": count_shapes(slm_shapes(slm_cfg)), "l_llm": 0, "l_in": 0, "l_out": 0, "head": 0}
    if slm_cfg.family != "encoder_decoder" and n_classes:
        parts["head"] = count_shapes(head_shapes(slm_cfg.d_model, n_classes))
    if pifi_cfg is not None:
        donor_cfg = pifi_cfg.block_config()
        d_donor = donor_cfg.attention.d_model
        parts["l_llm"] = pifi_cfg.n_inserted * count_shapes(block_shapes(donor_cfg))
        parts["l_in"] = slm_cfg.d_model * d_donor
        parts["l_out"] = d_donor * slm_cfg.d_model
    parts["total"] = sum(parts.values())
    return parts
