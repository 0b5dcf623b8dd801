"""Mini transformer encoder with task heads for the three variant recipes.

One parameter dictionary, keyed by stable names, holds everything: token /
position / segment embeddings, per-layer attention and feed-forward blocks
(collapsed to a single shared block for the ALBERT-style variant), a tanh
pooler over the CLS position, a 3-way classification head, and the
pretraining heads (masked-token prediction tied to the input embeddings,
plus a binary pair head when the variant has a pair objective).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import LABELS
from .errors import ConfigError, ContractError
from .tensor import (
    Tensor,
    add,
    dropout,
    embedding_lookup,
    gelu,
    index_rows,
    layernorm,
    matmul,
    mul,
    reshape,
    softmax,
    tanh,
    transpose,
)
from .tokenizer import TokenizedExample

NUM_CLASSES = 3
ATTENTION_MASK_PENALTY = -1e9
LAYERNORM_EPS = 1e-5
INIT_STD = 0.02

_VARIANT_TABLE = {
    "bertlike": ("nsp", "static", False),
    "albertlike": ("sop", "static", True),
    "robertalike": ("none", "dynamic", False),
}


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    hidden_size: int
    num_heads: int
    vocab_size: int
    max_seq_len: int
    ff_size: int = 0  # 0 resolves to 4 * hidden_size
    dropout_rate: float = 0.1
    share_parameters: bool = False
    embedding_size: int = 0  # 0 resolves to hidden_size

    def __post_init__(self):
        if self.ff_size == 0:
            object.__setattr__(self, "ff_size", 4 * self.hidden_size)
        if self.embedding_size == 0:
            object.__setattr__(self, "embedding_size", self.hidden_size)
        extents = (self.num_layers, self.hidden_size, self.num_heads, self.vocab_size,
                   self.max_seq_len, self.ff_size, self.embedding_size)
        if any(x <= 0 for x in extents):
            raise ConfigError(f"all config extents must be positive: {self}")
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by "
                f"num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads


@dataclass(frozen=True)
class VariantSpec:
    """Which pretraining recipe a model follows.

    bertlike pairs NSP with static masking, albertlike pairs SOP with static
    masking and cross-layer sharing, robertalike drops the pair objective and
    re-masks dynamically.
    """

    name: str
    pair_objective: str
    masking_mode: str
    share_parameters: bool

    def __post_init__(self):
        expected = _VARIANT_TABLE.get(self.name)
        if expected is None:
            raise ConfigError(f"unknown variant {self.name!r}; "
                              f"choose from {sorted(_VARIANT_TABLE)}")
        if (self.pair_objective, self.masking_mode, self.share_parameters) != expected:
            raise ConfigError(
                f"variant {self.name!r} requires (pair_objective, masking_mode, "
                f"share_parameters) == {expected}"
            )

    @classmethod
    def named(cls, name: str) -> "VariantSpec":
        if name not in _VARIANT_TABLE:
            raise ConfigError(f"unknown variant {name!r}; "
                              f"choose from {sorted(_VARIANT_TABLE)}")
        objective, masking, share = _VARIANT_TABLE[name]
        return cls(name, objective, masking, share)


VARIANT_NAMES = tuple(sorted(_VARIANT_TABLE))


@dataclass
class SentimentModel:
    config: EncoderConfig
    variant: VariantSpec
    params: dict[str, Tensor]
    include_pretrain_heads: bool = True
    label_order: tuple[str, ...] = LABELS
    vocab_hash: int = 0
    dropout_rng: np.random.Generator | None = field(default=None, repr=False)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def encoder_block_parameter_count(self) -> int:
        """Unique parameters inside the attention/FFN blocks (embeddings excluded)."""
        return sum(p.size for name, p in self.params.items()
                   if name.startswith(("layer", "shared.")))

    def trainable(self) -> list[Tensor]:
        return list(self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data = snapshot[name].copy()

    def layer_prefixes(self) -> list[str]:
        if self.config.share_parameters:
            return ["shared"] * self.config.num_layers
        return [f"layer{i:02d}" for i in range(self.config.num_layers)]


def parameter_shapes(config: EncoderConfig, include_pretrain_heads: bool,
                     pair_objective: str) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) listing; the single source of truth for layout."""
    h, e, f = config.hidden_size, config.embedding_size, config.ff_size
    v, s = config.vocab_size, config.max_seq_len
    shapes: list[tuple[str, tuple[int, ...]]] = [
        ("embeddings.token", (v, e)),
        ("embeddings.position", (s, e)),
        ("embeddings.segment", (2, e)),
        ("embeddings.norm_gain", (e,)),
        ("embeddings.norm_bias", (e,)),
    ]
    if e != h:
        shapes += [("embeddings.projection_weight", (e, h)),
                   ("embeddings.projection_bias", (h,))]
    prefixes = ["shared"] if config.share_parameters else [
        f"layer{i:02d}" for i in range(config.num_layers)]
    for prefix in prefixes:
        shapes += [
            (f"{prefix}.attention.query_weight", (h, h)),
            (f"{prefix}.attention.query_bias", (h,)),
            (f"{prefix}.attention.key_weight", (h, h)),
            (f"{prefix}.attention.key_bias", (h,)),
            (f"{prefix}.attention.value_weight", (h, h)),
            (f"{prefix}.attention.value_bias", (h,)),
            (f"{prefix}.attention.output_weight", (h, h)),
            (f"{prefix}.attention.output_bias", (h,)),
            (f"{prefix}.attention.norm_gain", (h,)),
            (f"{prefix}.attention.norm_bias", (h,)),
            (f"{prefix}.ffn.inner_weight", (h, f)),
            (f"{prefix}.ffn.inner_bias", (f,)),
            (f"{prefix}.ffn.outer_weight", (f, h)),
            (f"{prefix}.ffn.outer_bias", (h,)),
            (f"{prefix}.ffn.norm_gain", (h,)),
            (f"{prefix}.ffn.norm_bias", (h,)),
        ]
    shapes += [
        ("pooler.weight", (h, h)),
        ("pooler.bias", (h,)),
        ("classifier.weight", (h, NUM_CLASSES)),
        ("classifier.bias", (NUM_CLASSES,)),
    ]
    if include_pretrain_heads:
        shapes += [
            ("mlm.transform_weight", (h, e)),
            ("mlm.transform_bias", (e,)),
            ("mlm.norm_gain", (e,)),
            ("mlm.norm_bias", (e,)),
            ("mlm.output_bias", (v,)),
        ]
        if pair_objective != "none":
            shapes += [("pair.weight", (h, 2)), ("pair.bias", (2,))]
    return shapes


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    while True:
        bad = np.abs(out) > 2.0 * std
        count = int(bad.sum())
        if count == 0:
            return out
        out[bad] = rng.normal(0.0, std, size=count)


def init_model(config: EncoderConfig, variant: VariantSpec, seed: int,
               include_pretrain_heads: bool = True) -> SentimentModel:
    """Fresh model: truncated-normal weights (std 0.02), zero biases, unit norms."""
    if config.share_parameters != variant.share_parameters:
        raise ConfigError(
            f"config.share_parameters={config.share_parameters} disagrees with "
            f"variant {variant.name!r} ({variant.share_parameters})"
        )
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config, include_pretrain_heads,
                                        variant.pair_objective):
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("bias"):
            data = np.zeros(shape)
        elif leaf.endswith("gain"):
            data = np.ones(shape)
        else:
            data = _truncated_normal(rng, shape, INIT_STD)
        params[name] = Tensor(data, requires_grad=True)
    return SentimentModel(config=config, variant=variant, params=params,
                          include_pretrain_heads=include_pretrain_heads)


def _dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return add(matmul(x, weight), bias)


def _require_rng(model: SentimentModel, training: bool) -> np.random.Generator | None:
    if not training or model.config.dropout_rate == 0.0:
        return None
    if model.dropout_rng is None:
        raise ContractError("training forward pass needs model.dropout_rng set")
    return model.dropout_rng


def encode_batch(model: SentimentModel, token_ids: np.ndarray,
                 segment_ids: np.ndarray, attention_mask: np.ndarray,
                 training: bool = False) -> Tensor:
    """Run the encoder stack over a batch; returns a (batch, seq, hidden) tensor.

    PAD key positions receive a -1e9 additive penalty before the attention
    softmax, so their post-softmax weight underflows to exactly zero.
    """
    cfg = model.config
    p = model.params
    token_ids = np.asarray(token_ids, dtype=np.int64)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    attention_mask = np.asarray(attention_mask, dtype=np.int64)
    batch, seq = token_ids.shape
    if seq > cfg.max_seq_len:
        raise ContractError(f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")
    rng = _require_rng(model, training)
    rate = cfg.dropout_rate

    x = embedding_lookup(p["embeddings.token"], token_ids)
    x = add(x, embedding_lookup(p["embeddings.position"], np.arange(seq)))
    x = add(x, embedding_lookup(p["embeddings.segment"], segment_ids))
    x = layernorm(x, p["embeddings.norm_gain"], p["embeddings.norm_bias"], LAYERNORM_EPS)
    x = dropout(x, rate, training, rng)
    if cfg.embedding_size != cfg.hidden_size:
        x = _dense(x, p["embeddings.projection_weight"], p["embeddings.projection_bias"])

    penalty = Tensor((1.0 - attention_mask[:, None, None, :]) * ATTENTION_MASK_PENALTY)
    heads, head_size = cfg.num_heads, cfg.head_size
    scale = 1.0 / np.sqrt(head_size)

    for prefix in model.layer_prefixes():
        def split_heads(t: Tensor) -> Tensor:
            return transpose(reshape(t, (batch, seq, heads, head_size)), (0, 2, 1, 3))

        q = split_heads(_dense(x, p[f"{prefix}.attention.query_weight"],
                               p[f"{prefix}.attention.query_bias"]))
        k = split_heads(_dense(x, p[f"{prefix}.attention.key_weight"],
                               p[f"{prefix}.attention.key_bias"]))
        v = split_heads(_dense(x, p[f"{prefix}.attention.value_weight"],
                               p[f"{prefix}.attention.value_bias"]))
        scores = add(mul(matmul(q, transpose(k, (0, 1, 3, 2))), scale), penalty)
        probs = dropout(softmax(scores, axis=-1), rate, training, rng)
        context = reshape(transpose(matmul(probs, v), (0, 2, 1, 3)),
                          (batch, seq, cfg.hidden_size))
        attn_out = _dense(context, p[f"{prefix}.attention.output_weight"],
                          p[f"{prefix}.attention.output_bias"])
        attn_out = dropout(attn_out, rate, training, rng)
        x = layernorm(add(x, attn_out), p[f"{prefix}.attention.norm_gain"],
                      p[f"{prefix}.attention.norm_bias"], LAYERNORM_EPS)

        ff = gelu(_dense(x, p[f"{prefix}.ffn.inner_weight"], p[f"{prefix}.ffn.inner_bias"]))
        ff = _dense(ff, p[f"{prefix}.ffn.outer_weight"], p[f"{prefix}.ffn.outer_bias"])
        ff = dropout(ff, rate, training, rng)
        x = layernorm(add(x, ff), p[f"{prefix}.ffn.norm_gain"],
                      p[f"{prefix}.ffn.norm_bias"], LAYERNORM_EPS)
    return x


def pooled_cls(model: SentimentModel, encoded: Tensor, batch: int, seq: int) -> Tensor:
    """tanh(dense(.)) over the CLS (position 0) representation of each row."""
    flat = reshape(encoded, (batch * seq, model.config.hidden_size))
    cls_rows = index_rows(flat, np.arange(batch) * seq)
    return tanh(_dense(cls_rows, model.params["pooler.weight"], model.params["pooler.bias"]))


def classify_batch(model: SentimentModel, token_ids, segment_ids, attention_mask,
                   training: bool = False) -> Tensor:
    """3-way logits for a batch, shape (batch, 3); callers softmax as needed."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    batch, seq = token_ids.shape
    encoded = encode_batch(model, token_ids, segment_ids, attention_mask, training)
    pooled = pooled_cls(model, encoded, batch, seq)
    return _dense(pooled, model.params["classifier.weight"], model.params["classifier.bias"])


def encode(model: SentimentModel, example: TokenizedExample,
           training: bool = False) -> Tensor:
    """Encoder output for one example, shape (seq, hidden)."""
    out = encode_batch(model, example.token_ids[None, :], example.segment_ids[None, :],
                       example.attention_mask[None, :], training)
    return reshape(out, (len(example), model.config.hidden_size))


def classify(model: SentimentModel, example: TokenizedExample,
             training: bool = False) -> Tensor:
    """Raw 3-way logits for one example, shape (3,)."""
    out = classify_batch(model, example.token_ids[None, :], example.segment_ids[None, :],
                         example.attention_mask[None, :], training)
    return reshape(out, (NUM_CLASSES,))


def mlm_logits_batch(model: SentimentModel, token_ids, segment_ids, attention_mask,
                     flat_positions: np.ndarray, training: bool = False) -> Tensor:
    """Vocabulary logits at the given flat positions (row-major into batch x seq).

    The output projection is tied to the token embedding matrix.
    """
    if not model.include_pretrain_heads:
        raise ConfigError("model was built without pretraining heads")
    cfg = model.config
    p = model.params
    token_ids = np.asarray(token_ids, dtype=np.int64)
    batch, seq = token_ids.shape
    flat_positions = np.asarray(flat_positions, dtype=np.int64)
    if np.any(flat_positions < 0) or np.any(flat_positions >= batch * seq):
        raise IndexError("mlm position outside the batch")
    encoded = encode_batch(model, token_ids, segment_ids, attention_mask, training)
    flat = reshape(encoded, (batch * seq, cfg.hidden_size))
    picked = index_rows(flat, flat_positions)
    hidden = gelu(_dense(picked, p["mlm.transform_weight"], p["mlm.transform_bias"]))
    hidden = layernorm(hidden, p["mlm.norm_gain"], p["mlm.norm_bias"], LAYERNORM_EPS)
    return add(matmul(hidden, transpose(p["embeddings.token"])), p["mlm.output_bias"])


def mlm_logits(model: SentimentModel, example: TokenizedExample,
               positions) -> Tensor:
    """Vocabulary logits at ``positions`` of a single example."""
    positions = np.asarray(positions, dtype=np.int64)
    if np.any(positions < 0) or np.any(positions >= len(example)):
        raise IndexError(f"mlm position outside sequence of length {len(example)}")
    return mlm_logits_batch(model, example.token_ids[None, :],
                            example.segment_ids[None, :],
                            example.attention_mask[None, :], positions)


def pair_logits_batch(model: SentimentModel, token_ids, segment_ids, attention_mask,
                      training: bool = False) -> Tensor:
    if not model.include_pretrain_heads or "pair.weight" not in model.params:
        raise ConfigError(f"variant {model.variant.name!r} has no pair head")
    token_ids = np.asarray(token_ids, dtype=np.int64)
    batch, seq = token_ids.shape
    encoded = encode_batch(model, token_ids, segment_ids, attention_mask, training)
    pooled = pooled_cls(model, encoded, batch, seq)
    return _dense(pooled, model.params["pair.weight"], model.params["pair.bias"])


def pair_logits(model: SentimentModel, example: TokenizedExample) -> Tensor:
    """Binary pair-objective logits for one pair-encoded example, shape (2,)."""
    if not np.any(example.segment_ids == 1):
        raise ContractError("pair_logits needs a pair-encoded example (segment 1 present)")
    out = pair_logits_batch(model, example.token_ids[None, :],
                            example.segment_ids[None, :],
                            example.attention_mask[None, :])
    return reshape(out, (2,))


def derive_config(base: EncoderConfig, **changes) -> EncoderConfig:
    return replace(base, **changes)
