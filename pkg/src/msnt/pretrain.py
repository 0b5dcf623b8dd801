"""Masked-token / sentence-pair instance generation and the pretraining loop.

Corpus format: UTF-8 text, one sentence per line, blank line between
documents.  Masking picks ``max(1, round(rate * maskable))`` positions per
example (at least one, so every instance contributes loss) and corrupts each
one independently: replaced by [MASK] with probability 0.8, by a random
non-special token with 0.1, kept as-is with 0.1.  Static mode fixes each
example's masking once; dynamic mode re-derives it per epoch from
``seed XOR epoch``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .model import SentimentModel, mlm_logits_batch, pair_logits_batch
from .tensor import AdamState, Tape, add, adam_step, backward, cross_entropy
from .tokenizer import (
    CLS,
    MASK,
    SEP,
    TokenizedExample,
    Vocab,
    collate_examples,
    encode_pair,
    encode_single,
)

FIRST_REGULAR_ID = 5  # ids 0-4 are specials and never sampled as replacements


@dataclass(frozen=True)
class MaskingConfig:
    mask_rate: float = 0.15
    mask_token_prob: float = 0.8
    random_token_prob: float = 0.1
    keep_original_prob: float = 0.1
    mode: str = "static"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError(f"mask_rate must be in (0, 1), got {self.mask_rate}")
        total = self.mask_token_prob + self.random_token_prob + self.keep_original_prob
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"corruption action split must sum to 1, got {total}")
        if min(self.mask_token_prob, self.random_token_prob,
               self.keep_original_prob) < 0:
            raise ConfigError("corruption probabilities must be nonnegative")
        if self.mode not in ("static", "dynamic"):
            raise ConfigError(f"mode must be 'static' or 'dynamic', got {self.mode!r}")


@dataclass
class MlmInstance:
    example: TokenizedExample
    corrupted_ids: np.ndarray
    masked_positions: np.ndarray
    original_ids: np.ndarray


@dataclass
class PairInstance:
    example: TokenizedExample
    is_positive: bool
    objective: str
    text_a: str = ""
    text_b: str = ""


def maskable_positions(example: TokenizedExample) -> np.ndarray:
    """Positions eligible for masking: real tokens that are not CLS or SEP."""
    ids = example.token_ids
    ok = (example.attention_mask == 1) & (ids != CLS) & (ids != SEP)
    return np.flatnonzero(ok)


def make_mlm_instance(example: TokenizedExample, cfg: MaskingConfig,
                      rng: np.random.Generator, vocab_size: int) -> MlmInstance | None:
    """Corrupt one example for masked-token prediction; None if nothing maskable."""
    candidates = maskable_positions(example)
    if candidates.size == 0:
        return None
    count = max(1, round(cfg.mask_rate * candidates.size))
    positions = np.sort(rng.choice(candidates, size=count, replace=False))
    corrupted = example.token_ids.copy()
    originals = example.token_ids[positions].copy()
    for pos in positions:
        roll = rng.random()
        if roll < cfg.mask_token_prob:
            corrupted[pos] = MASK
        elif roll < cfg.mask_token_prob + cfg.random_token_prob:
            corrupted[pos] = rng.integers(FIRST_REGULAR_ID, vocab_size)
        # else: keep the original token, the prediction target stays the same
    return MlmInstance(example=example, corrupted_ids=corrupted,
                       masked_positions=positions, original_ids=originals)


def make_pair_batch(corpus: list[list[str]], objective: str, count: int,
                    rng: np.random.Generator, vocab: Vocab,
                    max_len: int) -> list[PairInstance]:
    """Sample sentence pairs, positive with probability 1/2.

    Positives are consecutive sentences of one document.  Negatives depend on
    the objective: a random sentence from a different document (nsp), or the
    same two sentences swapped (sop).
    """
    if objective not in ("nsp", "sop"):
        raise ConfigError(f"pair objective must be 'nsp' or 'sop', got {objective!r}")
    eligible = [doc for doc in corpus if len(doc) >= 2]
    if len(corpus) < 2 or len(eligible) < 2:
        raise DataError("pair generation needs >= 2 documents with >= 2 sentences each")
    instances: list[PairInstance] = []
    for _ in range(count):
        doc_idx = int(rng.integers(len(eligible)))
        doc = eligible[doc_idx]
        start = int(rng.integers(len(doc) - 1))
        text_a, text_b = doc[start], doc[start + 1]
        positive = bool(rng.random() < 0.5)
        if not positive:
            if objective == "sop":
                text_a, text_b = text_b, text_a
            else:
                other_idx = int(rng.integers(len(eligible) - 1))
                if other_idx >= doc_idx:
                    other_idx += 1
                other = eligible[other_idx]
                text_b = other[int(rng.integers(len(other)))]
        instances.append(PairInstance(
            example=encode_pair(vocab, text_a, text_b, max_len),
            is_positive=positive, objective=objective,
            text_a=text_a, text_b=text_b))
    return instances


def read_corpus(path) -> list[list[str]]:
    """Read the one-sentence-per-line, blank-line-separated document format."""
    documents: list[list[str]] = []
    current: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line:
                current.append(line)
            elif current:
                documents.append(current)
                current = []
    if current:
        documents.append(current)
    if not documents:
        raise DataError(f"empty pretraining corpus: {path}")
    return documents


def write_corpus(documents: list[list[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, doc in enumerate(documents):
            if i:
                fh.write("\n")
            for sentence in doc:
                fh.write(sentence + "\n")


def _epoch_rng(cfg: MaskingConfig, epoch: int) -> np.random.Generator:
    return np.random.default_rng(cfg.seed ^ epoch)


def mask_examples(examples: list[TokenizedExample], cfg: MaskingConfig,
                  epoch: int, vocab_size: int) -> list[MlmInstance]:
    """Masking for one epoch; the rng stream is seed^epoch, so epoch 0 equals
    the static masking."""
    rng = _epoch_rng(cfg, epoch)
    out: list[MlmInstance] = []
    for ex in examples:
        inst = make_mlm_instance(ex, cfg, rng, vocab_size)
        if inst is not None:
            out.append(inst)
    return out


def pretrain(model: SentimentModel, vocab: Vocab, corpus: list[list[str]],
             cfg: MaskingConfig, steps: int, batch_size: int,
             learning_rate: float = 1e-3) -> tuple[SentimentModel, list[dict]]:
    """Run the variant's pretraining objective for ``steps`` optimizer steps.

    Pair-objective variants train masked-token prediction plus the binary pair
    loss (unit weight each); the dynamic-masking variant trains masked-token
    prediction alone.  Returns the model and a per-step loss trace.
    """
    variant = model.variant
    if not model.include_pretrain_heads:
        raise ConfigError("model was built without pretraining heads")
    if cfg.mode != variant.masking_mode:
        raise ConfigError(
            f"masking mode {cfg.mode!r} does not match variant "
            f"{variant.name!r} ({variant.masking_mode!r})"
        )
    use_pairs = variant.pair_objective != "none"
    max_len = model.config.max_seq_len
    base_rng = np.random.default_rng(cfg.seed)

    if use_pairs:
        count = sum(max(0, len(doc) - 1) for doc in corpus)
        count = max(count, batch_size)
        pairs = make_pair_batch(corpus, variant.pair_objective, count,
                                base_rng, vocab, max_len)
        examples = [p.example for p in pairs]
        pair_labels = np.array([1 if p.is_positive else 0 for p in pairs])
    else:
        sentences = [s for doc in corpus for s in doc]
        examples = [encode_single(vocab, s, max_len) for s in sentences]
        pair_labels = None

    params = model.trainable()
    state = AdamState(params, learning_rate=learning_rate)
    model.dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xD0]))

    trace: list[dict] = []
    masked: list[MlmInstance] = []
    order = np.array([], dtype=np.int64)
    cursor = 0
    epoch = -1
    for step in range(steps):
        if cursor >= len(order):
            epoch += 1
            if epoch == 0 or cfg.mode == "dynamic":
                masked = mask_examples(examples, cfg, epoch, vocab.size)
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, epoch, 0x5F])
            ).permutation(len(masked))
            cursor = 0
        batch_idx = order[cursor:cursor + batch_size]
        cursor += batch_size
        batch = [masked[i] for i in batch_idx]

        width = max(int(inst.example.attention_mask.sum()) for inst in batch)
        ids = np.stack([inst.corrupted_ids[:width] for inst in batch])
        segs = np.stack([inst.example.segment_ids[:width] for inst in batch])
        mask = np.stack([inst.example.attention_mask[:width] for inst in batch])
        flat_positions = np.concatenate(
            [inst.masked_positions + row * width for row, inst in enumerate(batch)])
        targets = np.concatenate([inst.original_ids for inst in batch])

        with Tape():
            mlm_loss = cross_entropy(
                mlm_logits_batch(model, ids, segs, mask, flat_positions,
                                 training=True),
                targets)
            if use_pairs:
                pair_loss = cross_entropy(
                    pair_logits_batch(model, ids, segs, mask, training=True),
                    pair_labels[batch_idx])
                loss = add(mlm_loss, pair_loss)
            else:
                pair_loss = None
                loss = mlm_loss
            backward(loss)
        adam_step(params, [p.grad for p in params], state)
        for p in params:
            p.grad = None
        trace.append({
            "step": step,
            "epoch": epoch,
            "loss": float(loss.data),
            "mlm_loss": float(mlm_loss.data),
            "pair_loss": None if pair_loss is None else float(pair_loss.data),
        })
    return model, trace
