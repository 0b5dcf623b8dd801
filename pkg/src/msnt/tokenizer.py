"""Subword vocabulary construction and BERT-style text encoding.

Vocabulary building is frequency-greedy rather than likelihood-trained:
whole words that clear a frequency floor become tokens, and single-character
pieces (bare and ``##``-prefixed continuations) guarantee that every corpus
word stays representable.  Encoding uses greedy longest-match segmentation.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercased word split: alphanumeric runs plus single punctuation marks."""
    return _WORD_RE.findall(text.lower())


def split_words_with_spans(text: str) -> list[tuple[str, tuple[int, int]]]:
    lowered = text.lower()
    return [(m.group(0), (m.start(), m.end())) for m in _WORD_RE.finditer(lowered)]


@dataclass(frozen=True)
class Vocab:
    """Immutable token inventory; ids 0-4 are the special tokens."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(repr=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:5]) != SPECIAL_TOKENS:
            raise ConfigError("vocab must start with the five special tokens")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.id_to_token:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        return cls.from_tokens(tokens)

    @classmethod
    def from_tokens(cls, tokens) -> "Vocab":
        tokens = tuple(tokens)
        mapping = {tok: i for i, tok in enumerate(tokens)}
        if len(mapping) != len(tokens):
            raise DataError("vocab file contains duplicate tokens")
        return cls(tokens, mapping)


@dataclass
class TokenizedExample:
    """Encoded sequence: ids, segment ids and attention mask of equal length.

    ``word_spans`` maps each position back to the character span of the source
    word (None for specials and padding), so augmentations can round-trip.
    """

    token_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    word_spans: tuple = ()

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64)
        self.attention_mask = np.asarray(self.attention_mask, dtype=np.int64)
        if not (len(self.token_ids) == len(self.segment_ids) == len(self.attention_mask)):
            raise DataError("token_ids, segment_ids and attention_mask lengths differ")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def real_length(self) -> int:
        return int(self.attention_mask.sum())


def build_vocab(corpus, max_size: int, min_frequency: int = 1) -> Vocab:
    """Build a vocabulary from an iterable of text lines.

    Deterministic given corpus order; candidates are ranked by descending
    frequency with lexicographic tie-breaks.  Character pieces are admitted
    first so every corpus word remains decomposable under greedy matching.
    """
    if max_size <= 5:
        raise ConfigError(f"max_size must exceed 5 (specials), got {max_size}")
    if min_frequency < 1:
        raise ConfigError(f"min_frequency must be >= 1, got {min_frequency}")
    word_counts: Counter[str] = Counter()
    for line in corpus:
        word_counts.update(split_words(line))
    if not word_counts:
        raise DataError("empty corpus: no words to build a vocabulary from")

    char_counts: Counter[str] = Counter()
    for word, count in word_counts.items():
        for ch in word:
            char_counts[ch] += count

    tokens: list[str] = list(SPECIAL_TOKENS)
    seen = set(tokens)

    def admit(token: str) -> bool:
        if len(tokens) >= max_size:
            return False
        if token not in seen:
            tokens.append(token)
            seen.add(token)
        return True

    for ch, _ in sorted(char_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        admit(ch)
        admit("##" + ch)
    ranked = sorted(word_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for word, count in ranked:
        if count < min_frequency:
            continue
        admit(word)
    return Vocab.from_tokens(tokens)


def segment_word(vocab: Vocab, word: str) -> list[str]:
    """Greedy longest-match subword split; [UNK] if the word cannot be covered."""
    if word in vocab:
        return [word]
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [SPECIAL_TOKENS[UNK]]
        pieces.append(piece)
        start = end
    return pieces


def tokenize(vocab: Vocab, text: str) -> tuple[list[str], list[tuple[int, int]]]:
    """Split ``text`` into subword tokens plus the source-word span per token."""
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for word, span in split_words_with_spans(text):
        for piece in segment_word(vocab, word):
            tokens.append(piece)
            spans.append(span)
    return tokens, spans


def encode_single(vocab: Vocab, text: str, max_len: int) -> TokenizedExample:
    """Encode one sentence as ``[CLS] tokens [SEP]`` padded to ``max_len``."""
    if max_len < 3:
        raise ConfigError(f"max_len must be >= 3, got {max_len}")
    tokens, spans = tokenize(vocab, text)
    tokens = tokens[: max_len - 2]
    spans = spans[: max_len - 2]
    ids = [CLS] + [vocab.id_of(t) for t in tokens] + [SEP]
    used = len(ids)
    word_spans = [None] + spans + [None]
    pad = max_len - used
    ids.extend([PAD] * pad)
    word_spans.extend([None] * pad)
    return TokenizedExample(
        token_ids=np.array(ids, dtype=np.int64),
        segment_ids=np.zeros(max_len, dtype=np.int64),
        attention_mask=np.array([1] * used + [0] * pad, dtype=np.int64),
        word_spans=tuple(word_spans),
    )


def encode_pair(vocab: Vocab, text_a: str, text_b: str, max_len: int) -> TokenizedExample:
    """Encode ``[CLS] A [SEP] B [SEP]`` with 0/1 segments.

    When the pair exceeds the budget, tokens are dropped from the end of the
    longer side first, so equally long sides end up equally truncated.
    """
    if max_len < 5:
        raise ConfigError(f"max_len must be >= 5 for pairs, got {max_len}")
    tokens_a, spans_a = tokenize(vocab, text_a)
    tokens_b, spans_b = tokenize(vocab, text_b)
    budget = max_len - 3
    while len(tokens_a) + len(tokens_b) > budget:
        if len(tokens_a) > len(tokens_b):
            tokens_a.pop()
            spans_a.pop()
        else:
            tokens_b.pop()
            spans_b.pop()
    ids = [CLS] + [vocab.id_of(t) for t in tokens_a] + [SEP]
    segments = [0] * len(ids)
    word_spans = [None] + spans_a + [None]
    ids += [vocab.id_of(t) for t in tokens_b] + [SEP]
    segments += [1] * (len(tokens_b) + 1)
    word_spans += spans_b + [None]
    used = len(ids)
    pad = max_len - used
    ids.extend([PAD] * pad)
    segments.extend([1] * pad)
    word_spans.extend([None] * pad)
    return TokenizedExample(
        token_ids=np.array(ids, dtype=np.int64),
        segment_ids=np.array(segments, dtype=np.int64),
        attention_mask=np.array([1] * used + [0] * pad, dtype=np.int64),
        word_spans=tuple(word_spans),
    )


def decode(vocab: Vocab, ids) -> str:
    """Best-effort inverse of encoding: merge ``##`` pieces, drop specials."""
    words: list[str] = []
    for i in np.asarray(ids, dtype=np.int64):
        if i < 5:
            continue
        token = vocab.id_to_token[int(i)]
        if token.startswith("##") and words:
            words[-1] += token[2:]
        else:
            words.append(token)
    return " ".join(words)


def collate_examples(examples) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack examples into (ids, segments, mask) cropped to the longest real length."""
    width = max(ex.real_length for ex in examples)
    ids = np.stack([ex.token_ids[:width] for ex in examples])
    segments = np.stack([ex.segment_ids[:width] for ex in examples])
    mask = np.stack([ex.attention_mask[:width] for ex in examples])
    return ids, segments, mask
