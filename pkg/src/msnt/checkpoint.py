"""Binary checkpoint serialization.

Layout (all integers little-endian):

    magic b"MSNT" | u16 format version | u32 len + config record (JSON)
    | u16 len + variant tag (UTF-8) | u64 vocab hash (FNV-1a of the vocab
    file bytes) | u32 block count | blocks

Each block is ``u16 len + name | u8 ndim | u32 per dim | float64 data``.
Shared-parameter models store their single block once, so their files are
smaller than unshared ones at equal configuration.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointFormatError, CheckpointTruncatedError, VocabHashError
from .model import EncoderConfig, SentimentModel, VariantSpec, parameter_shapes
from .tensor import Tensor

MAGIC = b"MSNT"
FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _U64
    return h


def hash_vocab_file(path) -> int:
    with open(path, "rb") as fh:
        return fnv1a64(fh.read())


def save_checkpoint(model: SentimentModel, path) -> None:
    config_record = {
        "num_layers": model.config.num_layers,
        "hidden_size": model.config.hidden_size,
        "num_heads": model.config.num_heads,
        "vocab_size": model.config.vocab_size,
        "max_seq_len": model.config.max_seq_len,
        "ff_size": model.config.ff_size,
        "dropout_rate": model.config.dropout_rate,
        "share_parameters": model.config.share_parameters,
        "embedding_size": model.config.embedding_size,
        "include_pretrain_heads": model.include_pretrain_heads,
        "label_order": list(model.label_order),
    }
    config_bytes = json.dumps(config_record, sort_keys=True).encode("utf-8")
    variant_bytes = model.variant.name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<H", len(variant_bytes)))
        fh.write(variant_bytes)
        fh.write(struct.pack("<Q", model.vocab_hash & _U64))
        fh.write(struct.pack("<I", len(model.params)))
        for name, tensor in model.params.items():
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", tensor.data.ndim))
            for dim in tensor.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def _read(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointTruncatedError(
            f"checkpoint ended early: wanted {count} bytes, got {len(data)}"
        )
    return data


def load_checkpoint(path, expected_vocab_hash: int | None = None) -> SentimentModel:
    """Load a model; optionally verify it matches the vocabulary in use."""
    with open(path, "rb") as fh:
        magic = _read(fh, 4)
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic bytes {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<H", _read(fh, 2))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"unsupported checkpoint format version {version}, "
                f"expected {FORMAT_VERSION}"
            )
        (config_len,) = struct.unpack("<I", _read(fh, 4))
        try:
            record = json.loads(_read(fh, config_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"unreadable config record: {exc}") from exc
        (variant_len,) = struct.unpack("<H", _read(fh, 2))
        variant_name = _read(fh, variant_len).decode("utf-8")
        (vocab_hash,) = struct.unpack("<Q", _read(fh, 8))
        if expected_vocab_hash is not None and vocab_hash != expected_vocab_hash:
            raise VocabHashError(
                f"checkpoint vocab hash {vocab_hash:#018x} does not match the "
                f"supplied vocabulary ({expected_vocab_hash:#018x})"
            )
        include_heads = record.pop("include_pretrain_heads")
        label_order = tuple(record.pop("label_order"))
        config = EncoderConfig(**record)
        variant = VariantSpec.named(variant_name)

        (count,) = struct.unpack("<I", _read(fh, 4))
        params: dict[str, Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2))
            name = _read(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(fh, 1))
            shape = tuple(struct.unpack("<I", _read(fh, 4))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read(fh, size * 8), dtype="<f8").reshape(shape)
            params[name] = Tensor(data.astype(np.float64), requires_grad=True)

    expected = parameter_shapes(config, include_heads, variant.pair_objective)
    expected_names = [name for name, _ in expected]
    if list(params) != expected_names:
        raise CheckpointFormatError(
            "checkpoint parameter blocks do not match the declared configuration"
        )
    for name, shape in expected:
        if params[name].data.shape != shape:
            raise CheckpointFormatError(
                f"parameter {name} has shape {params[name].data.shape}, expected {shape}"
            )
    return SentimentModel(config=config, variant=variant, params=params,
                          include_pretrain_heads=include_heads,
                          label_order=label_order, vocab_hash=vocab_hash)
