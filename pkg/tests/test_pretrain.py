"""Masking statistics, pair sampling, and pretraining-loop behaviour."""

import numpy as np
import pytest

from msnt.errors import ConfigError, DataError
from msnt.model import EncoderConfig, VariantSpec, init_model
from msnt.pretrain import (
    MaskingConfig,
    make_mlm_instance,
    make_pair_batch,
    mask_examples,
    maskable_positions,
    pretrain,
    read_corpus,
    write_corpus,
)
from msnt.tokenizer import CLS, MASK, PAD, SEP, build_vocab, encode_single


@pytest.fixture(scope="module")
def vocab():
    words = [f"w{i}" for i in range(40)]
    return build_vocab([" ".join(words)] * 2, max_size=200)


def example_with_n_maskable(vocab, n, max_len=None):
    text = " ".join(f"w{i % 40}" for i in range(n))
    return encode_single(vocab, text, max_len or (n + 2))


class TestMaskingConfig:
    def test_defaults_valid(self):
        cfg = MaskingConfig()
        assert cfg.mask_rate == 0.15

    def test_bad_split_rejected(self):
        with pytest.raises(ConfigError):
            MaskingConfig(mask_token_prob=0.9, random_token_prob=0.2,
                          keep_original_prob=0.1)

    def test_bad_rate_rejected(self):
        with pytest.raises(ConfigError):
            MaskingConfig(mask_rate=0.0)


class TestMakeMlmInstance:
    def test_twenty_maskable_gives_exactly_three(self, vocab):
        ex = example_with_n_maskable(vocab, 20)
        assert maskable_positions(ex).size == 20
        inst = make_mlm_instance(ex, MaskingConfig(), np.random.default_rng(0),
                                 vocab.size)
        assert inst.masked_positions.size == 3

    def test_single_maskable_token_still_masked(self, vocab):
        ex = example_with_n_maskable(vocab, 1, max_len=8)
        inst = make_mlm_instance(ex, MaskingConfig(), np.random.default_rng(0),
                                 vocab.size)
        assert inst.masked_positions.size == 1

    def test_nothing_maskable_skips(self, vocab):
        ex = encode_single(vocab, "", max_len=6)
        assert make_mlm_instance(ex, MaskingConfig(), np.random.default_rng(0),
                                 vocab.size) is None

    def test_specials_never_masked(self, vocab):
        rng = np.random.default_rng(1)
        for _ in range(200):
            ex = example_with_n_maskable(vocab, int(rng.integers(1, 20)), max_len=24)
            inst = make_mlm_instance(ex, MaskingConfig(), rng, vocab.size)
            touched = ex.token_ids[inst.masked_positions]
            assert CLS not in touched and SEP not in touched and PAD not in touched

    def test_targets_record_originals(self, vocab):
        ex = example_with_n_maskable(vocab, 10)
        inst = make_mlm_instance(ex, MaskingConfig(), np.random.default_rng(3),
                                 vocab.size)
        assert np.array_equal(inst.original_ids, ex.token_ids[inst.masked_positions])

    def test_corruption_split_statistics(self, vocab):
        """Over 10k masked positions: 0.80/0.10/0.10 within +-0.02 each."""
        rng = np.random.default_rng(42)
        cfg = MaskingConfig()
        ex = example_with_n_maskable(vocab, 20)
        n_mask = n_random = n_keep = total = 0
        while total < 10_000:
            inst = make_mlm_instance(ex, cfg, rng, vocab.size)
            for pos in inst.masked_positions:
                total += 1
                new = inst.corrupted_ids[pos]
                old = ex.token_ids[pos]
                if new == MASK:
                    n_mask += 1
                elif new == old:
                    n_keep += 1
                else:
                    n_random += 1
        assert abs(n_mask / total - 0.80) < 0.02
        assert abs(n_random / total - 0.10) < 0.02
        assert abs(n_keep / total - 0.10) < 0.02

    def test_aggregate_mask_rate_within_one_percent(self, vocab):
        rng = np.random.default_rng(7)
        cfg = MaskingConfig()
        masked = tokens = 0
        while tokens < 10_000:
            ex = example_with_n_maskable(vocab, 20)
            inst = make_mlm_instance(ex, cfg, rng, vocab.size)
            masked += inst.masked_positions.size
            tokens += 20
        assert abs(masked / tokens - 0.15) <= 0.01


class TestMakePairBatch:
    def corpus(self):
        return [[f"w{d} w{d + 1} w{d + 2}", f"w{d + 3} w{d + 4}", f"w{d + 5} w{d}"]
                for d in range(0, 9, 3)]

    def test_positive_rate_about_half(self, vocab):
        pairs = make_pair_batch(self.corpus(), "nsp", 5000,
                                np.random.default_rng(0), vocab, max_len=12)
        rate = np.mean([p.is_positive for p in pairs])
        assert abs(rate - 0.5) < 0.02

    def test_sop_negative_is_swap(self, vocab):
        pairs = make_pair_batch(self.corpus(), "sop", 500,
                                np.random.default_rng(1), vocab, max_len=12)
        docs = self.corpus()
        consecutive = {(doc[i], doc[i + 1]) for doc in docs for i in range(len(doc) - 1)}
        for p in pairs:
            if p.is_positive:
                assert (p.text_a, p.text_b) in consecutive
            else:
                assert (p.text_b, p.text_a) in consecutive

    def test_nsp_negatives_cross_documents(self, vocab):
        docs = self.corpus()
        sentence_to_doc = {s: i for i, doc in enumerate(docs) for s in doc}
        pairs = make_pair_batch(docs, "nsp", 2000, np.random.default_rng(2),
                                vocab, max_len=12)
        for p in pairs:
            if not p.is_positive:
                assert sentence_to_doc[p.text_a] != sentence_to_doc[p.text_b]

    def test_degenerate_corpus_rejected(self, vocab):
        with pytest.raises(DataError):
            make_pair_batch([["one sentence"]], "nsp", 10,
                            np.random.default_rng(0), vocab, max_len=12)
        with pytest.raises(DataError):
            make_pair_batch([["a b", "c d"]], "nsp", 10,
                            np.random.default_rng(0), vocab, max_len=12)

    def test_unknown_objective(self, vocab):
        with pytest.raises(ConfigError):
            make_pair_batch(self.corpus(), "mlm", 10, np.random.default_rng(0),
                            vocab, max_len=12)


class TestCorpusIO:
    def test_round_trip(self, tmp_path):
        docs = [["alpha beta", "gamma delta"], ["epsilon zeta", "eta theta", "iota"]]
        path = tmp_path / "corpus.txt"
        write_corpus(docs, path)
        assert read_corpus(path) == docs

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "corpus.txt"
        path.write_text("\n\n")
        with pytest.raises(DataError):
            read_corpus(path)


def small_corpus(n_docs=10, doc_len=5):
    rng = np.random.default_rng(0)
    docs = []
    for _ in range(n_docs):
        docs.append([" ".join(f"w{i}" for i in rng.integers(0, 40, size=6))
                     for _ in range(doc_len)])
    return docs


class TestPretrainLoop:
    def make_model(self, variant, hidden=32, vocab_size=200):
        share = variant == "albertlike"
        cfg = EncoderConfig(num_layers=2, hidden_size=hidden, num_heads=2,
                            vocab_size=vocab_size, max_seq_len=16, ff_size=64,
                            dropout_rate=0.1, share_parameters=share)
        return init_model(cfg, VariantSpec.named(variant), seed=1)

    def test_zero_steps_leaves_parameters_unchanged(self, vocab):
        model = self.make_model("bertlike", vocab_size=vocab.size)
        before = model.snapshot()
        _, trace = pretrain(model, vocab, small_corpus(), MaskingConfig(),
                            steps=0, batch_size=4)
        assert trace == []
        for name, p in model.params.items():
            assert np.array_equal(p.data, before[name])

    def test_dynamic_masking_differs_across_epochs_static_does_not(self, vocab):
        examples = [example_with_n_maskable(vocab, 12, max_len=16) for _ in range(8)]
        static_cfg = MaskingConfig(mode="static", seed=5)
        dynamic_cfg = MaskingConfig(mode="dynamic", seed=5)
        e0 = mask_examples(examples, dynamic_cfg, epoch=0, vocab_size=vocab.size)
        e1 = mask_examples(examples, dynamic_cfg, epoch=1, vocab_size=vocab.size)
        assert any(
            not np.array_equal(a.masked_positions, b.masked_positions)
            or not np.array_equal(a.corrupted_ids, b.corrupted_ids)
            for a, b in zip(e0, e1))
        s0 = mask_examples(examples, static_cfg, epoch=0, vocab_size=vocab.size)
        for a, b in zip(e0, s0):  # epoch 0 streams coincide: seed ^ 0 == seed
            assert np.array_equal(a.corrupted_ids, b.corrupted_ids)

    def test_static_variant_reuses_epoch_zero_masking(self, vocab):
        # run enough steps to cross an epoch boundary and confirm repetition
        model = self.make_model("bertlike", hidden=16, vocab_size=vocab.size)
        corpus = small_corpus(4, 3)
        _, trace = pretrain(model, vocab, corpus, MaskingConfig(mode="static", seed=3),
                            steps=8, batch_size=8)
        assert max(t["epoch"] for t in trace) >= 1

    def test_mode_variant_mismatch_rejected(self, vocab):
        model = self.make_model("robertalike", hidden=16, vocab_size=vocab.size)
        with pytest.raises(ConfigError):
            pretrain(model, vocab, small_corpus(), MaskingConfig(mode="static"),
                     steps=1, batch_size=2)

    def test_fresh_model_mlm_loss_near_log_vocab(self, vocab):
        model = self.make_model("robertalike", hidden=32, vocab_size=vocab.size)
        _, trace = pretrain(model, vocab, small_corpus(),
                            MaskingConfig(mode="dynamic", seed=0),
                            steps=1, batch_size=16, learning_rate=0.0)
        assert trace[0]["mlm_loss"] == pytest.approx(np.log(vocab.size), rel=0.10)

    def test_loss_decreases_on_toy_corpus(self, vocab):
        """300 steps, 50-sentence corpus, 2-layer hidden-32 model."""
        rng = np.random.default_rng(9)
        docs = []
        for _ in range(10):
            docs.append([" ".join(f"w{i}" for i in rng.integers(0, 40, size=8))
                         for _ in range(5)])
        model = self.make_model("robertalike", hidden=32, vocab_size=vocab.size)
        _, trace = pretrain(model, vocab, docs, MaskingConfig(mode="dynamic", seed=2),
                            steps=300, batch_size=16, learning_rate=1e-3)
        first = np.mean([t["mlm_loss"] for t in trace[:20]])
        last = np.mean([t["mlm_loss"] for t in trace[-20:]])
        assert last < first

    def test_bit_reproducible_with_fixed_seed(self, vocab):
        corpus = small_corpus(4, 4)
        traces = []
        for _ in range(2):
            model = self.make_model("bertlike", hidden=16, vocab_size=vocab.size)
            _, trace = pretrain(model, vocab, corpus, MaskingConfig(seed=17),
                                steps=6, batch_size=4)
            traces.append([t["loss"] for t in trace])
        assert traces[0] == traces[1]

    def test_pair_loss_present_only_with_pair_objective(self, vocab):
        corpus = small_corpus(4, 4)
        bert = self.make_model("bertlike", hidden=16, vocab_size=vocab.size)
        _, trace = pretrain(bert, vocab, corpus, MaskingConfig(seed=0),
                            steps=2, batch_size=4)
        assert all(t["pair_loss"] is not None for t in trace)
        roberta = self.make_model("robertalike", hidden=16, vocab_size=vocab.size)
        _, trace = pretrain(roberta, vocab, corpus,
                            MaskingConfig(mode="dynamic", seed=0),
                            steps=2, batch_size=4)
        assert all(t["pair_loss"] is None for t in trace)
