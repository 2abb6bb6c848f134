"""Ingestion filters, split determinism, and the synthetic generator contract."""
import json

import numpy as np
import pytest

from layoutgen.core import quantize, validate
from layoutgen.data import (
    CATEGORY_NAMES,
    SynthConfig,
    expected_category_distribution,
    ingest,
    make_splits,
    synth_corpus,
    write_corpus,
)
from layoutgen.errors import DataError
from layoutgen.metrics import alignment, overlap
from layoutgen.core import QuantizerConfig


def corpus_dir(tmp_path, layouts, manifest=None, name="corpus"):
    path = tmp_path / name
    write_corpus(layouts, path, manifest)
    return path


class TestSynthCorpus:
    def test_fixed_seed_is_bit_identical(self):
        a = synth_corpus(SynthConfig(n_layouts=20, seed=5))
        b = synth_corpus(SynthConfig(n_layouts=20, seed=5))
        assert a == b

    def test_element_counts_in_range(self):
        corpus = synth_corpus(SynthConfig(n_layouts=100, seed=1))
        counts = {l.n_elements for l in corpus}
        assert min(counts) >= 2 and max(counts) <= 10

    def test_zero_jitter_alignment_is_exactly_zero(self):
        cfg = QuantizerConfig(n_categories=5, x_bins=1001, y_bins=1001, w_bins=1001,
                              h_bins=1001)
        corpus = synth_corpus(SynthConfig(n_layouts=30, jitter_std=0.0, seed=2))
        for cont in corpus:
            layout = quantize(cont, cfg)
            assert alignment(layout, cfg) == 0.0

    def test_contract_alignment_and_overlap_at_reference_jitter(self):
        # Generator contract: jitter std <= 0.005 keeps the corpus mean well
        # inside alignment <= 1.0 and overlap <= 5.0.
        cfg = QuantizerConfig(n_categories=5, x_bins=257, y_bins=257, w_bins=257,
                              h_bins=257)
        corpus = synth_corpus(SynthConfig(n_layouts=120, jitter_std=0.005, seed=3))
        quantized = [quantize(c, cfg) for c in corpus]
        aligns = [alignment(q, cfg) for q in quantized]
        overs = [overlap(q, cfg) for q in quantized]
        assert float(np.mean(aligns)) <= 1.0
        assert float(np.mean(overs)) <= 5.0

    def test_all_layouts_validate_cleanly(self):
        cfg = QuantizerConfig(n_categories=5, x_bins=32, y_bins=32, w_bins=32, h_bins=32)
        for cont in synth_corpus(SynthConfig(n_layouts=50, seed=4)):
            report = validate(quantize(cont, cfg), cfg)
            assert report.ok, report.violations

    def test_category_histogram_matches_rules(self):
        corpus = synth_corpus(SynthConfig(n_layouts=1000, seed=6))
        counts = np.zeros(len(CATEGORY_NAMES))
        for layout in corpus:
            for el in layout.elements:
                counts[el.category] += 1
        empirical = counts / counts.sum()
        expected = expected_category_distribution(SynthConfig(n_layouts=1000, seed=6))
        for i, name in enumerate(CATEGORY_NAMES):
            assert abs(empirical[i] - expected[name]) <= 0.05, name


class TestIngest:
    def test_roundtrip_counts(self, tmp_path):
        corpus = synth_corpus(SynthConfig(n_layouts=12, seed=7))
        path = corpus_dir(tmp_path, corpus)
        loaded, manifest = ingest(path)
        assert len(loaded) == 12
        assert manifest.counts["total"] == 12
        assert manifest.filters["dropped"] == {}

    def test_idempotent(self, tmp_path):
        corpus = synth_corpus(SynthConfig(n_layouts=8, seed=8))
        first_dir = corpus_dir(tmp_path, corpus, name="first")
        once, _ = ingest(first_dir)
        second_dir = corpus_dir(tmp_path, once, name="second")
        twice, _ = ingest(second_dir)
        assert once == twice

    def test_max_n_filter(self, tmp_path):
        corpus = synth_corpus(SynthConfig(n_layouts=10, seed=9))
        path = corpus_dir(tmp_path, corpus)
        loaded, manifest = ingest(path, n_max=5)
        assert all(l.n_elements <= 5 for l in loaded)
        assert manifest.filters["dropped"].get("max-n", 0) == 10 - len(loaded)

    def test_vocab_drop_policy_removes_elements(self, tmp_path):
        corpus = synth_corpus(SynthConfig(n_layouts=6, seed=10))
        named = []
        for layout in corpus:
            elements = tuple(
                type(el)(CATEGORY_NAMES[el.category], el.x, el.y, el.w, el.h, el.statuses)
                for el in layout.elements
            )
            named.append(type(layout)(layout.canvas, elements, layout.relations))
        path = corpus_dir(tmp_path, named)
        vocab = ["title", "text", "image"]  # buttons and footers are OOV
        loaded, manifest = ingest(path, vocab=vocab, vocab_policy="drop")
        for layout in loaded:
            for el in layout.elements:
                assert el.category in vocab
        assert len(loaded) >= 1

    def test_vocab_strict_policy_rejects_layouts(self, tmp_path):
        corpus = synth_corpus(SynthConfig(n_layouts=6, seed=11))
        path = corpus_dir(tmp_path, corpus)
        # integer categories: vocab of length 3 means ids 3, 4 are OOV
        with pytest.raises(DataError):
            # every layout has a footer (id 4) so everything is rejected
            ingest(path, vocab=CATEGORY_NAMES[:3], vocab_policy="strict")

    def test_boxes_adapter(self, tmp_path):
        path = tmp_path / "boxes"
        path.mkdir()
        doc = {
            "canvas": {"width": 100, "height": 100},
            "boxes": [[0, 1.0, 2.0, 30.0, 40.0], [1, 50.0, 50.0, 10.0, 10.0]],
        }
        (path / "a.json").write_text(json.dumps(doc))
        loaded, _ = ingest(path, fmt="boxes")
        assert loaded[0].n_elements == 2
        assert loaded[0].elements[1].category == 1

    def test_unreadable_file_raises(self, tmp_path):
        path = tmp_path / "bad"
        path.mkdir()
        (path / "a.json").write_text("{not json")
        with pytest.raises(DataError):
            ingest(path)

    def test_empty_dir_raises(self, tmp_path):
        path = tmp_path / "empty"
        path.mkdir()
        with pytest.raises(DataError):
            ingest(path)


class TestSplits:
    def test_exact_fractions_at_hundred(self):
        corpus = list(range(100))
        train, val, test = make_splits(corpus, seed=1)
        assert (len(train), len(val), len(test)) == (85, 5, 10)

    def test_deterministic(self):
        corpus = list(range(57))
        a = make_splits(corpus, seed=3)
        b = make_splits(corpus, seed=3)
        assert a == b
        c = make_splits(corpus, seed=4)
        assert a != c

    def test_disjoint_and_exhaustive(self):
        corpus = list(range(41))
        train, val, test = make_splits(corpus, seed=5)
        merged = sorted(train + val + test)
        assert merged == corpus
        assert not (set(train) & set(val)) and not (set(val) & set(test))

    def test_bad_fractions_rejected(self):
        with pytest.raises(DataError):
            make_splits(list(range(10)), fractions=(0.5, 0.2, 0.2), seed=0)

    def test_tiny_corpus_rejected(self):
        with pytest.raises(DataError):
            make_splits([1, 2], seed=0)
