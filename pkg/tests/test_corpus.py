import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergbias.corpus import (Corpus, CorpusError, Document, FoldPlan, binarize_basil, binarize_biasedsents,
                            corpus_stats, document_from_json, kfold_split, load_corpus, save_corpus)


def doc(doc_id="d", sentences=2, bias=None, events=None):
    tokens = tuple(f"t{i}" for i in range(3 * sentences))
    spans = tuple((3 * k, 3 * k + 3) for k in range(sentences))
    return Document(doc_id, tokens, spans, bias, events)


def corpus_of(n, sentences=2):
    return Corpus(tuple(doc(f"a{i:03d}", sentences, (0,) * sentences) for i in range(n)))


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))


class TestLoadCorpus:
    def test_two_documents(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [doc("a", bias=(0, 1)).to_json(), doc("b", bias=(1, 1)).to_json()])
        c = load_corpus(p)
        assert len(c) == 2
        assert c.by_id("b").gold_bias == (1, 1)

    def test_empty_file_warns(self, tmp_path, caplog):
        p = tmp_path / "empty.jsonl"
        p.write_text("")
        with caplog.at_level(logging.WARNING):
            c = load_corpus(p)
        assert len(c) == 0
        assert "empty" in caplog.text

    def test_bias_length_mismatch_rejected(self, tmp_path):
        p = tmp_path / "c.jsonl"
        obj = doc("a").to_json() | {"bias": [1]}
        write_lines(p, [doc("ok").to_json(), obj])
        with pytest.raises(CorpusError, match="line 2"):
            load_corpus(p)

    def test_overlapping_spans_rejected(self):
        with pytest.raises(CorpusError, match="overlaps"):
            document_from_json({"doc_id": "x", "tokens": ["a"] * 6, "sentences": [[0, 4], [3, 6]]}, 5)

    def test_missing_field_named(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [{"doc_id": "x", "sentences": []}])
        with pytest.raises(CorpusError, match=r"line 1: missing field 'tokens'"):
            load_corpus(p)

    def test_wrong_type_named(self):
        with pytest.raises(CorpusError, match=r"line 3: field 'tokens'"):
            document_from_json({"doc_id": "x", "tokens": "abc", "sentences": []}, 3)

    def test_invalid_json_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"doc_id": "x"\n')
        with pytest.raises(CorpusError, match="line 1"):
            load_corpus(p)

    def test_event_outside_sentences_rejected(self):
        with pytest.raises(CorpusError, match="event token 5"):
            Document("x", ("a",) * 6, ((0, 3),), None, (5,))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(CorpusError, match="duplicate"):
            Corpus((doc("a"), doc("a")))

    def test_round_trip(self, tmp_path):
        c = Corpus((doc("a", bias=(0, 1), events=(1, 4)),))
        p = tmp_path / "c.jsonl"
        save_corpus(c, p)
        assert load_corpus(p).documents == c.documents

    def test_bias_derived_from_basil(self):
        d = document_from_json({
            "doc_id": "x", "tokens": ["a"] * 4, "sentences": [[0, 2], [2, 4]],
            "annotations": {"basil": [{"lexical": False, "informational": True}, {}]},
        })
        assert d.gold_bias == (1, 0)

    def test_bias_derived_from_biasedsents(self):
        d = document_from_json({
            "doc_id": "x", "tokens": ["a"] * 4, "sentences": [[0, 2], [2, 4]],
            "annotations": {"biasedsents": [[1, 2, 3, 3, 4], [1, 1, 1, 1, 1]]},
        })
        assert d.gold_bias == (1, 0)


class TestBinarization:
    @pytest.mark.parametrize("lex,inf,expected", [(False, True, 1), (False, False, 0), (True, True, 1), (True, False, 1)])
    def test_basil(self, lex, inf, expected):
        assert binarize_basil(lex, inf) == expected

    @pytest.mark.parametrize("scores,expected", [([1, 2, 3, 3, 4], 1), ([1, 1, 1, 1, 1], 0), ([4, 4, 4, 2, 1], 1),
                                                 ([3, 3, 1, 2, 2], 0)])
    def test_biasedsents(self, scores, expected):
        assert binarize_biasedsents(scores) == expected

    @pytest.mark.parametrize("scores", [[1, 2, 3, 4], [1, 2, 3, 4, 4, 4], [0, 1, 2, 3, 4], [1, 2, 3, 4, 5]])
    def test_biasedsents_rejects(self, scores):
        with pytest.raises(ValueError):
            binarize_biasedsents(scores)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=5, max_size=5), st.randoms(use_true_random=False))
    def test_biasedsents_permutation_invariant(self, scores, rnd):
        shuffled = list(scores)
        rnd.shuffle(shuffled)
        assert binarize_biasedsents(scores) == binarize_biasedsents(shuffled)


class TestKFold:
    def test_300_articles(self):
        plan = kfold_split(corpus_of(300), 10, seed=1)
        assert plan.fold_sizes() == [30] * 10

    def test_46_articles(self):
        sizes = kfold_split(corpus_of(46), 10).fold_sizes()
        assert set(sizes) == {4, 5} and sum(sizes) == 46

    def test_deterministic(self):
        c = corpus_of(50)
        assert kfold_split(c, 10, 7) == kfold_split(c, 10, 7)
        assert kfold_split(c, 10, 7) != kfold_split(c, 10, 8)

    def test_k_too_large(self):
        with pytest.raises(ValueError, match="exceeds"):
            kfold_split(corpus_of(5), 6)

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            kfold_split(corpus_of(5), 2)

    def test_json_round_trip(self):
        plan = kfold_split(corpus_of(12), 4, 3)
        assert FoldPlan.from_json(json.loads(json.dumps(plan.to_json()))) == plan

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 60), st.integers(3, 12), st.integers(0, 1000))
    def test_partition_and_rotation(self, n, k, seed):
        if k > n:
            return
        c = corpus_of(n, sentences=1)
        plan = kfold_split(c, k, seed)
        assert sorted(plan.assignment) == sorted(d.doc_id for d in c)
        sizes = plan.fold_sizes()
        assert max(sizes) - min(sizes) <= 1
        tested = []
        for t in range(k):
            train, val, test = plan.iteration(t)
            assert not set(train) & set(val) and not set(train) & set(test) and not set(val) & set(test)
            assert len(train) + len(val) + len(test) == n
            assert val == plan.fold((t + 1) % k)
            tested += test
        assert sorted(tested) == sorted(plan.assignment)


class TestStats:
    def test_basil_shaped(self):
        docs = []
        remaining_bias = 1623
        per_doc = [7977 // 300 + (1 if i < 7977 % 300 else 0) for i in range(300)]
        for i, n in enumerate(per_doc):
            b = min(n, remaining_bias)
            remaining_bias -= b
            docs.append(Document(f"a{i}", ("w",) * n, tuple((j, j + 1) for j in range(n)), (1,) * b + (0,) * (n - b)))
        s = corpus_stats(Corpus(tuple(docs)))
        assert (s.articles, s.sentences, s.bias_sentences) == (300, 7977, 1623)
        assert s.bias_percent == pytest.approx(20.34, abs=0.01)

    def test_one_biased_sentence(self):
        s = corpus_stats(Corpus((Document("a", ("w",), ((0, 1),), (1,)),)))
        assert (s.articles, s.sentences, s.bias_sentences, s.bias_percent) == (1, 1, 1, 100.0)

    def test_biasedsents_shaped_ratio(self):
        # 46 articles, 842 sentences, 290 biased
        docs = []
        sizes = [842 // 46 + (1 if i < 842 % 46 else 0) for i in range(46)]
        bias_left = 290
        for i, n in enumerate(sizes):
            b = min(n, bias_left)
            bias_left -= b
            docs.append(Document(f"b{i}", ("w",) * n, tuple((j, j + 1) for j in range(n)), (1,) * b + (0,) * (n - b)))
        s = corpus_stats(Corpus(tuple(docs)))
        assert (s.articles, s.sentences, s.bias_sentences) == (46, 842, 290)
        assert s.bias_percent == pytest.approx(34.44, abs=0.01)

    def test_missing_labels_rejected(self):
        with pytest.raises(CorpusError):
            corpus_stats(Corpus((doc("a"),)))
