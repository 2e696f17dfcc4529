from collections import defaultdict

import numpy as np
import pytest

from ergbias import synth
from ergbias.corpus import Corpus, Document
from ergbias.graph import FAMILY_SIZES, gold_tables, normalize_gold_relations


def cross_sentence_causal(doc):
    owner = {t: doc.sentence_of(t) for t in doc.gold_events}
    biased = set()
    for r in normalize_gold_relations(doc.gold_relations).normalized:
        if r.kind.value in ("causes", "caused_by") and owner[r.source] != owner[r.target]:
            biased |= {owner[r.source], owner[r.target]}
    return [int(k in biased) for k in range(doc.num_sentences)]


@pytest.mark.parametrize("mode", ["uniform", "grammar", "lexical"])
def test_bias_rule_holds(mode):
    for doc in synth.generate(15, seed=4, mode=mode):
        assert list(doc.gold_bias) == cross_sentence_causal(doc)


def test_uniform_tokens_carry_no_information():
    corpus = synth.generate(10, seed=2)
    assert len({(d.tokens, d.sentence_spans) for d in corpus}) == 1
    assert len({d.gold_bias for d in corpus}) > 1


@pytest.mark.parametrize("mode", ["grammar", "lexical"])
def test_table_modes_label_word_pairs_consistently(mode):
    labels = defaultdict(set)
    for d in synth.generate(20, seed=3, mode=mode, vocab=3):
        t = gold_tables(d)
        for p, (i, j) in enumerate(t.pairs):
            for f in FAMILY_SIZES:
                key = (f, d.tokens[i], d.tokens[j]) if mode == "grammar" else (f, d.tokens[i])
                labels[key].add(int(np.argmax(t.family(f)[p])))
    assert all(len(v) == 1 for v in labels.values())


def test_generation_is_seeded():
    assert synth.generate(5, seed=9, mode="grammar") == synth.generate(5, seed=9, mode="grammar")


def test_bad_offsets_and_mode():
    with pytest.raises(ValueError, match="offsets"):
        synth.generate(1, sentences=2, tokens_per_sentence=3, event_offsets=(1, 3))
    with pytest.raises(ValueError, match="mode"):
        synth.generate(1, mode="random")


@pytest.mark.parametrize("labels,expected", [([1, 1, 1, 0], 2 * 0.75 / 1.75), ([1, 0, 0], 0.0), ([1, 0], 0.0)])
def test_majority_class_f1(labels, expected):
    doc = Document("m", ("w",) * len(labels), tuple((k, k + 1) for k in range(len(labels))), tuple(labels))
    assert synth.majority_class_f1(Corpus((doc,))) == pytest.approx(expected)
