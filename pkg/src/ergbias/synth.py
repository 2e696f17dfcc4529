"""Synthetic corpora with planted event relations and a cross-sentence bias rule.

In every generated document a sentence is labeled biased iff one of its events
has a causal edge to an event in a different sentence.  In ``uniform`` mode
causal edges are only planted across sentences; coreference, temporal and
subevent edges are distractors.

``uniform`` mode makes token features uninformative: every token is the same
word and every document has the same layout, so only the graph separates the
classes.  ``grammar`` mode uses distinct trigger words whose relation labels
follow a fixed random table over word pairs.  ``lexical`` mode keys that
table on the earlier trigger word only, so the relation heads can fit it
exactly.  In both table modes causal edges inside one sentence are kept (the
table decides every label) but do not make a sentence biased.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .corpus import Corpus, Document

_TEMPORAL = ("before", "after", "overlap")
_SUBEVENT = ("contains", "contained_by")
_INVERSE_RAW = {"before": "after", "after": "before", "causes": "caused_by", "caused_by": "causes",
                "contains": "contained_by", "contained_by": "contains"}


def _raw(source: int, target: int, family: str, label: str, rng: np.random.Generator) -> dict:
    # Half the directed annotations are written against text order.
    if label in _INVERSE_RAW and rng.random() < 0.5:
        return {"source": target, "target": source, "family": family, "label": _INVERSE_RAW[label]}
    return {"source": source, "target": target, "family": family, "label": label}


def _bias_labels(num_sentences: int, owner: dict[int, int], causal: list[tuple[int, int]]) -> list[int]:
    bias = [0] * num_sentences
    for a, b in causal:
        if owner[a] != owner[b]:
            bias[owner[a]] = 1
            bias[owner[b]] = 1
    return bias


def uniform_document(doc_id: str, rng: np.random.Generator, sentences: int = 5, tokens_per_sentence: int = 4,
                     event_offsets: tuple[int, ...] = (1, 3), causal_counts=(0.3, 0.5, 0.2),
                     distractor_rate: float = 0.15) -> Document:
    if not event_offsets or max(event_offsets) >= tokens_per_sentence or min(event_offsets) < 0:
        raise ValueError(f"event offsets {event_offsets} do not fit {tokens_per_sentence}-token sentences")
    tokens = ["w"] * (sentences * tokens_per_sentence)
    spans = tuple((k * tokens_per_sentence, (k + 1) * tokens_per_sentence) for k in range(sentences))
    events = [s + o for s, _ in spans for o in event_offsets]
    owner = {e: e // tokens_per_sentence for e in events}
    cross = [(a, b) for a, b in combinations(events, 2) if owner[a] != owner[b]]
    n_causal = int(rng.choice(len(causal_counts), p=causal_counts))
    causal_idx = rng.choice(len(cross), size=n_causal, replace=False) if n_causal else []
    causal = [cross[i] for i in causal_idx]
    relations = [_raw(a, b, "causal", str(rng.choice(("causes", "caused_by"))), rng) for a, b in causal]
    for a, b in combinations(events, 2):
        if rng.random() < distractor_rate:
            relations.append(_raw(a, b, "temporal", str(rng.choice(_TEMPORAL)), rng))
        if rng.random() < distractor_rate / 2:
            relations.append(_raw(a, b, "coreference", "coreference", rng))
        if rng.random() < distractor_rate / 2:
            relations.append(_raw(a, b, "subevent", str(rng.choice(_SUBEVENT)), rng))
    return Document(doc_id, tuple(tokens), spans, tuple(_bias_labels(sentences, owner, causal)),
                    tuple(events), tuple(relations))


def grammar_document(doc_id: str, rng: np.random.Generator, grammar: dict, vocab: int = 8,
                     filler: int = 12) -> Document:
    sentences = int(rng.integers(3, 6))
    tokens: list[str] = []
    spans = []
    events = []
    for _ in range(sentences):
        length = int(rng.integers(4, 8))
        start = len(tokens)
        slots = rng.choice(length, size=int(rng.integers(1, 3)), replace=False)
        for pos in range(length):
            if pos in slots:
                events.append(len(tokens))
                tokens.append(f"v{int(rng.integers(vocab))}")
            else:
                tokens.append(f"f{int(rng.integers(filler))}")
        spans.append((start, len(tokens)))
    events.sort()
    owner = {}
    for k, (s, e) in enumerate(spans):
        for t in events:
            if s <= t < e:
                owner[t] = k
    relations = []
    causal = []
    for a, b in combinations(events, 2):
        labels = grammar[(tokens[a], tokens[b])]
        for family, label in labels.items():
            if label is None:
                continue
            if family == "causal":
                causal.append((a, b))
            relations.append(_raw(a, b, family, label, rng))
    return Document(doc_id, tuple(tokens), tuple(spans), tuple(_bias_labels(sentences, owner, causal)),
                    tuple(events), tuple(relations))


def _draw_labels(rng: np.random.Generator, coref: bool) -> dict:
    return {
        "coreference": "coreference" if coref and rng.random() < 0.5 else None,
        "temporal": str(rng.choice(_TEMPORAL)) if rng.random() < 0.4 else None,
        "causal": str(rng.choice(("causes", "caused_by"))) if rng.random() < 0.2 else None,
        "subevent": str(rng.choice(_SUBEVENT)) if rng.random() < 0.2 else None,
    }


def relation_grammar(rng: np.random.Generator, vocab: int = 8, keyed_on_first: bool = False) -> dict:
    """Labels for every ordered trigger-word pair.

    With ``keyed_on_first`` the labels depend on the earlier word alone, which
    a head that is linear in the pair embedding can fit exactly.
    """
    words = [f"v{i}" for i in range(vocab)]
    if keyed_on_first:
        by_first = {a: _draw_labels(rng, True) for a in words}
        return {(a, b): by_first[a] for a in words for b in words}
    return {(a, b): _draw_labels(rng, a == b) for a in words for b in words}


def generate(num_docs: int, seed: int = 0, mode: str = "uniform", **kwargs) -> Corpus:
    rng = np.random.default_rng(seed)
    if mode == "uniform":
        docs = [uniform_document(f"syn{i:04d}", rng, **kwargs) for i in range(num_docs)]
    elif mode in ("grammar", "lexical"):
        grammar = relation_grammar(rng, keyed_on_first=mode == "lexical")
        docs = [grammar_document(f"syn{i:04d}", rng, grammar, **kwargs) for i in range(num_docs)]
    else:
        raise ValueError(f"unknown synthetic mode {mode!r}")
    return Corpus(tuple(docs), f"synthetic-{mode}")


def majority_class_f1(corpus: Corpus) -> float:
    """Bias-class F1 of the constant predictor of the majority class."""
    labels = [b for d in corpus for b in d.gold_bias]
    ratio = sum(labels) / len(labels)
    return 2 * ratio / (1 + ratio) if ratio > 0.5 else 0.0
