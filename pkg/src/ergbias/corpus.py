"""Documents, the JSONL corpus format, label binarization and article-level folds.

Corpus file: one JSON object per line::

    {"doc_id": "a1",
     "tokens": ["Officials", "said", ...],
     "sentences": [[0, 12], [12, 30]],           # half-open token spans
     "bias": [0, 1],                              # optional, one per sentence
     "events": [1, 15],                           # optional gold trigger tokens
     "relations": [                               # optional gold relations
         {"source": 15, "target": 1, "family": "temporal", "label": "before"}],
     "annotations": {                             # optional raw labels
         "basil": [{"lexical": false, "informational": true}, ...]}
         # or "biasedsents": [[1, 2, 3, 3, 4], ...]
    }

When ``bias`` is absent but ``annotations`` is present the binary labels are
derived with :func:`binarize_basil` / :func:`binarize_biasedsents`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]
    sentence_spans: tuple[tuple[int, int], ...]
    gold_bias: tuple[int, ...] | None = None
    gold_events: tuple[int, ...] | None = None
    gold_relations: tuple[dict, ...] | None = None
    raw_annotations: dict | None = None

    def __post_init__(self) -> None:
        n = len(self.tokens)
        prev_end = 0
        for k, (start, end) in enumerate(self.sentence_spans):
            if start < prev_end:
                raise CorpusError(f"{self.doc_id}: sentence {k} span ({start}, {end}) overlaps or is out of order")
            if not 0 <= start <= end <= n:
                raise CorpusError(f"{self.doc_id}: sentence {k} span ({start}, {end}) outside [0, {n})")
            prev_end = end
        if self.gold_bias is not None:
            if len(self.gold_bias) != len(self.sentence_spans):
                raise CorpusError(
                    f"{self.doc_id}: bias has {len(self.gold_bias)} labels for {len(self.sentence_spans)} sentences"
                )
            if any(b not in (0, 1) for b in self.gold_bias):
                raise CorpusError(f"{self.doc_id}: bias labels must be 0 or 1")
        if self.gold_events is not None:
            for t in self.gold_events:
                if self.sentence_of(t) is None:
                    raise CorpusError(f"{self.doc_id}: event token {t} lies outside every sentence span")

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    @property
    def num_sentences(self) -> int:
        return len(self.sentence_spans)

    def sentence_of(self, token: int) -> int | None:
        for k, (start, end) in enumerate(self.sentence_spans):
            if start <= token < end:
                return k
        return None

    def to_json(self) -> dict:
        out: dict[str, Any] = {
            "doc_id": self.doc_id,
            "tokens": list(self.tokens),
            "sentences": [list(s) for s in self.sentence_spans],
        }
        if self.gold_bias is not None:
            out["bias"] = list(self.gold_bias)
        if self.gold_events is not None:
            out["events"] = list(self.gold_events)
        if self.gold_relations is not None:
            out["relations"] = [dict(r) for r in self.gold_relations]
        if self.raw_annotations is not None:
            out["annotations"] = self.raw_annotations
        return out


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    name: str = "corpus"

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for d in self.documents:
            if d.doc_id in seen:
                raise CorpusError(f"duplicate doc_id {d.doc_id!r}")
            seen.add(d.doc_id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def by_id(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.doc_id == doc_id:
                return d
        raise KeyError(doc_id)

    def subset(self, doc_ids: Iterable[str]) -> "Corpus":
        wanted = set(doc_ids)
        return Corpus(tuple(d for d in self.documents if d.doc_id in wanted), self.name)


# -- binarization -------------------------------------------------------------


def binarize_basil(lexical: bool, informational: bool) -> int:
    """A BASIL sentence is biased if it carries either bias type."""
    return int(bool(lexical) or bool(informational))


def binarize_biasedsents(scales: Sequence[int]) -> int:
    """Map five annotator scales (1-4) to binary, then take the majority vote."""
    scales = list(scales)
    if len(scales) != 5:
        raise ValueError(f"expected five annotator scores, got {len(scales)}")
    for s in scales:
        if isinstance(s, bool) or int(s) != s or not 1 <= s <= 4:
            raise ValueError(f"annotator score {s!r} is not in 1..4")
    votes = sum(1 for s in scales if s >= 3)
    return int(votes >= 3)


def _bias_from_annotations(doc_id: str, annotations: dict) -> tuple[int, ...]:
    if "basil" in annotations:
        rows = annotations["basil"]
        return tuple(binarize_basil(r.get("lexical", False), r.get("informational", False)) for r in rows)
    if "biasedsents" in annotations:
        return tuple(binarize_biasedsents(r) for r in annotations["biasedsents"])
    raise CorpusError(f"{doc_id}: annotations carry neither 'basil' nor 'biasedsents'")


# -- I/O ----------------------------------------------------------------------


def _field(obj: dict, key: str, kind, lineno: int, required: bool = True):
    if key not in obj:
        if required:
            raise CorpusError(f"line {lineno}: missing field {key!r}")
        return None
    value = obj[key]
    if not isinstance(value, kind):
        raise CorpusError(f"line {lineno}: field {key!r} has type {type(value).__name__}")
    return value


def document_from_json(obj: dict, lineno: int = 0) -> Document:
    doc_id = _field(obj, "doc_id", str, lineno)
    tokens = _field(obj, "tokens", list, lineno)
    if not all(isinstance(t, str) for t in tokens):
        raise CorpusError(f"line {lineno}: field 'tokens' must hold strings")
    spans_raw = _field(obj, "sentences", list, lineno)
    try:
        spans = tuple((int(s[0]), int(s[1])) for s in spans_raw if len(s) == 2)
    except (TypeError, ValueError, IndexError) as exc:
        raise CorpusError(f"line {lineno}: field 'sentences' must hold [start, end] pairs") from exc
    if len(spans) != len(spans_raw):
        raise CorpusError(f"line {lineno}: field 'sentences' must hold [start, end] pairs")
    bias = _field(obj, "bias", list, lineno, required=False)
    events = _field(obj, "events", list, lineno, required=False)
    relations = _field(obj, "relations", list, lineno, required=False)
    annotations = _field(obj, "annotations", dict, lineno, required=False)
    try:
        if bias is None and annotations is not None:
            bias = _bias_from_annotations(doc_id, annotations)
        return Document(
            doc_id=doc_id,
            tokens=tuple(tokens),
            sentence_spans=spans,
            gold_bias=None if bias is None else tuple(int(b) for b in bias),
            gold_events=None if events is None else tuple(sorted(int(e) for e in events)),
            gold_relations=None if relations is None else tuple(dict(r) for r in relations),
            raw_annotations=annotations,
        )
    except (CorpusError, ValueError) as exc:
        raise CorpusError(f"line {lineno}: {exc}") from exc


def load_corpus(path: str | Path, name: str | None = None) -> Corpus:
    path = Path(path)
    docs = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            docs.append(document_from_json(obj, lineno))
    if not docs:
        logger.warning("corpus %s is empty", path)
    try:
        return Corpus(tuple(docs), name or path.stem)
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from exc


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for d in corpus.documents:
            fh.write(json.dumps(d.to_json()) + "\n")


# -- folds --------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def fold(self, index: int) -> list[str]:
        return [d for d, f in self.assignment.items() if f == index]

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignment.values():
            sizes[f] += 1
        return sizes

    def iteration(self, test_fold: int) -> tuple[list[str], list[str], list[str]]:
        """(train, validation, test) doc ids for the given test fold."""
        val_fold = (test_fold + 1) % self.k
        train = [d for d, f in self.assignment.items() if f not in (test_fold, val_fold)]
        return train, self.fold(val_fold), self.fold(test_fold)

    def to_json(self) -> dict:
        return {"k": self.k, "seed": self.seed, "assignment": dict(sorted(self.assignment.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "FoldPlan":
        return cls(int(obj["k"]), {str(k): int(v) for k, v in obj["assignment"].items()}, int(obj.get("seed", 0)))


def kfold_split(corpus: Corpus, k: int, seed: int = 0) -> FoldPlan:
    """Assign whole articles to ``k`` folds of near-equal size."""
    if k < 3:
        raise ValueError(f"k must be at least 3, got {k}")
    if k > len(corpus):
        raise ValueError(f"k={k} exceeds the number of articles ({len(corpus)})")
    ids = [d.doc_id for d in corpus.documents]
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldPlan(k, {ids[i]: pos % k for pos, i in enumerate(order)}, seed)


@dataclass(frozen=True)
class CorpusStats:
    articles: int
    sentences: int
    bias_sentences: int
    bias_percent: float

    def as_row(self) -> str:
        return f"{self.articles}\t{self.sentences}\t{self.bias_sentences}\t{self.bias_percent:.2f}"


def corpus_stats(corpus: Corpus) -> CorpusStats:
    sentences = bias = 0
    for d in corpus.documents:
        if d.gold_bias is None:
            raise CorpusError(f"{d.doc_id}: no gold bias labels")
        sentences += d.num_sentences
        bias += sum(d.gold_bias)
    pct = 100.0 * bias / sentences if sentences else 0.0
    return CorpusStats(len(corpus), sentences, bias, pct)
