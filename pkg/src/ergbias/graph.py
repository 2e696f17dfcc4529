"""Soft-label tables, hard labels and the event relation graph."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document

HARDENING_RULE = "argmax-lowest-index/v1"
PROB_TOL = 1e-6


class RelationKind(str, Enum):
    COREFERENCE = "coreference"
    BEFORE = "before"
    AFTER = "after"
    OVERLAP = "overlap"
    CAUSES = "causes"
    CAUSED_BY = "caused_by"
    CONTAINS = "contains"
    CONTAINED_BY = "contained_by"
    EVENT_SENTENCE = "event_sentence"

    @property
    def index(self) -> int:
        return _KIND_INDEX[self]

    @property
    def inverse(self) -> "RelationKind":
        return INVERSE[self]


EVENT_KINDS: tuple[RelationKind, ...] = tuple(RelationKind)[:8]
_KIND_INDEX = {k: i for i, k in enumerate(RelationKind)}
INVERSE = {
    RelationKind.COREFERENCE: RelationKind.COREFERENCE,
    RelationKind.OVERLAP: RelationKind.OVERLAP,
    RelationKind.BEFORE: RelationKind.AFTER,
    RelationKind.AFTER: RelationKind.BEFORE,
    RelationKind.CAUSES: RelationKind.CAUSED_BY,
    RelationKind.CAUSED_BY: RelationKind.CAUSES,
    RelationKind.CONTAINS: RelationKind.CONTAINED_BY,
    RelationKind.CONTAINED_BY: RelationKind.CONTAINS,
    RelationKind.EVENT_SENTENCE: RelationKind.EVENT_SENTENCE,
}

# Category order of each soft-label vector; index 0 is always "no relation".
FAMILIES: dict[str, tuple[RelationKind | None, ...]] = {
    "coref": (None, RelationKind.COREFERENCE),
    "temporal": (None, RelationKind.BEFORE, RelationKind.AFTER, RelationKind.OVERLAP),
    "causal": (None, RelationKind.CAUSES, RelationKind.CAUSED_BY),
    "subevent": (None, RelationKind.CONTAINS, RelationKind.CONTAINED_BY),
}
FAMILY_OF = {kind: fam for fam, cats in FAMILIES.items() for kind in cats if kind is not None}
FAMILY_SIZES = {fam: len(cats) for fam, cats in FAMILIES.items()}


# -- soft labels --------------------------------------------------------------


@dataclass
class SoftLabelTables:
    """Per-token event probabilities and per-pair relation probabilities.

    ``pairs[p] = (i, j)`` with ``i < j`` token indices; row ``p`` of each
    family matrix is that pair's distribution.
    """

    event: np.ndarray
    pairs: list[tuple[int, int]] = field(default_factory=list)
    coref: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    temporal: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    causal: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    subevent: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self) -> None:
        self.event = np.asarray(self.event, dtype=np.float64).reshape(-1, 2)
        self.pairs = [(int(i), int(j)) for i, j in self.pairs]
        for fam, size in FAMILY_SIZES.items():
            setattr(self, fam, np.asarray(getattr(self, fam), dtype=np.float64).reshape(-1, size))

    def family(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def validate(self, num_tokens: int | None = None) -> None:
        if num_tokens is not None and self.event.shape[0] != num_tokens:
            raise ValueError(f"event table has {self.event.shape[0]} rows for {num_tokens} tokens")
        _check_distribution("event", self.event)
        events = set(identify_events(self))
        for i, j in self.pairs:
            if not i < j:
                raise ValueError(f"pair ({i}, {j}) is not in text order")
            if i not in events or j not in events:
                raise ValueError(f"pair ({i}, {j}) references a non-event token")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("duplicate pair keys")
        for fam in FAMILY_SIZES:
            table = self.family(fam)
            if table.shape[0] != len(self.pairs):
                raise ValueError(f"{fam} table has {table.shape[0]} rows for {len(self.pairs)} pairs")
            _check_distribution(fam, table)

    def to_json(self) -> dict:
        return {
            "event": self.event.tolist(),
            "pairs": [
                {
                    "i": i,
                    "j": j,
                    **{fam: self.family(fam)[p].tolist() for fam in FAMILY_SIZES},
                }
                for p, (i, j) in enumerate(self.pairs)
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SoftLabelTables":
        pairs = obj.get("pairs", [])
        return cls(
            event=np.asarray(obj["event"], dtype=np.float64),
            pairs=[(p["i"], p["j"]) for p in pairs],
            **{fam: np.asarray([p[fam] for p in pairs], dtype=np.float64).reshape(-1, n) for fam, n in FAMILY_SIZES.items()},
        )

    def checksum(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_distribution(name: str, table: np.ndarray) -> None:
    if table.size == 0:
        return
    if not np.all(np.isfinite(table)) or np.any(table < 0):
        raise ValueError(f"{name} table has negative or non-finite probabilities")
    bad = np.abs(table.sum(axis=1) - 1.0) > PROB_TOL
    if np.any(bad):
        row = int(np.argmax(bad))
        raise ValueError(f"{name} table row {row} sums to {table[row].sum():.8f}, not 1")


def load_tables(path: str | Path) -> dict[str, SoftLabelTables]:
    """Read a JSONL file of ``{"doc_id": ..., "event": ..., "pairs": [...]}``."""
    out = {}
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            try:
                out[obj["doc_id"]] = SoftLabelTables.from_json(obj)
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"line {lineno} (doc {obj.get('doc_id')!r}): malformed tables: {exc}") from exc
    return out


def save_tables(tables: Mapping[str, SoftLabelTables], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for doc_id in tables:
            fh.write(json.dumps({"doc_id": doc_id, **tables[doc_id].to_json()}) + "\n")


# -- events and pairs ---------------------------------------------------------


def identify_events(tables: SoftLabelTables) -> list[int]:
    """Tokens whose event probability strictly exceeds the non-event one."""
    return [int(i) for i in np.flatnonzero(tables.event[:, 1] > tables.event[:, 0])]


def form_pairs(events: Sequence[int]) -> list[tuple[int, int]]:
    events = list(events)
    if any(b <= a for a, b in zip(events, events[1:])):
        raise ValueError("event indices must be strictly increasing")
    return list(combinations(events, 2))


@dataclass
class HardLabels:
    """Argmax categories: ``event[t]`` in {0, 1}; ``pairs[(i, j)][family]`` a category index."""

    event: np.ndarray
    pairs: dict[tuple[int, int], dict[str, int]]

    @property
    def events(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.event)]


def harden(tables: SoftLabelTables) -> HardLabels:
    """Argmax of every vector; ties go to the lowest index."""
    event = np.argmax(tables.event, axis=1) if len(tables.event) else np.zeros(0, dtype=int)
    pairs = {}
    for p, key in enumerate(tables.pairs):
        pairs[key] = {fam: int(np.argmax(tables.family(fam)[p])) for fam in FAMILY_SIZES}
    return HardLabels(event.astype(int), pairs)


def onehot(hard: HardLabels) -> SoftLabelTables:
    event = np.eye(2)[hard.event] if len(hard.event) else np.zeros((0, 2))
    keys = list(hard.pairs)
    return SoftLabelTables(
        event=event,
        pairs=keys,
        **{fam: np.eye(n)[[hard.pairs[k][fam] for k in keys]].reshape(-1, n) for fam, n in FAMILY_SIZES.items()},
    )


# -- gold relation normalization ----------------------------------------------

_OVERLAP_LABELS = {"simultaneous", "overlap", "begins-on", "ends-on", "contains"}
_DIRECTED = {
    ("temporal", "before"): (RelationKind.BEFORE, RelationKind.AFTER),
    ("temporal", "after"): (RelationKind.AFTER, RelationKind.BEFORE),
    ("causal", "causes"): (RelationKind.CAUSES, RelationKind.CAUSED_BY),
    ("causal", "caused_by"): (RelationKind.CAUSED_BY, RelationKind.CAUSES),
    ("subevent", "contains"): (RelationKind.CONTAINS, RelationKind.CONTAINED_BY),
    ("subevent", "contained_by"): (RelationKind.CONTAINED_BY, RelationKind.CONTAINS),
}
_FAMILY_ALIASES = {"coreference": "coref", "coref": "coref", "temporal": "temporal", "causal": "causal", "subevent": "subevent"}


def _canon(label: str) -> str:
    return label.strip().lower().replace(" ", "_").replace("caused-by", "caused_by").replace("contained-by", "contained_by").replace("begins_on", "begins-on").replace("ends_on", "ends-on")


@dataclass(frozen=True)
class GoldRelation:
    source: int
    target: int
    kind: RelationKind

    def to_json(self) -> dict:
        return {"source": self.source, "target": self.target, "family": FAMILY_OF[self.kind], "label": self.kind.value}


@dataclass
class GoldRelationSet:
    raw: list[dict]
    normalized: list[GoldRelation]

    def labels(self) -> dict[tuple[int, int], dict[str, RelationKind]]:
        out: dict[tuple[int, int], dict[str, RelationKind]] = {}
        for r in self.normalized:
            out.setdefault((r.source, r.target), {})[FAMILY_OF[r.kind]] = r.kind
        return out


def normalize_relation(source: int, target: int, family: str, label: str) -> GoldRelation:
    fam = _FAMILY_ALIASES.get(family.strip().lower())
    if fam is None:
        raise ValueError(f"unknown relation family {family!r}")
    lab = _canon(label)
    if source == target:
        raise ValueError(f"relation {label!r} links event {source} to itself")
    first, second = min(source, target), max(source, target)
    in_order = source < target
    if fam == "coref":
        if lab not in {"coreference", "corefer", "coref"}:
            raise ValueError(f"unknown coreference label {label!r}")
        return GoldRelation(first, second, RelationKind.COREFERENCE)
    if fam == "temporal" and lab in _OVERLAP_LABELS:
        return GoldRelation(first, second, RelationKind.OVERLAP)
    if (fam, lab) not in _DIRECTED:
        raise ValueError(f"unknown {family} label {label!r}")
    forward, reverse = _DIRECTED[(fam, lab)]
    return GoldRelation(first, second, forward if in_order else reverse)


def normalize_gold_relations(raw: Iterable[Mapping]) -> GoldRelationSet:
    """Put annotated pairs in text order, flipping directed labels as needed.

    Each raw entry is ``{"source", "target", "family", "label"}`` with token
    indices; entries flagged ``"timex": true`` are dropped.  Conflicting labels
    for one (pair, family) are rejected.
    """
    raw = [dict(r) for r in raw]
    seen: dict[tuple[int, int, str], GoldRelation] = {}
    for r in raw:
        if r.get("timex"):
            continue
        rel = normalize_relation(int(r["source"]), int(r["target"]), str(r["family"]), str(r["label"]))
        key = (rel.source, rel.target, FAMILY_OF[rel.kind])
        if key in seen and seen[key] != rel:
            raise ValueError(f"conflicting {key[2]} labels for pair {key[:2]}: {seen[key].kind.value} vs {rel.kind.value}")
        seen[key] = rel
    normalized = sorted(seen.values(), key=lambda g: (g.source, g.target, g.kind.index))
    return GoldRelationSet(raw, normalized)


def gold_tables(doc: Document) -> SoftLabelTables:
    """One-hot tables from a document's gold events and relations."""
    if doc.gold_events is None:
        raise ValueError(f"{doc.doc_id}: no gold events to build tables from")
    events = sorted(set(doc.gold_events))
    event = np.zeros((doc.num_tokens, 2))
    event[:, 0] = 1.0
    event[events] = (0.0, 1.0)
    gold = normalize_gold_relations(doc.gold_relations or ()).labels()
    pairs = form_pairs(events)
    fams = {fam: np.zeros((len(pairs), n)) for fam, n in FAMILY_SIZES.items()}
    for p, key in enumerate(pairs):
        labels = gold.get(key, {})
        for fam, cats in FAMILIES.items():
            kind = labels.get(fam)
            fams[fam][p, cats.index(kind)] = 1.0
    unknown = set(gold) - set(pairs)
    if unknown:
        raise ValueError(f"{doc.doc_id}: relations reference non-event tokens: {sorted(unknown)[:3]}")
    return SoftLabelTables(event=event, pairs=pairs, **fams)


# -- graph --------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    source: int  # event node index; source precedes target in text
    target: int
    kind: RelationKind


@dataclass
class EventRelationGraph:
    """Event nodes (trigger tokens), sentence nodes and typed edges.

    Event-event edges are stored once on the text-order pair; traversal in the
    reverse direction uses the inverse kind.  Event-sentence edges are implied
    by ``event_sentence``.
    """

    doc_id: str
    event_tokens: list[int]
    event_sentence: list[int]
    num_sentences: int
    edges: list[Edge] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen = set()
        for e in self.edges:
            if e.kind is RelationKind.EVENT_SENTENCE:
                raise ValueError("event-sentence links are implied by event_sentence, not stored as edges")
            if not 0 <= e.source < e.target < len(self.event_tokens):
                raise ValueError(f"edge {e} is not an ordered pair of distinct events")
            key = (e.source, e.target, FAMILY_OF[e.kind])
            if key in seen:
                raise ValueError(f"second {key[2]} edge on pair {key[:2]}")
            seen.add(key)

    @property
    def num_events(self) -> int:
        return len(self.event_tokens)

    def sentence_edges(self) -> list[tuple[int, int]]:
        return list(enumerate(self.event_sentence))

    def traversals(self) -> list[tuple[int, int, RelationKind]]:
        """(center, neighbor, kind) in both directions for every event-event edge."""
        out = []
        for e in self.edges:
            out.append((e.source, e.target, e.kind))
            out.append((e.target, e.source, e.kind.inverse))
        return out

    def neighbors(self, node: int, kind: RelationKind) -> list[int]:
        return sorted(n for c, n, k in self.traversals() if c == node and k is kind)

    def without_event_edges(self) -> "EventRelationGraph":
        return EventRelationGraph(self.doc_id, list(self.event_tokens), list(self.event_sentence), self.num_sentences, [], {**self.provenance, "ablated": True})

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "events": [{"token": t, "sentence": s} for t, s in zip(self.event_tokens, self.event_sentence)],
            "num_sentences": self.num_sentences,
            "edges": [[e.source, e.target, e.kind.value] for e in self.edges],
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "EventRelationGraph":
        return cls(
            doc_id=obj["doc_id"],
            event_tokens=[int(e["token"]) for e in obj["events"]],
            event_sentence=[int(e["sentence"]) for e in obj["events"]],
            num_sentences=int(obj["num_sentences"]),
            edges=[Edge(int(s), int(t), RelationKind(k)) for s, t, k in obj["edges"]],
            provenance=dict(obj.get("provenance", {})),
        )


def assemble_graph(doc: Document, hard: HardLabels, tables_checksum: str | None = None) -> EventRelationGraph:
    events = hard.events
    node = {t: n for n, t in enumerate(events)}
    owners = []
    for t in events:
        k = doc.sentence_of(t)
        if k is None:
            raise ValueError(f"{doc.doc_id}: event token {t} lies outside every sentence span")
        owners.append(k)
    edges = []
    for (i, j), labels in hard.pairs.items():
        if i not in node or j not in node:
            raise ValueError(f"{doc.doc_id}: pair ({i}, {j}) is not over identified events")
        for fam, cats in FAMILIES.items():
            kind = cats[labels[fam]]
            if kind is not None:
                edges.append(Edge(node[i], node[j], kind))
    edges.sort(key=lambda e: (e.source, e.target, e.kind.index))
    provenance = {"hardening_rule": HARDENING_RULE}
    if tables_checksum:
        provenance["tables_sha256"] = tables_checksum
    return EventRelationGraph(doc.doc_id, events, owners, doc.num_sentences, edges, provenance)


def build_graph(doc: Document, tables: SoftLabelTables) -> EventRelationGraph:
    tables.validate(doc.num_tokens)
    return assemble_graph(doc, harden(tables), tables.checksum())


def coref_clusters(graph: EventRelationGraph) -> list[frozenset[int]]:
    """Connected components under coreference edges, singletons included."""
    parent = list(range(graph.num_events))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in graph.edges:
        if e.kind is RelationKind.COREFERENCE:
            a, b = find(e.source), find(e.target)
            if a != b:
                parent[max(a, b)] = min(a, b)
    clusters: dict[int, set[int]] = {}
    for n in range(graph.num_events):
        clusters.setdefault(find(n), set()).add(n)
    return sorted((frozenset(c) for c in clusters.values()), key=min)


def save_graph(graph: EventRelationGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph.to_json(), sort_keys=True, indent=1) + "\n")


def load_graph(path: str | Path) -> EventRelationGraph:
    return EventRelationGraph.from_json(json.loads(Path(path).read_text()))
