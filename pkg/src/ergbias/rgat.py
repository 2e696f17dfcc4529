"""Relation-aware graph attention over events and graph attention into sentences.

Per layer ``l``, for every event ``i`` and relation kind ``r``::

    r_ij   = W^r [e_i ⊕ r ⊕ e_j]                   (r reset to the relation word)
    α_ij   = softmax_{j in N(i,r)} (W^Q e_i)·(W^K r_ij)
    e_i,r  = Σ_j α_ij W^V r_ij
    e_i    = Σ_r e_i,r / 8

and for every sentence ``k`` with events ``N(k)``::

    h_kj = LeakyReLU(a · [W s_k ⊕ W e_j]),  α_kj = softmax_j h_kj
    s_k  = Σ_j α_kj W e_j                    (unchanged if N(k) is empty)

All right-hand sides use layer ``l-1`` features.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor
from .distill import TwoLayerHead
from .graph import EVENT_KINDS, EventRelationGraph, RelationKind

NUM_KINDS = len(EVENT_KINDS)


class RelationAwareLayer(Module):
    def __init__(self, dim: int, rel_word_dim: int, rel_dim: int, key_dim: int, rng: np.random.Generator):
        self.dim = dim
        self.w_rel = ad.parameter(rng, 2 * dim + rel_word_dim, rel_dim)
        self.w_query = ad.parameter(rng, dim, key_dim)
        self.w_key = ad.parameter(rng, rel_dim, key_dim)
        self.w_value = ad.parameter(rng, rel_dim, dim)


class SentenceGatLayer(Module):
    def __init__(self, dim: int, rng: np.random.Generator, slope: float = ad.DEFAULT_LEAKY_SLOPE):
        self.slope = slope
        self.w = ad.parameter(rng, dim, dim)
        self.a = ad.parameter(rng, 2 * dim, 1)


# -- single-node operations ---------------------------------------------------


def update_relation_embedding(e_i: Tensor, r_ij: Tensor, e_j: Tensor, layer: RelationAwareLayer) -> Tensor:
    return ad.concat_cols([e_i, r_ij, e_j]) @ layer.w_rel


def relation_attention(e_i: Tensor, relations: Sequence[Tensor], layer: RelationAwareLayer) -> Tensor:
    """Row of weights over the neighbors of one (event, kind) neighborhood."""
    if not relations:
        raise ValueError("relation_attention needs at least one neighbor")
    query = e_i @ layer.w_query
    keys = ad.concat_rows(list(relations)) @ layer.w_key
    return ad.row_softmax(query @ ad.transpose(keys))


def aggregate_relation(alpha: Tensor, relations: Sequence[Tensor], layer: RelationAwareLayer) -> Tensor:
    """``Σ_j α_j W^V r_j``; an empty neighborhood contributes a zero vector."""
    if not relations:
        return Tensor(np.zeros((1, layer.w_value.shape[1])))
    values = ad.concat_rows(list(relations)) @ layer.w_value
    return alpha @ values


def accumulate_event(per_relation: Sequence[Tensor], dim: int) -> Tensor:
    """Sum of per-kind outputs divided by the fixed count of eight kinds."""
    total: Tensor = Tensor(np.zeros((1, dim)))
    for part in per_relation:
        total = ad.add(total, part)
    return ad.scalar_mul(total, 1.0 / NUM_KINDS)


def sentence_attention(s_k: Tensor, events: Sequence[Tensor], layer: SentenceGatLayer) -> Tensor:
    if not events:
        raise ValueError("sentence_attention needs at least one connected event")
    ws = s_k @ layer.w
    logits = []
    for e in events:
        logits.append(ad.leaky_relu(ad.concat_cols([ws, e @ layer.w]) @ layer.a, layer.slope))
    return ad.row_softmax(ad.concat_cols(logits))


def update_sentence(alpha: Tensor | None, events: Sequence[Tensor], layer: SentenceGatLayer, s_prev: Tensor) -> Tensor:
    if not events:
        return s_prev
    return alpha @ (ad.concat_rows(list(events)) @ layer.w)


# -- vectorized propagation ---------------------------------------------------


@dataclass
class GraphArrays:
    """Index arrays for one graph: traversals and event ownership."""

    num_events: int
    num_sentences: int
    center: np.ndarray
    neighbor: np.ndarray
    kind: np.ndarray
    event_sentence: np.ndarray

    @classmethod
    def from_graph(cls, graph: EventRelationGraph) -> "GraphArrays":
        trav = graph.traversals()
        return cls(
            graph.num_events,
            graph.num_sentences,
            np.array([c for c, _, _ in trav], dtype=np.int64),
            np.array([n for _, n, _ in trav], dtype=np.int64),
            np.array([k.index for _, _, k in trav], dtype=np.int64),
            np.asarray(graph.event_sentence, dtype=np.int64),
        )


@dataclass
class LayerTrace:
    relation_alpha: np.ndarray
    relation_segments: np.ndarray
    sentence_alpha: np.ndarray
    sentence_segments: np.ndarray


@dataclass
class ForwardResult:
    probs: Tensor
    sentences: Tensor
    events: Tensor
    traces: list[LayerTrace] = field(default_factory=list)


def relation_layer(layer: RelationAwareLayer, events: Tensor, relation_words: Tensor, g: GraphArrays) -> tuple[Tensor, np.ndarray]:
    if g.center.size == 0:
        return Tensor(np.zeros((g.num_events, layer.dim))), np.zeros(0)
    e_c = ad.gather_rows(events, g.center)
    e_n = ad.gather_rows(events, g.neighbor)
    words = ad.gather_rows(relation_words, g.kind)
    rel = ad.concat_cols([e_c, words, e_n]) @ layer.w_rel
    query = ad.gather_rows(events @ layer.w_query, g.center)
    scores = ad.sum(ad.mul(query, rel @ layer.w_key), axis=1)
    segments = g.center * NUM_KINDS + g.kind
    alpha = ad.segment_softmax(scores, segments)
    messages = ad.mul(alpha, rel @ layer.w_value)
    out = ad.scalar_mul(ad.segment_sum(messages, g.center, g.num_events), 1.0 / NUM_KINDS)
    return out, alpha.values[:, 0]


def sentence_layer(layer: SentenceGatLayer, sentences: Tensor, events: Tensor, g: GraphArrays) -> tuple[Tensor, np.ndarray]:
    if g.num_events == 0:
        return sentences, np.zeros(0)
    we = events @ layer.w
    ws = ad.gather_rows(sentences @ layer.w, g.event_sentence)
    h = ad.leaky_relu(ad.concat_cols([ws, we]) @ layer.a, layer.slope)
    alpha = ad.segment_softmax(h, g.event_sentence)
    pooled = ad.segment_sum(ad.mul(alpha, we), g.event_sentence, g.num_sentences)
    empty = np.ones((g.num_sentences, 1))
    empty[np.unique(g.event_sentence)] = 0.0
    if empty.any():
        pooled = ad.add(pooled, ad.mul(sentences, Tensor(empty)))
    return pooled, alpha.values[:, 0]


class RelationGraphNetwork(Module):
    """Stack of relation-aware + sentence GAT layers and the bias classifier."""

    def __init__(self, dim: int, rel_word_dim: int, rel_dim: int, key_dim: int, layers: int,
                 classifier_hidden: int, rng: np.random.Generator, slope: float = ad.DEFAULT_LEAKY_SLOPE):
        if min(dim, rel_word_dim, rel_dim, key_dim, layers, classifier_hidden) <= 0:
            raise ValueError("graph network dimensions and layer count must be positive")
        self.dim = dim
        self.rel_word_dim = rel_word_dim
        self.relation_layers = [RelationAwareLayer(dim, rel_word_dim, rel_dim, key_dim, rng) for _ in range(layers)]
        self.sentence_layers = [SentenceGatLayer(dim, rng, slope) for _ in range(layers)]
        self.classifier = TwoLayerHead(dim, classifier_hidden, 2, rng)

    @property
    def num_layers(self) -> int:
        return len(self.relation_layers)

    def forward(self, events: Tensor, sentences: Tensor, relation_words: Tensor, g: GraphArrays,
                trace: bool = False) -> ForwardResult:
        if events.shape[1] != self.dim or sentences.shape[1] != self.dim:
            raise ad.ShapeError(f"node features {events.shape}/{sentences.shape} do not match layer width {self.dim}")
        if relation_words.shape != (NUM_KINDS, self.rel_word_dim):
            raise ad.ShapeError(f"relation words {relation_words.shape} vs expected {(NUM_KINDS, self.rel_word_dim)}")
        traces = []
        for rel_layer, sent_layer in zip(self.relation_layers, self.sentence_layers):
            new_events, rel_alpha = relation_layer(rel_layer, events, relation_words, g)
            sentences, sent_alpha = sentence_layer(sent_layer, sentences, events, g)
            events = new_events
            if trace:
                traces.append(LayerTrace(rel_alpha, g.center * NUM_KINDS + g.kind, sent_alpha, g.event_sentence))
        return ForwardResult(self.classifier(sentences), sentences, events, traces)

    __call__ = forward


def reference_forward(net: RelationGraphNetwork, events: Tensor, sentences: Tensor, relation_words: Tensor,
                      graph: EventRelationGraph) -> Tensor:
    """Node-by-node evaluation using the single-node operations (slow; for checking)."""
    n_e, n_s = graph.num_events, graph.num_sentences
    ev = [ad.gather_rows(events, [i]) for i in range(n_e)]
    se = [ad.gather_rows(sentences, [k]) for k in range(n_s)]
    words = [ad.gather_rows(relation_words, [r]) for r in range(NUM_KINDS)]
    trav = graph.traversals()
    for rel_layer, sent_layer in zip(net.relation_layers, net.sentence_layers):
        new_ev = []
        for i in range(n_e):
            parts = []
            for kind in EVENT_KINDS:
                nbrs = [n for c, n, k in trav if c == i and k is kind]
                if not nbrs:
                    continue
                rels = [update_relation_embedding(ev[i], words[kind.index], ev[j], rel_layer) for j in nbrs]
                alpha = relation_attention(ev[i], rels, rel_layer)
                parts.append(aggregate_relation(alpha, rels, rel_layer))
            new_ev.append(accumulate_event(parts, net.dim))
        new_se = []
        for k in range(n_s):
            members = [ev[j] for j in range(n_e) if graph.event_sentence[j] == k]
            alpha = sentence_attention(se[k], members, sent_layer) if members else None
            new_se.append(update_sentence(alpha, members, sent_layer, se[k]))
        ev, se = new_ev, new_se
    return net.classifier(ad.concat_rows(se))


def kind_of(index: int) -> RelationKind:
    return EVENT_KINDS[index]
