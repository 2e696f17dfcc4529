"""Token embeddings and the BiLSTM contextualizer."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor
from .corpus import Document
from .graph import EVENT_KINDS

OOV = "<unk>"
SENT_START = "<s>"
# Relation words used to seed the eight relation embeddings when present in the vocabulary.
RELATION_WORDS = ("coreference", "before", "after", "overlap", "causes", "caused", "contains", "contained")

FILE_BACKED = "file_backed"
TRAINABLE_LOOKUP = "trainable_lookup"


class EmbeddingProvider(Module):
    """Word vectors for a document, plus the eight relation-word rows.

    ``trainable_lookup`` keeps a vocabulary and a trainable table whose row 0
    is the out-of-vocabulary row and row 1 the reserved sentence-start row.
    ``file_backed`` serves fixed per-document matrices exported by an external
    encoder.
    """

    def __init__(self, mode: str, dim: int, rng: np.random.Generator, vocab: Iterable[str] = (),
                 matrices: Mapping[str, np.ndarray] | None = None):
        if mode not in (FILE_BACKED, TRAINABLE_LOOKUP):
            raise ValueError(f"unknown embedding mode {mode!r}")
        self.mode = mode
        self.dim = dim
        self.vocab: dict[str, int] = {}
        self.matrices: dict[str, np.ndarray] = {}
        if mode == TRAINABLE_LOOKUP:
            self.vocab = {OOV: 0, SENT_START: 1}
            for tok in vocab:
                self.vocab.setdefault(tok, len(self.vocab))
            self.table = Tensor(rng.normal(0.0, 0.5, size=(len(self.vocab), dim)), requires_grad=True)
        else:
            for doc_id, m in (matrices or {}).items():
                m = np.asarray(m, dtype=np.float64)
                if m.ndim != 2 or m.shape[1] != dim:
                    raise ValueError(f"{doc_id}: stored embeddings have shape {m.shape}, expected (N, {dim})")
                self.matrices[doc_id] = m
        rel = rng.normal(0.0, 0.5, size=(len(EVENT_KINDS), dim))
        if mode == TRAINABLE_LOOKUP:
            for r, word in enumerate(RELATION_WORDS):
                if word in self.vocab:
                    rel[r] = self.table.values[self.vocab[word]]
        self.relations = Tensor(rel, requires_grad=True)

    def token_ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.vocab.get(t, 0) for t in tokens]

    def embed(self, doc: Document) -> Tensor:
        """N x d matrix; row i embeds token i."""
        if self.mode == TRAINABLE_LOOKUP:
            return ad.gather_rows(self.table, self.token_ids(doc.tokens))
        if doc.doc_id not in self.matrices:
            raise KeyError(f"{doc.doc_id}: no stored embeddings")
        m = self.matrices[doc.doc_id]
        if m.shape[0] != doc.num_tokens:
            raise ValueError(f"{doc.doc_id}: stored embeddings have {m.shape[0]} rows for {doc.num_tokens} tokens")
        return Tensor(m)

    @classmethod
    def from_file(cls, path: str | Path, rng: np.random.Generator) -> "EmbeddingProvider":
        """File-backed provider from a checkpoint container keyed by doc_id."""
        matrices, _ = ad.load_checkpoint(path)
        dims = {m.shape[1] for m in matrices.values()}
        if len(dims) != 1:
            raise ValueError(f"{path}: embeddings disagree on dimension {sorted(dims)}")
        return cls(FILE_BACKED, dims.pop(), rng, matrices=matrices)


def embed_document(provider: EmbeddingProvider, doc: Document) -> Tensor:
    return provider.embed(doc)


class LstmDirection(Module):
    """One recurrent direction; gates ordered input, forget, output, candidate."""

    def __init__(self, d: int, h: int, rng: np.random.Generator):
        self.hidden = h
        self.w_input = ad.parameter(rng, d, 4 * h)
        self.w_hidden = ad.parameter(rng, h, 4 * h)
        bias = np.zeros((1, 4 * h))
        bias[0, h : 2 * h] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def run(self, x: Tensor, order: list[int]) -> list[Tensor]:
        h = self.hidden
        projected = ad.add(x @ self.w_input, self.bias)
        state = Tensor(np.zeros((1, h)))
        cell = Tensor(np.zeros((1, h)))
        outputs: dict[int, Tensor] = {}
        for t in order:
            z = ad.add(ad.gather_rows(projected, [t]), state @ self.w_hidden)
            gates = ad.sigmoid(ad.slice_cols(z, 0, 3 * h))
            i = ad.slice_cols(gates, 0, h)
            f = ad.slice_cols(gates, h, 2 * h)
            o = ad.slice_cols(gates, 2 * h, 3 * h)
            g = ad.tanh(ad.slice_cols(z, 3 * h, 4 * h))
            cell = ad.add(ad.mul(f, cell), ad.mul(i, g))
            state = ad.mul(o, ad.tanh(cell))
            outputs[t] = state
        return [outputs[t] for t in range(len(order))]


class BiLstm(Module):
    def __init__(self, d: int, h: int, rng: np.random.Generator):
        self.input_dim = d
        self.hidden = h
        self.forward_dir = LstmDirection(d, h, rng)
        self.backward_dir = LstmDirection(d, h, rng)

    @property
    def output_dim(self) -> int:
        return 2 * self.hidden

    def __call__(self, x: Tensor) -> Tensor:
        return contextualize(self, x)


def contextualize(params: BiLstm, embeddings: Tensor) -> Tensor:
    """N x 2h: forward state at i concatenated with backward state at i."""
    n, d = embeddings.shape
    if d != params.input_dim:
        raise ad.ShapeError(f"contextualize: embeddings have width {d}, BiLSTM expects {params.input_dim}")
    fwd = params.forward_dir.run(embeddings, list(range(n)))
    bwd = params.backward_dir.run(embeddings, list(range(n - 1, -1, -1)))
    return ad.concat_cols([ad.concat_rows(fwd), ad.concat_rows(bwd)])


def sentence_start_embedding(contextual: Tensor, doc: Document, k: int) -> Tensor:
    start, end = doc.sentence_spans[k]
    if end <= start:
        raise ValueError(f"{doc.doc_id}: sentence {k} is empty")
    return ad.gather_rows(contextual, [start])


def sentence_start_rows(doc: Document) -> list[int]:
    rows = []
    for k, (start, end) in enumerate(doc.sentence_spans):
        if end <= start:
            raise ValueError(f"{doc.doc_id}: sentence {k} is empty")
        rows.append(start)
    return rows
