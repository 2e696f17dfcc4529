"""Event and relation learning heads with soft-label cross-entropy losses."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor
from .graph import FAMILY_SIZES, SoftLabelTables, form_pairs, identify_events

LOSS_NAMES = ("event", "coref", "temporal", "causal", "subevent")


class TwoLayerHead(Module):
    """``softmax(W2 (W1 x + b1) + b2)`` with row-vector inputs."""

    def __init__(self, d_in: int, hidden: int, d_out: int, rng: np.random.Generator):
        self.w1 = ad.parameter(rng, d_in, hidden)
        self.b1 = ad.zeros_parameter(1, hidden)
        self.w2 = ad.parameter(rng, hidden, d_out)
        self.b2 = ad.zeros_parameter(1, d_out)

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def logits(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.input_dim:
            raise ad.ShapeError(f"head expects width {self.input_dim}, got {x.shape}")
        return ad.add(ad.add(x @ self.w1, self.b1) @ self.w2, self.b2)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.row_softmax(self.logits(x))


class LearningHeads(Module):
    """One event head over word embeddings and four heads over pair embeddings."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.event = TwoLayerHead(d, hidden, 2, rng)
        self.coref = TwoLayerHead(2 * d, hidden, FAMILY_SIZES["coref"], rng)
        self.temporal = TwoLayerHead(2 * d, hidden, FAMILY_SIZES["temporal"], rng)
        self.causal = TwoLayerHead(2 * d, hidden, FAMILY_SIZES["causal"], rng)
        self.subevent = TwoLayerHead(2 * d, hidden, FAMILY_SIZES["subevent"], rng)


def event_head(heads: LearningHeads, words: Tensor) -> Tensor:
    """Rows (q_non_event, q_event) for each row of ``words``."""
    return heads.event(words)


def pair_embeddings(contextual: Tensor, pairs: list[tuple[int, int]]) -> Tensor:
    """Rows ``e_i ⊕ e_j``; the earlier event is always the left half."""
    left = ad.gather_rows(contextual, [i for i, _ in pairs])
    right = ad.gather_rows(contextual, [j for _, j in pairs])
    return ad.concat_cols([left, right])


def relation_heads(heads: LearningHeads, pairs: Tensor) -> dict[str, Tensor]:
    return {fam: getattr(heads, fam)(pairs) for fam in FAMILY_SIZES}


@dataclass
class SoftLosses:
    event: Tensor
    coref: Tensor
    temporal: Tensor
    causal: Tensor
    subevent: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name).item() for name in (*LOSS_NAMES, "total")}


def soft_losses(tables: SoftLabelTables, q_event: Tensor, q_pairs: Mapping[str, Tensor | None]) -> SoftLosses:
    """Cross-entropy of each learned distribution against its soft target, summed."""
    if q_event.shape != tables.event.shape:
        raise ValueError(f"event: learned shape {q_event.shape} vs target shape {tables.event.shape}")
    parts = {"event": ad.cross_entropy_rows(tables.event, q_event)}
    for fam in FAMILY_SIZES:
        target = tables.family(fam)
        q = q_pairs.get(fam)
        if q is None:
            if target.shape[0]:
                raise ValueError(f"{fam}: {target.shape[0]} target pairs but no learned probabilities")
            parts[fam] = Tensor(0.0)
            continue
        if q.shape != target.shape:
            raise ValueError(f"{fam}: learned shape {q.shape} vs target shape {target.shape}")
        parts[fam] = ad.cross_entropy_rows(target, q)
    total = parts["event"]
    for fam in FAMILY_SIZES:
        total = ad.add(total, parts[fam])
    return SoftLosses(total=total, **parts)


def distill_losses(heads: LearningHeads, contextual: Tensor, tables: SoftLabelTables) -> SoftLosses:
    """Losses for one document given its contextual embeddings and soft tables."""
    q_event = event_head(heads, contextual)
    q_pairs: dict[str, Tensor | None] = dict.fromkeys(FAMILY_SIZES)
    if tables.pairs:
        q_pairs = relation_heads(heads, pair_embeddings(contextual, tables.pairs))
    return soft_losses(tables, q_event, q_pairs)


def entropy_bound(tables: SoftLabelTables) -> float:
    """Sum of target entropies: the floor of the soft loss (Gibbs' inequality)."""
    total = 0.0
    for table in (tables.event, *(tables.family(f) for f in FAMILY_SIZES)):
        p = table[table > 0]
        total -= float((p * np.log(p)).sum())
    return total


def predict_tables(heads: LearningHeads, contextual: Tensor) -> SoftLabelTables:
    """Run the heads as an extractor: identify events, then score all event pairs."""
    with ad.no_grad():
        q_event = event_head(heads, contextual).values
        draft = SoftLabelTables(event=q_event)
        pairs = form_pairs(identify_events(draft))
        fams = {f: np.zeros((0, n)) for f, n in FAMILY_SIZES.items()}
        if pairs:
            fams = {f: t.values for f, t in relation_heads(heads, pair_embeddings(contextual, pairs)).items()}
    return SoftLabelTables(event=q_event, pairs=pairs, **fams)


def write_loss_curve(rows: Iterable[Mapping[str, float]], path: str | Path) -> None:
    """CSV with columns epoch, Loss_event, ..., Loss_soft."""
    header = ["epoch", "Loss_event", "Loss_corefer", "Loss_temp", "Loss_causal", "Loss_subevent", "Loss_soft"]
    keys = ["epoch", *LOSS_NAMES, "total"]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[k] for k in keys])
