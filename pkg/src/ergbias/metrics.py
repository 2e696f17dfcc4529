"""Bias-class scores, macro averages and coreference metrics (MUC, B³, CEAF_e, BLANC).

Coreference scorers take clusterings as iterables of mention collections and
return fractions in [0, 1].  :func:`prf_bias` reports percentages, the unit
used in result tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

Clustering = Sequence[frozenset]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def prf(self) -> tuple[float, float, float]:
        """Precision, recall, F1 as fractions; 0 when a denominator is 0."""
        p = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        r = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        return p, r, f1(p, r)


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def confusion(predictions: Sequence[int], golds: Sequence[int]) -> ConfusionCounts:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold labels")
    tp = fp = fn = tn = 0
    for p, g in zip(predictions, golds):
        if p not in (0, 1) or g not in (0, 1):
            raise ValueError(f"labels must be binary, got prediction {p!r} / gold {g!r}")
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def prf_bias(predictions: Sequence[int], golds: Sequence[int]) -> tuple[float, float, float]:
    """Bias-class precision, recall and F1 in percent."""
    p, r, f = confusion(predictions, golds).prf()
    return 100.0 * p, 100.0 * r, 100.0 * f


def macro_prf(per_class: Sequence[ConfusionCounts | tuple[int, int, int]]) -> tuple[float, float, float]:
    """Unweighted mean of per-class P/R/F1; each entry is (tp, fp, fn) or counts."""
    if len(per_class) < 2:
        raise ValueError("macro averaging needs at least two classes")
    scores = []
    for c in per_class:
        counts = c if isinstance(c, ConfusionCounts) else ConfusionCounts(*c)
        scores.append(counts.prf())
    arr = np.asarray(scores)
    return tuple(float(x) for x in arr.mean(axis=0))  # type: ignore[return-value]


def multiclass_counts(predictions: Sequence[int], golds: Sequence[int], num_classes: int) -> list[ConfusionCounts]:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold labels")
    out = []
    for c in range(num_classes):
        tp = sum(1 for p, g in zip(predictions, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(predictions, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(predictions, golds) if p != c and g == c)
        out.append(ConfusionCounts(tp, fp, fn, len(golds) - tp - fp - fn))
    return out


# -- clusterings --------------------------------------------------------------


def as_clustering(clusters: Iterable[Iterable[Hashable]]) -> list[frozenset]:
    out = [frozenset(c) for c in clusters]
    seen: set = set()
    for c in out:
        if not c:
            raise ValueError("empty cluster")
        if seen & c:
            raise ValueError(f"mentions {sorted(map(str, seen & c))} appear in more than one cluster")
        seen |= c
    return out


def _universe_checked(gold, pred) -> tuple[list[frozenset], list[frozenset]]:
    gold, pred = as_clustering(gold), as_clustering(pred)
    g_all = frozenset().union(*gold) if gold else frozenset()
    p_all = frozenset().union(*pred) if pred else frozenset()
    if g_all != p_all:
        diff = sorted(map(str, g_all ^ p_all))[:5]
        raise ValueError(f"gold and predicted clusterings cover different mentions (e.g. {diff})")
    if not g_all:
        raise ValueError("clusterings are empty")
    return gold, pred


def _mapping(clusters: list[frozenset]) -> dict:
    return {m: i for i, c in enumerate(clusters) for m in c}


def _muc_side(key: list[frozenset], response: list[frozenset]) -> tuple[int, int]:
    resp = _mapping(response)
    num = den = 0
    for cluster in key:
        parts = {resp[m] for m in cluster}
        num += len(cluster) - len(parts)
        den += len(cluster) - 1
    return num, den


def muc(gold, pred) -> tuple[float, float, float]:
    """Link-based MUC; all-singleton gold and pred score (1, 1, 1)."""
    gold, pred = _universe_checked(gold, pred)
    r_num, r_den = _muc_side(gold, pred)
    p_num, p_den = _muc_side(pred, gold)
    if r_den == 0 and p_den == 0:
        return 1.0, 1.0, 1.0
    r = r_num / r_den if r_den else 0.0
    p = p_num / p_den if p_den else 0.0
    return p, r, f1(p, r)


def _b3_side(key: list[frozenset], response: list[frozenset]) -> float:
    resp = _mapping(response)
    total = 0.0
    n = 0
    for cluster in key:
        for m in cluster:
            total += len(cluster & response[resp[m]]) / len(cluster)
            n += 1
    return total / n


def b_cubed(gold, pred) -> tuple[float, float, float]:
    gold, pred = _universe_checked(gold, pred)
    p = _b3_side(pred, gold)
    r = _b3_side(gold, pred)
    return p, r, f1(p, r)


def phi4(a: frozenset, b: frozenset) -> float:
    return 2.0 * len(a & b) / (len(a) + len(b))


def max_similarity_alignment(similarity: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Best one-to-one alignment of rows to columns maximizing total similarity.

    Rectangular input is fine: surplus clusters stay unaligned, which is the
    same as pairing them with zero-similarity dummies.
    """
    similarity = np.asarray(similarity, dtype=np.float64)
    if similarity.size == 0:
        return [], 0.0
    rows, cols = linear_sum_assignment(similarity, maximize=True)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    return pairs, float(similarity[rows, cols].sum())


def ceaf_e(gold, pred) -> tuple[float, float, float]:
    gold, pred = _universe_checked(gold, pred)
    sim = np.array([[phi4(g, p) for p in pred] for g in gold])
    _, total = max_similarity_alignment(sim)
    r = total / len(gold)
    p = total / len(pred)
    return p, r, f1(p, r)


def _links(clusters: list[frozenset]) -> tuple[set, set]:
    mapping = _mapping(clusters)
    mentions = sorted(mapping, key=repr)
    coref, non = set(), set()
    for a, b in combinations(mentions, 2):
        (coref if mapping[a] == mapping[b] else non).add(frozenset((a, b)))
    return coref, non


def _link_prf(gold: set, pred: set) -> tuple[float, float, float] | None:
    """None when the link class is absent from both sides."""
    if not gold and not pred:
        return None
    hit = len(gold & pred)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold) if gold else 0.0
    return p, r, f1(p, r)


def blanc(gold, pred) -> tuple[float, float, float]:
    """Mean of coreference-link and non-coreference-link P/R/F1.

    A link class absent from both gold and pred is left out of the mean; a
    single-mention universe (no links at all) scores (1, 1, 1).
    """
    gold, pred = _universe_checked(gold, pred)
    g_c, g_n = _links(gold)
    p_c, p_n = _links(pred)
    parts = [s for s in (_link_prf(g_c, p_c), _link_prf(g_n, p_n)) if s is not None]
    if not parts:
        return 1.0, 1.0, 1.0
    arr = np.asarray(parts)
    p, r, f = arr.mean(axis=0)
    return float(p), float(r), float(f)


COREF_METRICS = {"MUC": muc, "B3": b_cubed, "CEAF_e": ceaf_e, "BLANC": blanc}


def score_coreference(gold, pred) -> dict[str, tuple[float, float, float]]:
    return {name: fn(gold, pred) for name, fn in COREF_METRICS.items()}
