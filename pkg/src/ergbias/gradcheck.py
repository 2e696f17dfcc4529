"""Finite-difference verification of every parameter group of the full pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .corpus import Document
from .graph import FAMILY_SIZES, SoftLabelTables, form_pairs
from .training import BiasModel, Example, RunConfig

# The pipeline loss is O(10) while some attention-key gradients are O(1e-6);
# at h=1e-5 cancellation noise alone reaches ~2e-4 relative on those entries.
STEP = 1e-4
TOLERANCE = 1e-4
# Entries whose analytic and numeric gradients are both below this scale are
# compared in absolute terms, since their relative error is pure round-off.
FLOOR = 1e-6

GROUPS = {
    "encoder": ("provider.", "encoder."),
    "distill_heads": ("heads.",),
    "rgat": ("network.relation_layers.", "network.sentence_layers."),
    "classifier": ("network.classifier.",),
}


@dataclass
class GroupResult:
    group: str
    entries: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= TOLERANCE)


def micro_instance(seed: int = 0, sentences: int = 3, events: int = 5, tokens_per_sentence: int = 3):
    """Random document, soft tables and gold labels; events spread over all sentences."""
    rng = np.random.default_rng(seed)
    n = sentences * tokens_per_sentence
    vocab = [f"t{i}" for i in range(6)]
    tokens = tuple(str(rng.choice(vocab)) for _ in range(n))
    spans = tuple((k * tokens_per_sentence, (k + 1) * tokens_per_sentence) for k in range(sentences))
    # one event per sentence, remaining events anywhere else
    chosen = {int(rng.integers(s, e)) for s, e in spans}
    rest = [t for t in range(n) if t not in chosen]
    chosen |= {int(t) for t in rng.choice(rest, size=events - len(chosen), replace=False)}
    event_idx = sorted(chosen)
    p_event = rng.uniform(0.05, 0.45, size=n)
    p_event[event_idx] = rng.uniform(0.55, 0.95, size=len(event_idx))
    pairs = form_pairs(event_idx)
    fams = {f: rng.dirichlet(np.ones(k), size=len(pairs)) for f, k in FAMILY_SIZES.items()}
    tables = SoftLabelTables(event=np.stack([1 - p_event, p_event], axis=1), pairs=pairs, **fams)
    bias = [0] * sentences
    bias[int(rng.integers(sentences))] = 1
    doc = Document("gradcheck", tokens, spans, tuple(bias))
    return doc, tables, vocab


def micro_config() -> RunConfig:
    return RunConfig(embed_dim=3, lstm_hidden=2, rel_dim=3, key_dim=3, layers=2, head_hidden=4,
                     classifier_hidden=4, phase="joint")


def _loss(model: BiasModel, ex: Example) -> ad.Tensor:
    contextual = model.encode(ex.doc)
    return ad.add(model.soft_losses(ex, contextual).total, model.classification_loss(ex, contextual))


def group_of(name: str) -> str:
    for group, prefixes in GROUPS.items():
        if name.startswith(prefixes):
            return group
    raise KeyError(f"parameter {name!r} belongs to no group")


def relative_error(analytic, numeric, floor: float = FLOOR) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def numeric_gradient(loss_fn: Callable[[], ad.Tensor], tensor: ad.Tensor, step: float = STEP,
                     entries: Iterable[int] | None = None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``tensor`` (in place, restored after)."""
    flat = tensor.values.reshape(-1)
    out = np.full(flat.size, np.nan)
    with ad.no_grad():
        for idx in range(flat.size) if entries is None else entries:
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_fn().item()
            flat[idx] = orig - step
            down = loss_fn().item()
            flat[idx] = orig
            out[idx] = (up - down) / (2 * step)
    return out.reshape(tensor.shape)


def analytic_gradients(loss_fn: Callable[[], ad.Tensor], tensors: Mapping[str, ad.Tensor]) -> dict[str, np.ndarray]:
    for t in tensors.values():
        t.zero_grad()
    ad.get_tape().clear()
    ad.backward(loss_fn())
    grads = {k: t.grad.copy() for k, t in tensors.items()}
    for t in tensors.values():
        t.zero_grad()
    return grads


def run(seed: int = 0, max_entries: int | None = None) -> list[GroupResult]:
    """Compare analytic and central-difference gradients for every parameter entry."""
    doc, tables, vocab = micro_instance(seed)
    model = BiasModel(micro_config(), np.random.default_rng(seed + 1), vocab=vocab)
    ex = Example.make(doc, tables)
    params = model.named_parameters()

    def loss_fn() -> ad.Tensor:
        return _loss(model, ex)

    analytic = analytic_gradients(loss_fn, params)
    worst: dict[str, float] = {g: 0.0 for g in GROUPS}
    counts: dict[str, int] = {g: 0 for g in GROUPS}
    rng = np.random.default_rng(seed + 2)
    for name, p in params.items():
        entries = np.arange(p.values.size)
        if max_entries is not None and p.values.size > max_entries:
            entries = rng.choice(p.values.size, size=max_entries, replace=False)
        numeric = numeric_gradient(loss_fn, p, STEP, entries).reshape(-1)[entries]
        err = relative_error(analytic[name].reshape(-1)[entries], numeric)
        group = group_of(name)
        worst[group] = max(worst[group], float(err.max()))
        counts[group] += len(entries)
    return [GroupResult(g, counts[g], worst[g]) for g in GROUPS]


def report(results: list[GroupResult], seconds: float | None = None) -> str:
    lines = [f"{'group':<14} {'entries':>7} {'max_rel_err':>12}  status"]
    for r in results:
        lines.append(f"{r.group:<14} {r.entries:>7} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    if seconds is not None:
        lines.append(f"elapsed {seconds:.1f}s")
    return "\n".join(lines)


def timed_run(seed: int = 0) -> tuple[list[GroupResult], float]:
    start = time.time()
    results = run(seed)
    return results, time.time() - start
