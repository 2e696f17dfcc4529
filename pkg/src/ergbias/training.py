"""Model assembly, two-phase training, prediction and cross-validation."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor
from .corpus import Corpus, Document, FoldPlan, kfold_split, load_corpus
from .distill import LearningHeads, SoftLosses, distill_losses, predict_tables
from .encoder import FILE_BACKED, TRAINABLE_LOOKUP, BiLstm, EmbeddingProvider, sentence_start_rows
from .graph import EventRelationGraph, SoftLabelTables, build_graph, gold_tables, load_tables
from .metrics import confusion, prf_bias
from .rgat import ForwardResult, GraphArrays, RelationGraphNetwork

logger = logging.getLogger(__name__)

PHASES = ("sequential", "distill-only", "classify-only", "joint")


@dataclass
class RunConfig:
    corpus: str = ""
    tables: str = "gold"  # "gold", "extractor", or a tables JSONL path
    embedding_mode: str = TRAINABLE_LOOKUP
    embeddings: str = ""  # checkpoint file for file_backed mode
    embed_dim: int = 32
    lstm_hidden: int = 32
    rel_dim: int = 32
    key_dim: int = 32
    layers: int = 2
    head_hidden: int = 64
    classifier_hidden: int = 64
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    max_epochs: int = 5
    distill_epochs: int = 2
    batch_size: int = 1
    k: int = 10
    seed: int = 0
    phase: str = "sequential"
    ablate_edges: bool = False
    workers: int = 1

    def validate(self) -> None:
        dims = (self.embed_dim, self.lstm_hidden, self.rel_dim, self.key_dim, self.layers,
                self.head_hidden, self.classifier_hidden, self.batch_size)
        if min(dims) <= 0:
            raise ValueError("all dimensions, layer count and batch size must be positive")
        if self.k < 3:
            raise ValueError(f"k must be at least 3, got {self.k}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.embedding_mode not in (TRAINABLE_LOOKUP, FILE_BACKED):
            raise ValueError(f"unknown embedding mode {self.embedding_mode!r}")
        if self.max_epochs < 1 or self.distill_epochs < 0:
            raise ValueError("max_epochs must be >= 1 and distill_epochs >= 0")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "RunConfig":
        obj = json.loads(Path(path).read_text()) if path else {}
        obj.update(overrides or {})
        return cls.from_json(obj)


# -- model --------------------------------------------------------------------


class BiasModel(Module):
    """Embeddings -> BiLSTM -> (distillation heads | relation graph network)."""

    def __init__(self, config: RunConfig, rng: np.random.Generator, vocab: Iterable[str] = (),
                 provider: EmbeddingProvider | None = None):
        self.config = config
        self.provider = provider or EmbeddingProvider(config.embedding_mode, config.embed_dim, rng, vocab=vocab)
        d = self.provider.dim
        self.encoder = BiLstm(d, config.lstm_hidden, rng)
        width = self.encoder.output_dim
        self.heads = LearningHeads(width, config.head_hidden, rng)
        self.network = RelationGraphNetwork(width, d, config.rel_dim, config.key_dim, config.layers,
                                            config.classifier_hidden, rng)

    def encode(self, doc: Document) -> Tensor:
        return self.encoder(self.provider.embed(doc))

    def soft_losses(self, ex: "Example", contextual: Tensor | None = None) -> SoftLosses:
        contextual = contextual if contextual is not None else self.encode(ex.doc)
        return distill_losses(self.heads, contextual, ex.tables)

    def classify(self, ex: "Example", contextual: Tensor | None = None, trace: bool = False) -> ForwardResult:
        contextual = contextual if contextual is not None else self.encode(ex.doc)
        events = ad.gather_rows(contextual, ex.graph.event_tokens) if ex.graph.num_events else Tensor(np.zeros((0, contextual.shape[1])))
        sentences = ad.gather_rows(contextual, sentence_start_rows(ex.doc))
        return self.network(events, sentences, self.provider.relations, ex.arrays, trace=trace)

    def classification_loss(self, ex: "Example", contextual: Tensor | None = None) -> Tensor:
        probs = self.classify(ex, contextual).probs
        target = np.eye(2)[list(ex.doc.gold_bias)]
        return ad.scalar_mul(ad.cross_entropy_rows(target, probs), 1.0 / ex.doc.num_sentences)

    def predict(self, ex: "Example") -> np.ndarray:
        """p_bias for each sentence."""
        with ad.no_grad():
            return self.classify(ex).probs.values[:, 1].copy()


def _vocabulary(docs: Iterable[Document]) -> list[str]:
    vocab: dict[str, None] = {}
    for d in docs:
        for t in d.tokens:
            vocab.setdefault(t, None)
    return list(vocab)


def build_model(config: RunConfig, train_docs: Sequence[Document], seed: int | None = None) -> BiasModel:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    provider = None
    if config.embedding_mode == FILE_BACKED:
        provider = EmbeddingProvider.from_file(config.embeddings, rng)
    return BiasModel(config, rng, vocab=_vocabulary(train_docs), provider=provider)


# -- examples -----------------------------------------------------------------


@dataclass
class Example:
    doc: Document
    tables: SoftLabelTables
    graph: EventRelationGraph | None
    arrays: GraphArrays | None

    @classmethod
    def make(cls, doc: Document, tables: SoftLabelTables, graph: EventRelationGraph | None = None,
             ablate: bool = False) -> "Example":
        graph = graph or build_graph(doc, tables)
        if ablate:
            graph = graph.without_event_edges()
        return cls(doc, tables, graph, GraphArrays.from_graph(graph))


def resolve_tables(config: RunConfig, corpus: Corpus) -> dict[str, SoftLabelTables]:
    """Soft tables for every document; aborts listing documents without tables."""
    if config.tables == "gold":
        missing = [d.doc_id for d in corpus if d.gold_events is None]
        if missing:
            raise ValueError(f"documents without gold events (no tables): {missing}")
        return {d.doc_id: gold_tables(d) for d in corpus}
    if config.tables == "extractor":
        return fit_extractor(config, corpus)
    tables = load_tables(config.tables)
    missing = [d.doc_id for d in corpus if d.doc_id not in tables]
    if missing:
        raise ValueError(f"no tables for documents: {missing}")
    for d in corpus:
        try:
            tables[d.doc_id].validate(d.num_tokens)
        except ValueError as exc:
            raise ValueError(f"{d.doc_id}: {exc}") from exc
    return {d.doc_id: tables[d.doc_id] for d in corpus}


def make_examples(corpus: Corpus, tables: dict[str, SoftLabelTables], ablate: bool = False,
                  graphs: dict[str, EventRelationGraph] | None = None) -> list[Example]:
    graphs = graphs or {}
    return [Example.make(d, tables[d.doc_id], graphs.get(d.doc_id), ablate) for d in corpus]


# -- training -----------------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    phase: str
    loss: float
    soft: dict[str, float] = field(default_factory=dict)
    val_f1: float | None = None
    train_f1: float | None = None


@dataclass
class TrainResult:
    history: list[EpochLog]
    epochs_run: int
    best_epoch: int | None
    best_val_f1: float | None


PHASE_PARAMS = {
    "distill": ("provider.", "encoder.", "heads."),
    "classify": ("provider.", "encoder.", "network."),
    "joint": ("provider.", "encoder.", "heads.", "network."),
}


class Trainer:
    """AdamW with a linear schedule over a fixed horizon of optimizer steps.

    Only the parameters the phase's loss reaches are stepped, so weight decay
    leaves the idle part of the model untouched.
    """

    def __init__(self, model: BiasModel, config: RunConfig, total_steps: int, phase: str = "joint"):
        self.model = model
        self.params = {k: v for k, v in model.named_parameters().items() if k.startswith(PHASE_PARAMS[phase])}
        self.state = ad.AdamWState(config.lr, config.beta1, config.beta2, config.eps, config.weight_decay)
        self.schedule = ad.LinearSchedule(config.lr, total_steps)

    def step(self, loss: Tensor) -> None:
        ad.backward(loss)
        ad.adamw_step(self.params, self.state, self.schedule.rate(self.state.step))


def _batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def _soft_epoch(model: BiasModel, trainer: Trainer, examples: Sequence[Example], batch: int,
                rng: np.random.Generator) -> dict[str, float]:
    sums: dict[str, float] = {}
    for idx in _batches(len(examples), batch, rng):
        total = None
        for i in idx:
            losses = model.soft_losses(examples[i])
            for k, v in losses.values().items():
                sums[k] = sums.get(k, 0.0) + v
            total = losses.total if total is None else ad.add(total, losses.total)
        trainer.step(total)
    return sums


def train_distillation(model: BiasModel, examples: Sequence[Example], config: RunConfig, steps: int,
                       rng: np.random.Generator) -> list[dict[str, float]]:
    """Minimize the soft loss for ``steps`` optimizer steps; one row per pass over the data."""
    trainer = Trainer(model, config, steps, "distill")
    curve = []
    epoch = 0
    while trainer.state.step < steps:
        epoch += 1
        sums: dict[str, float] = {}
        for idx in _batches(len(examples), config.batch_size, rng):
            if trainer.state.step >= steps:
                break
            total = None
            for i in idx:
                losses = model.soft_losses(examples[i])
                for k, v in losses.values().items():
                    sums[k] = sums.get(k, 0.0) + v
                total = losses.total if total is None else ad.add(total, losses.total)
            trainer.step(total)
        curve.append({"epoch": epoch, **sums})
    return curve


def corpus_soft_loss(model: BiasModel, examples: Sequence[Example]) -> dict[str, float]:
    out: dict[str, float] = {}
    with ad.no_grad():
        for ex in examples:
            for k, v in model.soft_losses(ex).values().items():
                out[k] = out.get(k, 0.0) + v
    return out


def predict_labels(model: BiasModel, examples: Sequence[Example]) -> list[np.ndarray]:
    return [model.predict(ex) for ex in examples]


def bias_f1(model: BiasModel, examples: Sequence[Example]) -> float:
    preds, golds = [], []
    for ex, p in zip(examples, predict_labels(model, examples)):
        preds.extend(int(x > 0.5) for x in p)
        golds.extend(ex.doc.gold_bias)
    return prf_bias(preds, golds)[2] / 100.0


def train(model: BiasModel, train_examples: Sequence[Example], val_examples: Sequence[Example],
          config: RunConfig, rng: np.random.Generator, epochs: int | None = None,
          stop: Callable[[EpochLog], bool] | None = None, track_train_f1: bool = False) -> TrainResult:
    """Phase 1 (distillation) then phase 2 (classification), per ``config.phase``.

    Phase 2 keeps the parameters of the epoch with the best validation bias F1
    (earliest on ties).  Without validation examples the last epoch is kept.
    """
    history: list[EpochLog] = []
    batch = config.batch_size
    steps_per_epoch = max(1, -(-len(train_examples) // batch))

    if config.phase in ("sequential", "distill-only") and config.distill_epochs:
        trainer = Trainer(model, config, steps_per_epoch * config.distill_epochs, "distill")
        for epoch in range(1, config.distill_epochs + 1):
            sums = _soft_epoch(model, trainer, train_examples, batch, rng)
            history.append(EpochLog(epoch, "distill", sums.get("total", 0.0), sums))
    if config.phase == "distill-only":
        return TrainResult(history, 0, None, None)

    epochs = epochs or config.max_epochs
    joint = config.phase == "joint"
    trainer = Trainer(model, config, steps_per_epoch * epochs, "joint" if joint else "classify")
    best_state, best_f1, best_epoch = None, None, None
    epochs_run = 0
    for epoch in range(1, epochs + 1):
        total_loss = 0.0
        soft_sums: dict[str, float] = {}
        for idx in _batches(len(train_examples), batch, rng):
            loss = None
            for i in idx:
                ex = train_examples[i]
                contextual = model.encode(ex.doc)
                part = model.classification_loss(ex, contextual)
                if joint:
                    soft = model.soft_losses(ex, contextual)
                    for k, v in soft.values().items():
                        soft_sums[k] = soft_sums.get(k, 0.0) + v
                    part = ad.add(part, soft.total)
                total_loss += part.item()
                loss = part if loss is None else ad.add(loss, part)
            trainer.step(loss)
        epochs_run = epoch
        log = EpochLog(epoch, "joint" if joint else "classify", total_loss, soft_sums)
        if val_examples:
            log.val_f1 = bias_f1(model, val_examples)
            if best_f1 is None or log.val_f1 > best_f1:
                best_f1, best_epoch, best_state = log.val_f1, epoch, model.state_dict()
        if track_train_f1:
            log.train_f1 = bias_f1(model, train_examples)
        history.append(log)
        logger.debug("epoch %d loss %.4f val_f1 %s", epoch, total_loss, log.val_f1)
        if stop is not None and stop(log):
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(history, epochs_run, best_epoch if best_state is not None else epochs_run, best_f1)


def fit_extractor(config: RunConfig, corpus: Corpus) -> dict[str, SoftLabelTables]:
    """Desk-scale extractor: fit the distillation heads on gold annotations, emit their tables."""
    gold = {d.doc_id: gold_tables(d) for d in corpus if d.gold_events is not None}
    missing = [d.doc_id for d in corpus if d.doc_id not in gold]
    if missing:
        raise ValueError(f"extractor needs gold events for: {missing}")
    model = build_model(config, list(corpus))
    rng = np.random.default_rng(config.seed)
    examples = [Example(d, gold[d.doc_id], None, None) for d in corpus]  # type: ignore[arg-type]
    steps = max(1, config.distill_epochs) * len(examples)
    train_distillation(model, examples, config, steps, rng)
    with ad.no_grad():
        return {d.doc_id: predict_tables(model.heads, model.encode(d)) for d in corpus}


# -- cross-validation ---------------------------------------------------------


def _sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _run_fold(args) -> dict:
    config, plan, fold, examples, run_dir = args
    train_ids, val_ids, test_ids = plan.iteration(fold)
    by_id = {ex.doc.doc_id: ex for ex in examples}
    train_ex = [by_id[i] for i in sorted(train_ids)]
    val_ex = [by_id[i] for i in sorted(val_ids)]
    test_ex = [by_id[i] for i in sorted(test_ids)]
    if not any(sum(ex.doc.gold_bias) for ex in test_ex):
        logger.warning("fold %d: test fold has no bias sentences", fold)
    fold_seed = config.seed * 1000 + fold
    model = build_model(config, [ex.doc for ex in train_ex], seed=fold_seed)
    result = train(model, train_ex, val_ex, config, np.random.default_rng(fold_seed))
    predictions = []
    for ex, probs in zip(test_ex, predict_labels(model, test_ex)):
        for k, p in enumerate(probs):
            predictions.append({
                "doc_id": ex.doc.doc_id,
                "sentence": k,
                "p_bias": float(p),
                "prediction": int(p > 0.5),
                "gold": int(ex.doc.gold_bias[k]),
                "fold": fold,
            })
    ckpt = None
    if run_dir is not None:
        ckpt = Path(run_dir) / f"fold_{fold:02d}.ckpt.json"
        ad.save_checkpoint(ckpt, model.state_dict(), meta={"fold": fold, "seed": fold_seed})
    preds = [r["prediction"] for r in predictions]
    golds = [r["gold"] for r in predictions]
    return {
        "fold": fold,
        "train_docs": len(train_ex),
        "validation_docs": sorted(val_ids),
        "test_docs": sorted(test_ids),
        "epochs_run": result.epochs_run,
        "best_epoch": result.best_epoch,
        "best_val_f1": result.best_val_f1,
        "history": [dataclasses.asdict(h) for h in result.history],
        "metrics": dict(zip(("precision", "recall", "f1"), prf_bias(preds, golds))),
        "predictions": predictions,
        "checkpoint_sha256": hashlib.sha256(ckpt.read_bytes()).hexdigest() if ckpt else None,
    }


def crossval(config: RunConfig, corpus: Corpus | None = None, run_dir: str | Path | None = None,
             graphs: dict[str, EventRelationGraph] | None = None) -> dict:
    """k-fold article-level cross-validation; predictions pooled before scoring."""
    config.validate()
    started = time.time()
    corpus = corpus if corpus is not None else load_corpus(config.corpus)
    unlabeled = [d.doc_id for d in corpus if d.gold_bias is None]
    if unlabeled:
        raise ValueError(f"documents without gold bias labels: {unlabeled}")
    tables = resolve_tables(config, corpus)
    examples = make_examples(corpus, tables, ablate=config.ablate_edges, graphs=graphs)
    plan = kfold_split(corpus, config.k, config.seed)
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(config, plan, fold, examples, run_dir) for fold in range(config.k)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            folds = list(pool.map(_run_fold, jobs))
    else:
        folds = [_run_fold(job) for job in jobs]
    pooled = [r for f in folds for r in f["predictions"]]
    preds = [r["prediction"] for r in pooled]
    golds = [r["gold"] for r in pooled]
    counts = confusion(preds, golds)
    report = {
        "config": config.to_json(),
        "seed": config.seed,
        "fold_plan": plan.to_json(),
        "pooled": {
            **dict(zip(("precision", "recall", "f1"), prf_bias(preds, golds))),
            "counts": dataclasses.asdict(counts),
        },
        "folds": [{k: v for k, v in f.items() if k != "predictions"} for f in folds],
        "artifacts": {
            "graphs_sha256": {ex.doc.doc_id: _sha256_json(ex.graph.to_json()) for ex in examples},
            "checkpoints_sha256": {f"fold_{f['fold']:02d}": f["checkpoint_sha256"] for f in folds},
        },
        "wall_clock_seconds": time.time() - started,
    }
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        with (run_dir / "predictions.jsonl").open("w") as fh:
            for r in pooled:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        write_history_csv(folds, run_dir / "loss_curves.csv")
    report["predictions"] = pooled
    return report


def write_history_csv(folds: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "epoch", "phase", "loss", "Loss_event", "Loss_corefer", "Loss_temp",
                         "Loss_causal", "Loss_subevent", "Loss_soft", "val_f1"])
        for f in folds:
            for h in f["history"]:
                soft = h.get("soft") or {}
                writer.writerow([f["fold"], h["epoch"], h["phase"], h["loss"],
                                 *(soft.get(k, "") for k in ("event", "coref", "temporal", "causal", "subevent", "total")),
                                 "" if h["val_f1"] is None else h["val_f1"]])


def scores_from_predictions(path: str | Path) -> tuple[float, float, float]:
    preds, golds = [], []
    with Path(path).open() as fh:
        for line in fh:
            row = json.loads(line)
            preds.append(int(row["prediction"]))
            golds.append(int(row["gold"]))
    return prf_bias(preds, golds)
