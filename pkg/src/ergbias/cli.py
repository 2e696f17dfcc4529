"""Command-line entry point: ``ergbias <command> [options]``.

Commands take one JSON configuration file (``--config``) plus ``--set key=value``
overrides.  Reports land as JSON/CSV files in ``--run-dir``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import gradcheck as gc
from .corpus import CorpusError, corpus_stats, load_corpus, save_corpus
from .graph import load_graph, normalize_gold_relations, save_graph
from .metrics import COREF_METRICS
from .synth import generate, majority_class_f1
from .training import (RunConfig, bias_f1, build_model, crossval, make_examples, resolve_tables, train,
                       write_history_csv)

logger = logging.getLogger("ergbias")


class UsageError(Exception):
    pass


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise UsageError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().replace("-", "_"), value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = dict(_parse_override(s) for s in args.set or [])
    for name in ("corpus", "seed", "k", "tables"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return RunConfig.load(args.config or "", overrides)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- commands -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus)
    relation_counts = {}
    for d in corpus:
        try:
            rels = normalize_gold_relations(d.gold_relations or ()).normalized
        except ValueError as exc:
            raise CorpusError(f"{d.doc_id}: {exc}") from exc
        relation_counts[d.doc_id] = len(rels)
    stats = dataclasses.asdict(corpus_stats(corpus)) if all(d.gold_bias is not None for d in corpus) else None
    summary = {"documents": len(corpus), "stats": stats, "relations": sum(relation_counts.values())}
    if args.out:
        save_corpus(corpus, args.out)
        summary["output_sha256"] = _sha256(Path(args.out))
    if args.run_dir:
        _write_json(Path(args.run_dir) / "ingest.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_build_graph(args) -> int:
    config = resolve_config(args)
    corpus = load_corpus(config.corpus)
    tables = resolve_tables(config, corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for ex in make_examples(corpus, tables, ablate=config.ablate_edges):
        doc_id = ex.doc.doc_id
        if "/" in doc_id or doc_id.startswith("."):
            raise UsageError(f"doc_id {doc_id!r} cannot be used as a file name")
        path = out / f"{doc_id}.json"
        save_graph(ex.graph, path)
        manifest[doc_id] = _sha256(path)
    _write_json(out / "manifest.json", {"config": config.to_json(), "graphs_sha256": manifest})
    print(f"wrote {len(manifest)} graphs to {out}")
    return 0


def _load_graph_dir(path: str | None):
    if not path:
        return None
    graphs = {}
    for p in sorted(Path(path).glob("*.json")):
        if p.name == "manifest.json":
            continue
        g = load_graph(p)
        graphs[g.doc_id] = g
    return graphs


def cmd_train(args) -> int:
    config = resolve_config(args)
    started = time.time()
    corpus = load_corpus(config.corpus)
    tables = resolve_tables(config, corpus)
    examples = make_examples(corpus, tables, ablate=config.ablate_edges, graphs=_load_graph_dir(args.graphs))
    model = build_model(config, list(corpus))
    result = train(model, examples, [], config, np.random.default_rng(config.seed), track_train_f1=True)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt = run_dir / "model.ckpt.json"
    ad.save_checkpoint(ckpt, model.state_dict(), meta={"config": config.to_json()})
    history = [dataclasses.asdict(h) for h in result.history]
    report = {
        "config": config.to_json(),
        "seed": config.seed,
        "epochs_run": result.epochs_run,
        "history": history,
        "train_f1": bias_f1(model, examples) if config.phase != "distill-only" else None,
        "artifacts": {"checkpoint_sha256": _sha256(ckpt)},
        "wall_clock_seconds": time.time() - started,
    }
    _write_json(run_dir / "report.json", report)
    write_history_csv([{"fold": -1, "history": history}], run_dir / "loss_curves.csv")
    print(f"trained {result.epochs_run} epochs; report in {run_dir / 'report.json'}")
    return 0


def cmd_crossval(args) -> int:
    config = resolve_config(args)
    if args.workers is not None:
        config.workers = args.workers
    report = crossval(config, run_dir=args.run_dir, graphs=_load_graph_dir(args.graphs))
    pooled = report["pooled"]
    print(f"pooled bias P/R/F1: {pooled['precision']:.2f} / {pooled['recall']:.2f} / {pooled['f1']:.2f}")
    return 0


def read_clustering(path: str | Path) -> list[list]:
    """A clustering file is a JSON list of clusters, each a list of mention ids.

    Mention ids may be strings, integers or lists (e.g. ``[start, end]`` spans).
    A top-level ``{"clusters": [...]}`` object is also accepted.
    """
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict):
        obj = obj.get("clusters")
    if not isinstance(obj, list) or not all(isinstance(c, list) for c in obj):
        raise UsageError(f"{path}: expected a JSON list of clusters")
    if not obj:
        raise UsageError(f"{path}: clustering is empty")

    def key(m):
        return tuple(key(x) for x in m) if isinstance(m, list) else m

    return [[key(m) for m in c] for c in obj]


def cmd_score_coref(args) -> int:
    gold = read_clustering(args.gold)
    pred = read_clustering(args.pred)
    scores = {name: fn(gold, pred) for name, fn in COREF_METRICS.items()}
    for name, (p, r, f) in scores.items():
        print(f"{name:<7} P {p:.2f}  R {r:.2f}  F1 {f:.2f}")
    if args.run_dir:
        _write_json(Path(args.run_dir) / "coref_scores.json",
                    {k: dict(zip(("precision", "recall", "f1"), v)) for k, v in scores.items()})
    return 0


def cmd_gradcheck(args) -> int:
    results, seconds = gc.timed_run(args.seed)
    print(gc.report(results, seconds))
    if args.run_dir:
        _write_json(Path(args.run_dir) / "gradcheck.json", {
            "seed": args.seed, "step": gc.STEP, "tolerance": gc.TOLERANCE, "seconds": seconds,
            "groups": [dataclasses.asdict(r) | {"passed": r.passed} for r in results],
        })
    return 0 if all(r.passed for r in results) else 1


def cmd_gen_synth(args) -> int:
    corpus = generate(args.num_docs, seed=args.seed, mode=args.mode)
    save_corpus(corpus, args.out)
    stats = corpus_stats(corpus)
    print(f"wrote {len(corpus)} documents to {args.out}; bias sentences {stats.bias_percent:.1f}%, "
          f"majority-class F1 {majority_class_f1(corpus):.3f}")
    return 0


# -- parser -------------------------------------------------------------------


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (repeatable)")
    p.add_argument("--corpus", help="corpus JSONL (overrides the config)")
    p.add_argument("--tables", help="'gold', 'extractor' or a soft-table JSONL path")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergbias", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus and report statistics")
    p.add_argument("corpus")
    p.add_argument("--out", help="write the validated corpus here")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", help="build one event relation graph JSON per document")
    _config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train one model on the whole corpus")
    _config_flags(p)
    p.add_argument("--graphs", help="directory of prebuilt graphs")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="k-fold article-level cross-validation")
    _config_flags(p)
    p.add_argument("--k", type=int)
    p.add_argument("--workers", type=int, help="run folds in this many processes")
    p.add_argument("--graphs", help="directory of prebuilt graphs")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("score-coref", help="MUC, B3, CEAF_e and BLANC between two clustering files")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_score_coref)

    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter groups")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-dir")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-synth", help="write a synthetic corpus with a planted cross-sentence rule")
    p.add_argument("--num-docs", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("uniform", "grammar", "lexical"), default="uniform")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
