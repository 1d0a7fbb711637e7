"""Command-line workflows tying the modules into reproducible runs.

Every subcommand writes its outputs into --outdir together with a
manifest.<command>.json recording the command, the config file, the seed,
and a sha256 digest of every input file, so any run can be audited and
replayed. Flags override config-file values; all randomness flows from a
single seed through named sub-streams. Two runs with identical manifests
produce byte-identical outputs (wall-clock time is confined to
train_report.json).

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import pickle
import sys
from pathlib import Path
from typing import Iterable, Mapping

from .candidates import (
    CandidateIndex,
    build_index,
    candidate_recall_at_k,
    generate_candidate_sets,
    read_candidates,
    write_candidates,
)
from .config import SynthConfig, TrainConfig, load_config, write_config
from .corpus import (
    DEFAULT_MAX_TOKENS,
    Corpus,
    KnowledgeBase,
    filter_annotations_by_candidates,
    load_corpus,
    read_links,
    read_split,
    write_corpus,
)
from .errors import DataError, DocgraphError, FormatError, NumericalError, UsageError
from .evaluator import (
    LINK_POLICIES,
    OracleReport,
    hard_link_assignment,
    linking_doc_eval,
    micro_prf,
    oracle_recall,
    pipeline_baseline,
)
from .synth import generate, write_synthetic
from .trainer import (
    LINKING_MODES,
    load_model,
    predict_documents,
    predicted_entity_sets,
    read_pretrained_vectors,
    save_model,
    train,
)

INDEX_FORMAT = "docgraph-candidate-index"
INDEX_VERSION = 1


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits 1 on usage errors instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared plumbing


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, payload) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_manifest(outdir, command: str, inputs: Iterable, seed=None, config=None) -> None:
    paths = sorted({str(Path(p)) for p in inputs if p})
    payload = {
        "command": command,
        "config": None if config is None else str(config),
        "seed": seed,
        "outdir": str(outdir),
        "inputs": [{"path": p, "sha256": _sha256_file(p)} for p in paths],
    }
    _write_json(Path(outdir) / f"manifest.{command}.json", payload)


def _ensure_outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus_paths(dirpath) -> list[Path]:
    d = Path(dirpath)
    return [d / name for name in ("documents.tsv", "mentions.tsv", "kb.tsv", "annotations.tsv")]


def _load_corpus_dir(dirpath, max_tokens: int | None = None) -> Corpus:
    docs, mentions, kb, annotations = _corpus_paths(dirpath)
    kwargs = {} if max_tokens is None else {"max_tokens": max_tokens}
    return load_corpus(docs, [mentions], kb, annotations, **kwargs)


def _read_split_dir(dirpath, required: tuple[str, ...]) -> tuple[dict[str, list[str]], list[Path]]:
    d = Path(dirpath)
    split: dict[str, list[str]] = {}
    paths: list[Path] = []
    for name in ("train", "dev", "test"):
        p = d / f"split.{name}.txt"
        if p.is_file():
            split[name] = read_split(p)
            paths.append(p)
        elif name in required:
            raise DataError(f"missing split file: {p}")
        else:
            split[name] = []
    return split, paths


def _add_cfg_flags(parser, cls) -> None:
    for f in dataclasses.fields(cls):
        parser.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            type=type(f.default),
            default=None,
            help=f"override config key {f.name} (default {f.default})",
        )


def _build_cfg(cls, args):
    """Config file first (when given), then flag overrides, then validation."""
    cfg = load_config(cls, args.config) if args.config else cls()
    for f in dataclasses.fields(cls):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    cfg.validate()
    return cfg


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None
    if not values:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}")
    return values


def _save_index(path, index: CandidateIndex) -> None:
    payload = {"format": INDEX_FORMAT, "version": INDEX_VERSION, "index": index}
    with open(path, "wb") as f:
        # fixed protocol keeps the file byte-identical across reruns
        pickle.dump(payload, f, protocol=4)


def _load_index(path) -> CandidateIndex:
    try:
        with open(path, "rb") as f:
            payload = pickle.load(f)
    except (pickle.UnpicklingError, EOFError, AttributeError, ImportError, IndexError) as e:
        raise DataError(f"{path}: not a candidate index file ({e})") from None
    if not isinstance(payload, dict) or payload.get("format") != INDEX_FORMAT:
        raise DataError(f"{path}: not a candidate index file")
    if payload.get("version") != INDEX_VERSION:
        raise DataError(
            f"{path}: index version {payload.get('version')!r} is not supported "
            f"(expected {INDEX_VERSION})"
        )
    index = payload.get("index")
    if not isinstance(index, CandidateIndex):
        raise DataError(f"{path}: index payload has the wrong type")
    return index


def write_predictions(path, scored: Mapping[str, list], relations: list[str]) -> None:
    """One `doc_id  head  relation_name  tail  probability` row per tuple.

    Rows are sorted by descending probability, then lexicographically, so the
    file is a deterministic function of the scored predictions.
    """
    rows = []
    for doc_id, tuples in scored.items():
        for head, rel, tail, prob in tuples:
            rows.append((-prob, doc_id, head, relations[rel], tail, prob))
    rows.sort(key=lambda row: row[:5])
    with open(path, "w", encoding="utf-8") as f:
        for _, doc_id, head, rel_name, tail, prob in rows:
            f.write(f"{doc_id}\t{head}\t{rel_name}\t{tail}\t{prob!r}\n")


def read_predictions(path, kb: KnowledgeBase) -> dict[str, set[tuple[str, int, str]]]:
    """Parse a prediction file back into per-document tuple sets."""
    preds: dict[str, set[tuple[str, int, str]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise FormatError(
                    f"expected 5 tab-separated fields for prediction, got {len(parts)}",
                    path=path,
                    line=lineno,
                )
            doc_id, head, rel_name, tail, prob = parts
            try:
                rel = kb.relations.index(rel_name)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: unknown relation {rel_name!r}"
                ) from None
            try:
                float(prob)
            except ValueError:
                raise FormatError("probability is not a float", path=path, line=lineno) from None
            preds.setdefault(doc_id, set()).add((head, rel, tail))
    return preds


def _thresholded(scored: Mapping[str, list]) -> dict[str, set[tuple[str, int, str]]]:
    return {d: {(h, r, t) for h, r, t, _ in rows} for d, rows in scored.items()}


def _load_model_dir(model_dir, corpus, args):
    """Rebuild a saved model, re-reading pretrained vectors when supplied."""
    entity_ids = sorted(corpus.kb.entities)
    desc = graph = None
    extra: list[Path] = []
    if getattr(args, "desc_vectors", None):
        desc = read_pretrained_vectors(args.desc_vectors, entity_ids)
        extra.append(Path(args.desc_vectors))
    if getattr(args, "graph_vectors", None):
        graph = read_pretrained_vectors(args.graph_vectors, entity_ids)
        extra.append(Path(args.graph_vectors))
    meta = Path(model_dir) / "model.json"
    ckpt = Path(model_dir) / "model.ckpt"
    model = load_model(meta, ckpt, desc_vectors=desc, graph_vectors=graph)
    return model, [meta, ckpt] + extra


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> None:
    cfg = _build_cfg(SynthConfig, args)
    synth = generate(cfg)
    outdir = _ensure_outdir(args.outdir)
    write_synthetic(synth, outdir)
    write_config(cfg, outdir / "config.effective.cfg")
    _write_manifest(outdir, "synth", [args.config], seed=cfg.seed, config=args.config)
    print(
        f"wrote {cfg.docs} documents, {len(synth.corpus.kb.entities)} entities, "
        f"{len(synth.corpus.kb.relations)} relations to {outdir}"
    )


def _cmd_index(args) -> None:
    corpus = _load_corpus_dir(args.corpus)
    index = build_index(corpus.kb)
    outdir = _ensure_outdir(args.outdir)
    _save_index(outdir / "index.pkl", index)
    _write_manifest(outdir, "index", _corpus_paths(args.corpus))
    print(f"indexed {len(index.entry_entity)} names of {len(index.entity_ids)} entities")


def _cmd_candidates(args) -> None:
    if args.recall_at is not None and not args.links:
        raise UsageError("--recall-at requires --links")
    corpus = _load_corpus_dir(args.corpus)
    index = _load_index(args.index)
    sets = generate_candidate_sets(corpus, index, args.max_candidates)
    outdir = _ensure_outdir(args.outdir)
    write_candidates(sets, outdir / "candidates.tsv")
    inputs = _corpus_paths(args.corpus) + [Path(args.index)]
    if args.links:
        links = read_links(args.links)
        inputs.append(Path(args.links))
        flat = {(d, i): cs for d, lst in sets.items() for i, cs in enumerate(lst)}
        cutoffs = _int_list(args.recall_at) if args.recall_at else [1, 5, 25]
        report = {
            f"recall_at_{k}": candidate_recall_at_k(flat, links, k) for k in cutoffs
        }
        _write_json(outdir / "recall.json", report)
        for name in sorted(report):
            print(f"{name} {report[name]:.4f}")
    _write_manifest(outdir, "candidates", inputs)
    n_mentions = sum(len(lst) for lst in sets.values())
    print(f"wrote candidate sets for {n_mentions} mentions in {len(sets)} documents")


def _cmd_filter(args) -> None:
    corpus = _load_corpus_dir(args.corpus)
    cand = read_candidates(args.candidates, corpus)
    filtered = filter_annotations_by_candidates(
        corpus.annotations, cand, args.max_candidates
    )
    outdir = _ensure_outdir(args.outdir)
    write_corpus(Corpus(corpus.documents, corpus.mentions, corpus.kb, filtered), outdir)
    before = sum(len(g.tuples) for g in corpus.annotations)
    after = sum(len(g.tuples) for g in filtered)
    _write_json(
        outdir / "filter_report.json",
        {
            "documents": len(corpus.documents),
            "max_candidates": args.max_candidates,
            "tuples_before": before,
            "tuples_after": after,
            "tuples_dropped": before - after,
        },
    )
    _write_manifest(
        outdir, "filter", _corpus_paths(args.corpus) + [Path(args.candidates)]
    )
    print(f"kept {after} of {before} tuples across {len(corpus.documents)} documents")


def _train_common(args, linking: str, links, split):
    cfg = _build_cfg(TrainConfig, args)
    corpus = _load_corpus_dir(args.corpus, max_tokens=cfg.max_tokens)
    cand = read_candidates(args.candidates, corpus)
    entity_ids = sorted(corpus.kb.entities)
    desc = graph = None
    extra: list[Path] = []
    if getattr(args, "desc_vectors", None):
        desc = read_pretrained_vectors(args.desc_vectors, entity_ids)
        extra.append(Path(args.desc_vectors))
    if getattr(args, "graph_vectors", None):
        graph = read_pretrained_vectors(args.graph_vectors, entity_ids)
        extra.append(Path(args.graph_vectors))
    model, report = train(
        corpus,
        cand,
        split,
        cfg,
        linking=linking,
        links=links,
        desc_vectors=desc,
        graph_vectors=graph,
        log=print,
    )
    return cfg, corpus, cand, model, report, extra


def _cmd_train(args) -> None:
    split, split_paths = _read_split_dir(args.split_dir, required=("train",))
    links = read_links(args.links) if args.links else None
    cfg, corpus, cand, model, report, extra = _train_common(
        args, args.linking, links, split
    )
    outdir = _ensure_outdir(args.outdir)
    save_model(model, outdir / "model.json", outdir / "model.ckpt")
    _write_json(outdir / "train_report.json", report.as_dict())
    write_config(cfg, outdir / "config.effective.cfg")
    inputs = (
        _corpus_paths(args.corpus)
        + [Path(args.candidates)]
        + split_paths
        + extra
        + ([Path(args.links)] if args.links else [])
        + ([Path(args.config)] if args.config else [])
    )
    _write_manifest(outdir, "train", inputs, seed=cfg.seed, config=args.config)
    print(
        f"best dev f1 {report.best_dev_f1:.4f} at epoch {report.best_epoch}; "
        f"threshold {model.threshold:.2f}"
    )


def _cmd_predict(args) -> None:
    corpus = _load_corpus_dir(args.corpus)
    model, model_inputs = _load_model_dir(args.model, corpus, args)
    if model.cfg.max_tokens != DEFAULT_MAX_TOKENS:
        # token truncation at load must match what the model saw in training
        corpus = _load_corpus_dir(args.corpus, max_tokens=model.cfg.max_tokens)
    doc_ids = read_split(args.split)
    cand = read_candidates(args.candidates, corpus)
    if model.linking_mode == "joint":
        scored = predict_documents(
            model, corpus, cand, doc_ids, threshold=args.threshold, top_k=args.top_k
        )
    else:
        links = read_links(args.links) if args.links else None
        if model.linking_mode == "external" and links is None:
            raise UsageError("model was trained with external links; pass --links")
        scored = pipeline_baseline(
            model, corpus, cand, doc_ids,
            policy=model.linking_mode, links=links, threshold=args.threshold,
        )
    outdir = _ensure_outdir(args.outdir)
    write_predictions(outdir / "predictions.tsv", scored, model.relations)
    inputs = (
        _corpus_paths(args.corpus)
        + [Path(args.candidates), Path(args.split)]
        + model_inputs
        + ([Path(args.links)] if args.links else [])
    )
    _write_manifest(outdir, "predict", inputs)
    total = sum(len(rows) for rows in scored.values())
    print(f"wrote {total} predictions for {len(doc_ids)} documents")


def _cmd_eval(args) -> None:
    corpus = _load_corpus_dir(args.corpus)
    doc_ids = read_split(args.split)
    preds = read_predictions(args.predictions, corpus.kb)
    gold = [corpus.annotation_of(d) for d in doc_ids]
    report = micro_prf(preds, gold)
    outdir = _ensure_outdir(args.outdir)
    _write_json(outdir / "metrics.json", report.as_dict())
    table = report.table("tuple metrics")
    (outdir / "metrics.txt").write_text(table + "\n", encoding="utf-8")
    _write_manifest(
        outdir,
        "eval",
        _corpus_paths(args.corpus) + [Path(args.predictions), Path(args.split)],
    )
    print(table)


def _cmd_oracle(args) -> None:
    corpus = _load_corpus_dir(args.corpus)
    cand = read_candidates(args.candidates, corpus)
    doc_ids = read_split(args.split) if args.split else [d.doc_id for d in corpus.documents]
    gold = [corpus.annotation_of(d) for d in doc_ids]
    recalls = {"top1": oracle_recall(cand, gold, "top1")}
    for c in _int_list(args.c_list):
        recalls[f"top{c}"] = oracle_recall(cand, gold, "topc", c=c)
    inputs = _corpus_paths(args.corpus) + [Path(args.candidates)]
    if args.links:
        recalls["external"] = oracle_recall(cand, gold, "external", links=read_links(args.links))
        inputs.append(Path(args.links))
    if args.split:
        inputs.append(Path(args.split))
    report = OracleReport(recalls)
    outdir = _ensure_outdir(args.outdir)
    _write_json(outdir / "oracle.json", report.as_dict())
    (outdir / "oracle.txt").write_text(report.table() + "\n", encoding="utf-8")
    _write_manifest(outdir, "oracle", inputs)
    print(report.table())


def _cmd_baseline(args) -> None:
    split, split_paths = _read_split_dir(args.split_dir, required=("train", "test"))
    links = read_links(args.links) if args.links else None
    if args.policy == "external" and links is None:
        raise UsageError("external link policy requires --links")
    cfg, corpus, cand, model, report, extra = _train_common(
        args, args.policy, links, split
    )
    outdir = _ensure_outdir(args.outdir)
    save_model(model, outdir / "model.json", outdir / "model.ckpt")
    _write_json(outdir / "train_report.json", report.as_dict())
    write_config(cfg, outdir / "config.effective.cfg")
    scored = pipeline_baseline(
        model, corpus, cand, split["test"], policy=args.policy, links=links
    )
    write_predictions(outdir / "predictions.tsv", scored, model.relations)
    gold = [corpus.annotation_of(d) for d in split["test"]]
    metrics = micro_prf(_thresholded(scored), gold)
    _write_json(outdir / "metrics.json", metrics.as_dict())
    table = metrics.table("pipeline baseline test metrics")
    (outdir / "metrics.txt").write_text(table + "\n", encoding="utf-8")
    inputs = (
        _corpus_paths(args.corpus)
        + [Path(args.candidates)]
        + split_paths
        + extra
        + ([Path(args.links)] if args.links else [])
        + ([Path(args.config)] if args.config else [])
    )
    _write_manifest(outdir, "baseline", inputs, seed=cfg.seed, config=args.config)
    print(table)


def _cmd_linkeval(args) -> None:
    if (args.model is None) == (args.policy is None):
        raise UsageError("give exactly one of --model or --policy")
    corpus = _load_corpus_dir(args.corpus)
    doc_ids = read_split(args.split)
    gold_links = read_links(args.gold_links)
    gold_sets: dict[str, set[str]] = {d: set() for d in doc_ids}
    for (doc_id, _), entity_id in gold_links.items():
        if doc_id in gold_sets:
            gold_sets[doc_id].add(entity_id)
    inputs = _corpus_paths(args.corpus) + [
        Path(args.candidates), Path(args.split), Path(args.gold_links)
    ]
    if args.model is not None:
        model, model_inputs = _load_model_dir(args.model, corpus, args)
        if model.cfg.max_tokens != DEFAULT_MAX_TOKENS:
            corpus = _load_corpus_dir(args.corpus, max_tokens=model.cfg.max_tokens)
        cand = read_candidates(args.candidates, corpus)
        predicted = predicted_entity_sets(
            model, corpus, cand, doc_ids, entity_threshold=args.entity_threshold
        )
        inputs += model_inputs
    else:
        cand = read_candidates(args.candidates, corpus)
        links = read_links(args.links) if args.links else None
        predicted = {}
        for d in doc_ids:
            sets = cand.get(d)
            if sets is None:
                raise DataError(f"no candidate sets for document {d!r}")
            predicted[d] = set(hard_link_assignment(d, sets, args.policy, links).values())
        if args.links:
            inputs.append(Path(args.links))
    report = linking_doc_eval(predicted, gold_sets)
    outdir = _ensure_outdir(args.outdir)
    _write_json(outdir / "linkeval.json", report.as_dict())
    table = report.table("document-level linking metrics")
    (outdir / "linkeval.txt").write_text(table + "\n", encoding="utf-8")
    _write_manifest(outdir, "linkeval", inputs)
    print(table)


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="docgraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", default=None, help="synth config file (key = value lines)")
    _add_cfg_flags(p, SynthConfig)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("index", help="build the candidate retrieval index")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("candidates", help="emit per-mention candidate sets")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", required=True, help="index.pkl from the index subcommand")
    p.add_argument("--outdir", required=True)
    p.add_argument("-c", "--max-candidates", dest="max_candidates", type=int, default=25)
    p.add_argument("--links", default=None, help="gold link file for recall reporting")
    p.add_argument("--recall-at", dest="recall_at", default=None,
                   help="comma-separated cutoffs for recall@k (needs --links)")
    p.set_defaults(func=_cmd_candidates)

    p = sub.add_parser("filter", help="drop annotation tuples unreachable via candidates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True, help="candidates.tsv file")
    p.add_argument("--outdir", required=True)
    p.add_argument("--max-candidates", dest="max_candidates", type=int, default=25)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("train", help="train the joint extraction model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--split-dir", dest="split_dir", required=True,
                   help="directory holding split.train.txt / split.dev.txt")
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", default=None, help="train config file (key = value lines)")
    p.add_argument("--linking", choices=LINKING_MODES, default="joint")
    p.add_argument("--links", default=None, help="link file for external linking")
    p.add_argument("--desc-vectors", dest="desc_vectors", default=None)
    p.add_argument("--graph-vectors", dest="graph_vectors", default=None)
    _add_cfg_flags(p, TrainConfig)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="score documents with a trained model")
    p.add_argument("--model", required=True, help="directory holding model.json/model.ckpt")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--split", required=True, help="file listing document ids to score")
    p.add_argument("--outdir", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--links", default=None, help="link file for external-linking models")
    p.add_argument("--desc-vectors", dest="desc_vectors", default=None)
    p.add_argument("--graph-vectors", dest="graph_vectors", default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="micro P/R/F1 of predictions against annotations")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("oracle", help="tuple recall ceiling per linking policy")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--split", default=None, help="restrict to these document ids")
    p.add_argument("--c-list", dest="c_list", default="1,5,25")
    p.add_argument("--links", default=None, help="adds the external-linker policy")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("baseline", help="train and evaluate the hard-link pipeline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--split-dir", dest="split_dir", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--policy", choices=LINK_POLICIES, default="top_candidate")
    p.add_argument("--links", default=None)
    p.add_argument("--desc-vectors", dest="desc_vectors", default=None)
    p.add_argument("--graph-vectors", dest="graph_vectors", default=None)
    _add_cfg_flags(p, TrainConfig)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("linkeval", help="document-level linking P/R/F1")
    p.add_argument("--corpus", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--gold-links", dest="gold_links", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--model", default=None, help="joint model directory")
    p.add_argument("--entity-threshold", dest="entity_threshold", type=float, default=0.5)
    p.add_argument("--policy", choices=LINK_POLICIES, default=None)
    p.add_argument("--links", default=None, help="link file for the external policy")
    p.add_argument("--desc-vectors", dest="desc_vectors", default=None)
    p.add_argument("--graph-vectors", dest="graph_vectors", default=None)
    p.set_defaults(func=_cmd_linkeval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if isinstance(e.code, int):
            return e.code
        return 0 if e.code is None else 1
    try:
        args.func(args)
        return 0
    except UsageError as e:
        print(f"docgraph: usage error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"docgraph: numerical failure: {e}", file=sys.stderr)
        return 3
    except (DocgraphError, OSError) as e:
        print(f"docgraph: data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
