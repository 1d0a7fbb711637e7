"""Training from document-level tuple annotations.

One document is one batch unit; gradients accumulate over `batch_size`
documents before each optimizer step. The loss per document is a weighted
binary cross-entropy over pooled tuple probabilities (gold tuples positive,
sampled tuples negative) plus an optional weighted cross-entropy over
document-level entity probabilities.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import ndtensor as nd
from .candidates import CandidateSet
from .config import TrainConfig
from .corpus import AnnotationGraph, Corpus, Document, Mention, Vocabulary, build_vocabulary
from .encoder import Encoder
from .errors import DataError, NumericalError, UsageError
from .evaluator import hard_document_scores, hard_link_assignment, micro_prf
from .scorer import DocScores, Scorer, select_top_k_mentions
from .seeding import stream

_EPS = 1e-7
LINKING_MODES = ("joint", "top_candidate", "external")
THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


# ---------------------------------------------------------------------------
# model assembly


@dataclass
class Model:
    """Everything needed to score documents: config, vocab, tables, parameters."""

    cfg: TrainConfig
    vocab: Vocabulary
    entity_ids: list[str]
    entity_types: list[int]
    types: list[str]
    relations: list[str]
    params: nd.ParameterSet
    encoder: Encoder
    scorer: Scorer
    threshold: float = 0.5
    linking_mode: str = "joint"

    def encode_document(self, doc: Document, mode: str = "eval", rngs=None) -> nd.Tensor:
        ids = self.vocab.encode(doc)[: self.cfg.max_tokens]
        return self.encoder.encode(ids, mode, rngs)

    def score(
        self,
        doc: Document,
        mentions: list[Mention],
        candidate_sets: list[CandidateSet],
        mode: str = "eval",
        rngs=None,
    ) -> DocScores:
        encoding = self.encode_document(doc, mode, rngs)
        return self.scorer.score_document(doc.doc_id, encoding, mentions, candidate_sets, mode, rngs)


def assemble_model(
    cfg: TrainConfig,
    vocab: Vocabulary,
    entity_ids: list[str],
    entity_types: list[int],
    types: list[str],
    relations: list[str],
    desc_vectors: np.ndarray | None = None,
    graph_vectors: np.ndarray | None = None,
    linking_mode: str = "joint",
) -> Model:
    if linking_mode not in LINKING_MODES:
        raise UsageError(f"unknown linking mode {linking_mode!r}; known: {', '.join(LINKING_MODES)}")
    if not relations:
        raise DataError("cannot build a model with an empty relation inventory")
    params = nd.ParameterSet()
    init_rng = stream(cfg.seed, "init")
    encoder = Encoder(params, init_rng, vocab_size=len(vocab), max_len=cfg.max_tokens, cfg=cfg)
    scorer = Scorer(
        params,
        init_rng,
        cfg,
        entity_ids,
        entity_types,
        n_types=max(len(types), 1),
        n_relations=len(relations),
        pretrained_desc=desc_vectors,
        pretrained_graph=graph_vectors,
    )
    threshold = cfg.threshold if 0.0 <= cfg.threshold <= 1.0 else 0.5
    return Model(
        cfg=cfg,
        vocab=vocab,
        entity_ids=list(entity_ids),
        entity_types=list(entity_types),
        types=list(types),
        relations=list(relations),
        params=params,
        encoder=encoder,
        scorer=scorer,
        threshold=threshold,
        linking_mode=linking_mode,
    )


def build_model(
    corpus: Corpus,
    vocab: Vocabulary,
    cfg: TrainConfig,
    desc_vectors: np.ndarray | None = None,
    graph_vectors: np.ndarray | None = None,
    linking_mode: str = "joint",
) -> Model:
    kb = corpus.kb
    entity_ids = sorted(kb.entities)
    entity_types = [kb.entities[e].type_id for e in entity_ids]
    return assemble_model(
        cfg, vocab, entity_ids, entity_types, list(kb.types), list(kb.relations),
        desc_vectors, graph_vectors, linking_mode,
    )


def read_pretrained_vectors(path, entity_ids: Sequence[str]) -> np.ndarray:
    """Entity vector file: entity_id followed by whitespace-separated floats.

    Every entity in `entity_ids` must be covered; rows are returned in that
    order. Extra entities in the file are ignored.
    """
    rows: dict[str, np.ndarray] = {}
    dim = None
    path = Path(path)
    if not path.is_file():
        raise DataError(f"pretrained vector file not found: {path}")
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: expected an entity id and at least one value")
        try:
            values = np.array([float(v) for v in parts[1:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric vector component") from None
        if dim is None:
            dim = values.size
        elif values.size != dim:
            raise DataError(f"{path}:{lineno}: vector has {values.size} components, expected {dim}")
        if parts[0] in rows:
            raise DataError(f"{path}:{lineno}: duplicate vector for entity {parts[0]!r}")
        rows[parts[0]] = values
    missing = [e for e in entity_ids if e not in rows]
    if missing:
        shown = ", ".join(missing[:5])
        raise DataError(f"{path}: no vector for {len(missing)} entities (first: {shown})")
    return np.stack([rows[e] for e in entity_ids])


# ---------------------------------------------------------------------------
# negative sampling and losses


def sample_negative_tuples(
    gold_tuples: frozenset | set,
    candidate_entities: Sequence[str],
    n_relations: int,
    count: int,
    rng: np.random.Generator,
) -> list[tuple[str, int, str]]:
    """Uniform sample, without replacement, of non-gold tuples over the
    document's candidate entities (ordered pairs of distinct entities, any
    relation). Fewer possibilities than `count` returns them all."""
    entities = sorted(set(candidate_entities))
    space = [
        (h, r, t)
        for h in entities
        for t in entities
        if h != t
        for r in range(n_relations)
    ]
    space = [x for x in space if x not in gold_tuples]
    if count >= len(space):
        return space
    chosen = rng.choice(len(space), size=count, replace=False)
    return [space[i] for i in sorted(chosen)]


def _weighted_bce(
    probabilities: nd.Tensor,
    positive_rows: Sequence[int],
    negative_rows: Sequence[int],
    positive_weight: float,
    normalizer: int,
) -> nd.Tensor | None:
    if normalizer < 1 or (not positive_rows and not negative_rows):
        return None
    p = nd.clip(probabilities, _EPS, 1.0 - _EPS)
    terms = []
    if positive_rows:
        logs = nd.log(nd.take_flat(p, np.asarray(positive_rows, dtype=np.int64)))
        terms.append(nd.mul_const(nd.sum_over_axis(logs, axis=None), positive_weight))
    if negative_rows:
        comp = nd.add_const(nd.neg(nd.take_flat(p, np.asarray(negative_rows, dtype=np.int64))), 1.0)
        terms.append(nd.sum_over_axis(nd.log(comp), axis=None))
    total = terms[0] if len(terms) == 1 else nd.add(terms[0], terms[1])
    return nd.mul_const(total, -1.0 / normalizer)


def tuple_loss(
    pooled: nd.Tensor,
    positive_rows: Sequence[int],
    negative_rows: Sequence[int],
    positive_weight: float,
    gold_count: int,
) -> nd.Tensor | None:
    """-(1/gold_count) * sum of w*log p over positives and log(1-p) over negatives."""
    return _weighted_bce(pooled, positive_rows, negative_rows, positive_weight, gold_count)


def entity_loss(
    entity_probs: nd.Tensor,
    positive_rows: Sequence[int],
    negative_rows: Sequence[int],
    positive_weight: float,
    positive_count: int,
) -> nd.Tensor | None:
    """Weighted cross-entropy over document-level entity probabilities."""
    return _weighted_bce(entity_probs, positive_rows, negative_rows, positive_weight, positive_count)


def _scoreable_rows(flags: Sequence[bool], n_positive: int) -> tuple[list[int], list[int]]:
    # pooled tensors are packed over the scoreable subset; recover the row
    # index of each surviving positive and negative input
    pos, neg = [], []
    row = 0
    for k, ok in enumerate(flags):
        if not ok:
            continue
        (pos if k < n_positive else neg).append(row)
        row += 1
    return pos, neg


def document_loss(
    model: Model,
    scores: DocScores,
    gold: Sequence[tuple[str, int, str]],
    negatives: Sequence[tuple[str, int, str]],
    alpha: float,
) -> nd.Tensor | None:
    """Per-document training loss; None when nothing in it is scoreable."""
    cfg = model.cfg
    if not gold:
        return None
    allowed = None
    if scores.linking is not None:
        allowed = select_top_k_mentions(scores.linking.data, scores.entity_mentions, cfg.top_k_mentions)
    all_tuples = list(gold) + list(negatives)
    pooled, flags = model.scorer.pool_tuples(scores, all_tuples, allowed)
    terms = []
    if pooled is not None:
        pos_rows, neg_rows = _scoreable_rows(flags, len(gold))
        t_loss = tuple_loss(pooled, pos_rows, neg_rows, cfg.pos_tuple_weight, len(gold))
        if t_loss is not None:
            terms.append(t_loss)
    if alpha > 0.0:
        positive_entities = sorted({e for h, _, t in gold for e in (h, t)})
        negative_entities = sorted(
            {e for h, _, t in negatives for e in (h, t)} - set(positive_entities)
        )
        probs, eflags = model.scorer.entity_probabilities(
            scores, positive_entities + negative_entities
        )
        if probs is not None:
            pos_rows, neg_rows = _scoreable_rows(eflags, len(positive_entities))
            e_loss = entity_loss(
                probs, pos_rows, neg_rows, cfg.pos_entity_weight, len(positive_entities)
            )
            if e_loss is not None:
                terms.append(nd.mul_const(e_loss, alpha))
    if not terms:
        return None
    return terms[0] if len(terms) == 1 else nd.add(terms[0], terms[1])


# ---------------------------------------------------------------------------
# inference helpers shared by the training loop and the CLI


def predict_documents(
    model: Model,
    corpus: Corpus,
    candidate_sets: Mapping[str, list[CandidateSet]],
    doc_ids: Iterable[str],
    threshold: float | None = None,
    top_k: int | None = None,
) -> dict[str, list[tuple[str, int, str, float]]]:
    """Joint-model scored tuple predictions per document, sorted by probability."""
    thr = model.threshold if threshold is None else threshold
    k = model.cfg.top_k_mentions if top_k is None else top_k
    out = {}
    for doc_id in doc_ids:
        doc = corpus.document(doc_id)
        sets = candidate_sets.get(doc_id)
        if sets is None:
            raise DataError(f"no candidate sets for document {doc_id!r}")
        ds = model.score(doc, corpus.mentions_of(doc_id), sets, "eval")
        out[doc_id] = model.scorer.predict_graph(ds, thr, top_k=k)
    return out


def predicted_entity_sets(
    model: Model,
    corpus: Corpus,
    candidate_sets: Mapping[str, list[CandidateSet]],
    doc_ids: Iterable[str],
    entity_threshold: float = 0.5,
) -> dict[str, set[str]]:
    """Entities whose document-level probability clears the threshold, per doc."""
    out = {}
    for doc_id in doc_ids:
        doc = corpus.document(doc_id)
        sets = candidate_sets.get(doc_id)
        if sets is None:
            raise DataError(f"no candidate sets for document {doc_id!r}")
        ds = model.score(doc, corpus.mentions_of(doc_id), sets, "eval")
        universe = sorted(ds.entity_mentions)
        kept: set[str] = set()
        if universe:
            probs, flags = model.scorer.entity_probabilities(ds, universe)
            row = 0
            for entity_id, ok in zip(universe, flags):
                if not ok:
                    continue
                if float(probs.data[row]) >= entity_threshold:
                    kept.add(entity_id)
                row += 1
        out[doc_id] = kept
    return out


def tune_threshold(
    scored: Mapping[str, list[tuple[str, int, str, float]]],
    gold_graphs: Iterable[AnnotationGraph],
    grid: Sequence[float] = THRESHOLD_GRID,
) -> tuple[float, float]:
    """Grid-search the decision threshold for micro-F1; ties keep the lowest."""
    gold_graphs = list(gold_graphs)
    best_thr, best_f1 = 0.5, -1.0
    for thr in grid:
        preds = {
            doc_id: {(h, r, t) for h, r, t, p in rows if p >= thr}
            for doc_id, rows in scored.items()
        }
        f1 = micro_prf(preds, gold_graphs).f1
        if f1 > best_f1:
            best_thr, best_f1 = thr, f1
    if best_f1 <= 0.0 and len(grid) > 1:
        # nothing separates the grid points; keep the conventional default
        best_thr = 0.5
    return best_thr, max(best_f1, 0.0)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainReport:
    epochs_run: int = 0
    train_loss: list[float] = field(default_factory=list)
    dev_epochs: list[int] = field(default_factory=list)
    dev_f1: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = 0.0
    threshold: float = 0.5
    wall_seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "train_loss": self.train_loss,
            "dev_epochs": self.dev_epochs,
            "dev_f1": self.dev_f1,
            "best_epoch": self.best_epoch,
            "best_dev_f1": self.best_dev_f1,
            "threshold": self.threshold,
            "wall_seconds": self.wall_seconds,
        }


@dataclass
class _DocEntry:
    doc: Document
    mentions: list[Mention]
    cand_sets: list[CandidateSet]
    gold: list[tuple[str, int, str]]
    gold_set: frozenset
    neg_entities: list[str]
    assignment: dict[int, str] | None


def _prepare_documents(
    corpus: Corpus,
    candidate_sets: Mapping[str, list[CandidateSet]],
    doc_ids: Iterable[str],
    cfg: TrainConfig,
    linking: str,
    links,
) -> dict[str, _DocEntry]:
    entries = {}
    for doc_id in doc_ids:
        try:
            doc = corpus.document(doc_id)
        except KeyError:
            raise DataError(f"split references unknown document {doc_id!r}") from None
        sets = candidate_sets.get(doc_id)
        if sets is None:
            raise DataError(f"no candidate sets for document {doc_id!r}")
        mentions = corpus.mentions_of(doc_id)
        if len(sets) != len(mentions):
            raise DataError(
                f"document {doc_id!r}: {len(mentions)} mentions but {len(sets)} candidate sets"
            )
        annotation = corpus.annotation_of(doc_id)
        assignment = None
        if linking == "joint":
            neg_entities = sorted(
                {e for cs in sets for e, _ in cs.candidates[: cfg.max_candidates]}
            )
        else:
            assignment = hard_link_assignment(doc_id, sets, linking, links)
            neg_entities = sorted(set(assignment.values()))
        entries[doc_id] = _DocEntry(
            doc=doc,
            mentions=mentions,
            cand_sets=sets,
            gold=sorted(annotation.tuples),
            gold_set=annotation.tuples,
            neg_entities=neg_entities,
            assignment=assignment,
        )
    return entries


def _doc_scores(model: Model, entry: _DocEntry, mode: str, rngs=None) -> DocScores:
    if entry.assignment is None:
        return model.score(entry.doc, entry.mentions, entry.cand_sets, mode, rngs)
    return hard_document_scores(model, entry.doc, entry.mentions, entry.assignment, mode, rngs)


def _split_predictions(
    model: Model, entries: Mapping[str, _DocEntry], doc_ids: Sequence[str]
) -> dict[str, list[tuple[str, int, str, float]]]:
    scored = {}
    for doc_id in doc_ids:
        entry = entries[doc_id]
        ds = _doc_scores(model, entry, "eval")
        top_k = model.cfg.top_k_mentions if entry.assignment is None else None
        scored[doc_id] = model.scorer.predict_graph(ds, 0.0, top_k=top_k)
    return scored


def _dev_point(
    model: Model,
    entries: Mapping[str, _DocEntry],
    dev_ids: Sequence[str],
    fixed_threshold: float | None,
) -> tuple[float, float]:
    scored = _split_predictions(model, entries, dev_ids)
    gold = [AnnotationGraph(d, entries[d].gold_set) for d in dev_ids]
    if fixed_threshold is not None:
        thr, f1 = tune_threshold(scored, gold, grid=[fixed_threshold])
        return fixed_threshold, f1
    return tune_threshold(scored, gold)


def train(
    corpus: Corpus,
    candidate_sets: Mapping[str, list[CandidateSet]],
    split: Mapping[str, Sequence[str]],
    cfg: TrainConfig,
    linking: str = "joint",
    links=None,
    desc_vectors: np.ndarray | None = None,
    graph_vectors: np.ndarray | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[Model, TrainReport]:
    """Fit a model on the train split, early-stopping on dev micro-F1."""
    start = time.monotonic()
    if linking not in LINKING_MODES:
        raise UsageError(f"unknown linking mode {linking!r}; known: {', '.join(LINKING_MODES)}")
    train_ids = list(split.get("train", ()))
    dev_ids = list(split.get("dev", ()))
    if not train_ids:
        raise DataError("training split is empty")

    entries = _prepare_documents(
        corpus, candidate_sets, sorted(set(train_ids) | set(dev_ids)), cfg, linking, links
    )
    vocab = build_vocabulary((entries[d].doc for d in train_ids), cfg.min_count)
    model = build_model(corpus, vocab, cfg, desc_vectors, graph_vectors, linking_mode=linking)
    # the entity term reduces to a constant under hard linking: every linked
    # entity has document probability exactly 1
    alpha = cfg.entity_loss_weight if linking == "joint" else 0.0
    fixed_threshold = cfg.threshold if 0.0 <= cfg.threshold <= 1.0 else None

    trainable = [d for d in train_ids if entries[d].gold]
    if not trainable:
        raise DataError("no training document carries tuple annotations")

    adam = nd.AdamState.for_params(model.params, lr=cfg.lr)
    data_rng = stream(cfg.seed, "data_order")
    neg_rng = stream(cfg.seed, "negatives")
    drop_rngs = {
        "dropout": stream(cfg.seed, "dropout"),
        "word_dropout": stream(cfg.seed, "word_dropout"),
    }

    report = TrainReport()
    best_state: dict[str, np.ndarray] | None = None
    best_f1 = -1.0
    best_threshold = fixed_threshold if fixed_threshold is not None else 0.5
    evals_since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        order = [trainable[i] for i in data_rng.permutation(len(trainable))]
        losses = []
        for chunk_start in range(0, len(order), cfg.batch_size):
            chunk = order[chunk_start : chunk_start + cfg.batch_size]
            model.params.zero_grads()
            stepped = False
            for doc_id in chunk:
                entry = entries[doc_id]
                negatives = sample_negative_tuples(
                    entry.gold_set, entry.neg_entities, len(model.relations),
                    cfg.neg_samples, neg_rng,
                )
                try:
                    with nd.Tape() as tape:
                        ds = _doc_scores(model, entry, "train", drop_rngs)
                        loss = document_loss(model, ds, entry.gold, negatives, alpha)
                        if loss is None:
                            continue
                        scaled = nd.mul_const(loss, 1.0 / len(chunk))
                    if not np.all(np.isfinite(loss.data)):
                        raise NumericalError("non-finite loss")
                    tape.backward(scaled)
                except NumericalError as e:
                    raise NumericalError(f"training aborted at document {doc_id!r}: {e}") from e
                losses.append(float(loss.data))
                stepped = True
            if stepped:
                try:
                    nd.adam_step(model.params, adam)
                except NumericalError as e:
                    raise NumericalError(f"training aborted at document {doc_id!r}: {e}") from e
        report.epochs_run = epoch
        report.train_loss.append(float(np.mean(losses)) if losses else 0.0)
        if log:
            log(f"epoch {epoch}: train loss {report.train_loss[-1]:.6f}")

        if dev_ids and epoch % cfg.eval_every == 0:
            thr, f1 = _dev_point(model, entries, dev_ids, fixed_threshold)
            report.dev_epochs.append(epoch)
            report.dev_f1.append(f1)
            if log:
                log(f"epoch {epoch}: dev f1 {f1:.4f} at threshold {thr:.2f}")
            if f1 > best_f1:
                best_f1 = f1
                best_threshold = thr
                report.best_epoch = epoch
                best_state = {name: p.data.copy() for name, p in model.params.items()}
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= cfg.patience:
                    if log:
                        log(f"stopping early after epoch {epoch}")
                    break

    if best_state is not None:
        for name, p in model.params.items():
            p.data[...] = best_state[name]
    model.threshold = best_threshold
    report.best_dev_f1 = max(best_f1, 0.0)
    report.threshold = model.threshold
    report.wall_seconds = time.monotonic() - start
    return model, report


# ---------------------------------------------------------------------------
# model serialization: a JSON description plus a binary parameter checkpoint


def save_model(model: Model, meta_path, ckpt_path) -> None:
    meta = {
        "config": {k: getattr(model.cfg, k) for k in model.cfg.__dataclass_fields__},
        "vocab": [tok for tok, _ in sorted(model.vocab.index.items(), key=lambda kv: kv[1])],
        "entity_ids": model.entity_ids,
        "entity_types": model.entity_types,
        "types": model.types,
        "relations": model.relations,
        "threshold": model.threshold,
        "linking_mode": model.linking_mode,
        "desc_dim": None if model.scorer.desc_vectors is None else int(model.scorer.desc_vectors.shape[1]),
        "graph_dim": None if model.scorer.graph_vectors is None else int(model.scorer.graph_vectors.shape[1]),
    }
    Path(meta_path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    nd.save_checkpoint(ckpt_path, model.params)


def load_model(
    meta_path,
    ckpt_path,
    desc_vectors: np.ndarray | None = None,
    graph_vectors: np.ndarray | None = None,
) -> Model:
    meta_path = Path(meta_path)
    if not meta_path.is_file():
        raise DataError(f"model description not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{meta_path}: not valid JSON ({e})") from None
    required = ("config", "vocab", "entity_ids", "entity_types", "types", "relations",
                "threshold", "linking_mode", "desc_dim", "graph_dim")
    missing = [k for k in required if k not in meta]
    if missing:
        raise DataError(f"{meta_path}: missing keys: {', '.join(missing)}")
    cfg = TrainConfig(**meta["config"])
    cfg.validate()
    for kind, dim, given in (
        ("description", meta["desc_dim"], desc_vectors),
        ("graph", meta["graph_dim"], graph_vectors),
    ):
        if dim is None and given is not None:
            raise DataError(f"model was trained without {kind} vectors but some were supplied")
        if dim is not None:
            if given is None:
                raise DataError(f"model was trained with {kind} vectors; supply them to load it")
            if given.shape != (len(meta["entity_ids"]), dim):
                raise DataError(
                    f"{kind} vectors have shape {given.shape}, "
                    f"expected {(len(meta['entity_ids']), dim)}"
                )
    vocab = Vocabulary(
        index={tok: i for i, tok in enumerate(meta["vocab"])},
        unk_index=0,
        min_count=cfg.min_count,
    )
    model = assemble_model(
        cfg, vocab, meta["entity_ids"], meta["entity_types"], meta["types"],
        meta["relations"], desc_vectors, graph_vectors, meta["linking_mode"],
    )
    model.threshold = float(meta["threshold"])
    loaded, _ = nd.load_checkpoint(ckpt_path)
    if set(loaded.names()) != set(model.params.names()):
        raise DataError(f"{ckpt_path}: checkpoint parameters do not match the model description")
    for name, p in model.params.items():
        source = loaded[name].data
        if source.shape != p.data.shape:
            raise DataError(
                f"{ckpt_path}: parameter {name!r} has shape {source.shape}, "
                f"expected {p.data.shape}"
            )
        p.data[...] = source
    return model
