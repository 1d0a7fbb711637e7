"""Tuple-set metrics, oracle recall, linking evaluation, and the hard-link baseline.

All tuple metrics are micro-averaged: true/false positive/negative counts are
pooled across documents before computing precision, recall and F1. Per-document
figures are kept alongside so external tooling can run significance tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import ndtensor as nd
from .candidates import CandidateSet
from .corpus import AnnotationGraph
from .errors import DataError, UsageError
from .scorer import DocScores

ORACLE_POLICIES = ("top1", "topc", "external")
LINK_POLICIES = ("top_candidate", "external")


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class MetricReport:
    """Micro-averaged counts and rates, with per-document breakdowns."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    per_document: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp, fp, fn, per_document=None) -> "MetricReport":
        p, r, f1 = _prf(tp, fp, fn)
        return cls(tp, fp, fn, p, r, f1, per_document or {})

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_document": {d: {"precision": v[0], "recall": v[1], "f1": v[2]}
                             for d, v in sorted(self.per_document.items())},
        }

    def table(self, title: str = "metrics") -> str:
        rows = [
            ("precision", f"{self.precision:.4f}"),
            ("recall", f"{self.recall:.4f}"),
            ("f1", f"{self.f1:.4f}"),
            ("tp", str(self.tp)),
            ("fp", str(self.fp)),
            ("fn", str(self.fn)),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [title] + [f"  {name.ljust(width)}  {value}" for name, value in rows]
        return "\n".join(lines)


def _gold_by_doc(gold_graphs: Iterable[AnnotationGraph]) -> dict[str, frozenset]:
    gold: dict[str, frozenset] = {}
    for g in gold_graphs:
        if g.doc_id in gold:
            raise DataError(f"duplicate gold annotation for document {g.doc_id!r}")
        gold[g.doc_id] = g.tuples
    return gold


def micro_prf(
    predictions: Mapping[str, Iterable[tuple[str, int, str]]],
    gold_graphs: Iterable[AnnotationGraph],
) -> MetricReport:
    """Pooled tuple precision/recall/F1; a match needs all three components equal.

    Documents absent from `predictions` count as predicting nothing;
    predictions for documents without gold annotations are an error.
    """
    gold = _gold_by_doc(gold_graphs)
    stray = sorted(set(predictions) - set(gold))
    if stray:
        raise DataError(f"predictions for unknown documents: {', '.join(stray)}")
    tp = fp = fn = 0
    per_document = {}
    for doc_id in sorted(gold):
        pred = set(predictions.get(doc_id, ()))
        g = gold[doc_id]
        doc_tp = len(pred & g)
        doc_fp = len(pred - g)
        doc_fn = len(g - pred)
        tp += doc_tp
        fp += doc_fp
        fn += doc_fn
        per_document[doc_id] = _prf(doc_tp, doc_fp, doc_fn)
    return MetricReport.from_counts(tp, fp, fn, per_document)


# ---------------------------------------------------------------------------
# oracle recall: the recall ceiling imposed by entity reachability alone


@dataclass
class OracleReport:
    """Tuple recall ceiling per linking policy."""

    recalls: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(sorted(self.recalls.items()))

    def table(self) -> str:
        lines = ["oracle tuple recall"]
        width = max((len(name) for name in self.recalls), default=0)
        for name, value in sorted(self.recalls.items()):
            lines.append(f"  {name.ljust(width)}  {value:.4f}")
        return "\n".join(lines)


def _reachable_entities(
    doc_id: str,
    candidate_sets: list[CandidateSet],
    policy: str,
    c: int,
    links: Mapping[tuple[str, int], str] | None,
) -> set[str]:
    if policy == "top1":
        return {cs.candidates[0][0] for cs in candidate_sets if cs.candidates}
    if policy == "topc":
        return {e for cs in candidate_sets for e in cs.entity_ids(c)}
    if policy == "external":
        if links is None:
            raise UsageError("external oracle policy requires a link file")
        return {e for (d, _), e in links.items() if d == doc_id}
    raise UsageError(f"unknown oracle policy {policy!r}; known: {', '.join(ORACLE_POLICIES)}")


def oracle_recall(
    candidate_sets: Mapping[str, list[CandidateSet]],
    gold_graphs: Iterable[AnnotationGraph],
    policy: str,
    c: int = 1,
    links: Mapping[tuple[str, int], str] | None = None,
) -> float:
    """Fraction of gold tuples whose head AND tail are reachable in their document."""
    if policy not in ORACLE_POLICIES:
        raise UsageError(f"unknown oracle policy {policy!r}; known: {', '.join(ORACLE_POLICIES)}")
    if policy == "topc" and c < 1:
        raise UsageError(f"oracle cutoff c must be >= 1, got {c}")
    total = hits = 0
    for g in gold_graphs:
        reach = _reachable_entities(g.doc_id, candidate_sets.get(g.doc_id, []), policy, c, links)
        for head, _, tail in g.tuples:
            total += 1
            if head in reach and tail in reach:
                hits += 1
    return hits / total if total else 0.0


# ---------------------------------------------------------------------------
# document-level linking evaluation


def linking_doc_eval(
    predicted: Mapping[str, Iterable[str]],
    gold: Mapping[str, Iterable[str]],
) -> MetricReport:
    """Micro P/R/F1 over per-document entity-set membership (set semantics)."""
    stray = sorted(set(predicted) - set(gold))
    if stray:
        raise DataError(f"predicted entity sets for unknown documents: {', '.join(stray)}")
    tp = fp = fn = 0
    per_document = {}
    for doc_id in sorted(gold):
        pred = set(predicted.get(doc_id, ()))
        g = set(gold[doc_id])
        doc_tp = len(pred & g)
        doc_fp = len(pred - g)
        doc_fn = len(g - pred)
        tp += doc_tp
        fp += doc_fp
        fn += doc_fn
        per_document[doc_id] = _prf(doc_tp, doc_fp, doc_fn)
    return MetricReport.from_counts(tp, fp, fn, per_document)


# ---------------------------------------------------------------------------
# hard-link pipeline baseline: one fixed entity per mention, relation scoring
# unchanged, linking factors replaced by 1/0 indicators


def hard_link_assignment(
    doc_id: str,
    candidate_sets: list[CandidateSet],
    policy: str,
    links: Mapping[tuple[str, int], str] | None = None,
) -> dict[int, str]:
    """Map mention index -> linked entity; unlinkable mentions are left out."""
    if policy == "top_candidate":
        return {i: cs.candidates[0][0] for i, cs in enumerate(candidate_sets) if cs.candidates}
    if policy == "external":
        if links is None:
            raise UsageError("external link policy requires a link file")
        return {
            i: links[(doc_id, i)]
            for i in range(len(candidate_sets))
            if (doc_id, i) in links
        }
    raise UsageError(f"unknown link policy {policy!r}; known: {', '.join(LINK_POLICIES)}")


def hard_document_scores(
    model,
    doc,
    mentions,
    assignment: Mapping[int, str],
    mode: str = "eval",
    rngs=None,
) -> DocScores:
    """Score one document with each linked mention pinned to its assigned entity.

    The linking matrix is a constant column of ones (each linked mention has
    exactly its assigned entity as candidate with probability 1), so pooled
    tuple probabilities reduce to the smax of the supported relation
    probabilities and no gradient reaches the linking parameters.
    """
    for m_idx, entity_id in assignment.items():
        if entity_id not in model.scorer.entity_row:
            raise DataError(
                f"document {doc.doc_id!r}: link target {entity_id!r} is not in the entity table"
            )
        if not 0 <= m_idx < len(mentions):
            raise DataError(
                f"document {doc.doc_id!r}: link for mention {m_idx} but the document has "
                f"{len(mentions)} mentions"
            )
    encoding = model.encode_document(doc, mode, rngs)
    linked = sorted(assignment)
    scores = DocScores(
        doc_id=doc.doc_id,
        mentions=list(mentions),
        scoreable=linked,
        candidate_ids=[[assignment[i]] for i in linked],
        c_max=1 if linked else 0,
        doc_rep=model.scorer.doc_representation(encoding),
        linking=nd.Tensor(np.ones((len(linked), 1))) if linked else None,
        relation=None,
    )
    for ordinal, m_idx in enumerate(linked):
        scores.entity_mentions.setdefault(assignment[m_idx], []).append((ordinal, ordinal))
    if len(linked) >= 2:
        starts = np.asarray([mentions[i].start_token for i in linked])
        if starts.max() >= encoding.data.shape[0]:
            raise DataError(f"document {doc.doc_id!r}: mention start beyond the encoded length")
        mention_reps = nd.take_rows(encoding, starts)
        scores.relation, scores.pair_row = model.scorer.relation_probabilities(
            mention_reps, mode, rngs
        )
    return scores


def pipeline_baseline(
    model,
    corpus,
    candidate_sets: Mapping[str, list[CandidateSet]],
    doc_ids: Iterable[str],
    policy: str = "top_candidate",
    links: Mapping[tuple[str, int], str] | None = None,
    threshold: float | None = None,
) -> dict[str, list[tuple[str, int, str, float]]]:
    """Predicted scored tuples per document under a hard linking policy."""
    thr = model.threshold if threshold is None else threshold
    out: dict[str, list[tuple[str, int, str, float]]] = {}
    for doc_id in doc_ids:
        doc = corpus.document(doc_id)
        mentions = corpus.mentions_of(doc_id)
        sets = candidate_sets.get(doc_id)
        if sets is None:
            raise DataError(f"no candidate sets for document {doc_id!r}")
        assignment = hard_link_assignment(doc_id, sets, policy, links)
        ds = hard_document_scores(model, doc, mentions, assignment)
        out[doc_id] = model.scorer.predict_graph(ds, thr)
    return out
