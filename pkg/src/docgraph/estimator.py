"""Estimator-style interface: fit on a corpus, predict tuple sets per document.

Wraps the training loop and both inference paths (joint linking and the
hard-link pipeline) behind the familiar fit/predict surface so the extractor
composes with model-selection tooling.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .corpus import Corpus
from .errors import DataError, UsageError
from .evaluator import micro_prf, pipeline_baseline
from .trainer import predict_documents, train

_CONFIG_KEYS = tuple(TrainConfig.__dataclass_fields__)


class GraphExtractor(BaseEstimator):
    """Document-to-tuple extractor with soft (joint) or hard entity linking.

    Constructor arguments mirror the training configuration keys one to one;
    `linking` selects how mentions bind to entities: "joint" learns soft
    linking distributions alongside relation scoring, "top_candidate" pins
    each mention to its rank-1 candidate, "external" takes links from a
    supplied mapping.
    """

    def __init__(
        self,
        linking: str = "joint",
        embed_dim: int = 128,
        blocks: int = 4,
        heads: int = 2,
        keep_input: float = 0.25,
        keep_attention: float = 0.25,
        keep_dense: float = 0.15,
        keep_word: float = 0.2,
        pos_tuple_weight: float = 5.0,
        pos_entity_weight: float = 2.0,
        entity_loss_weight: float = 0.1,
        neg_samples: int = 100,
        top_k_mentions: int = 15,
        max_candidates: int = 25,
        batch_size: int = 4,
        lr: float = 0.001,
        epochs: int = 50,
        patience: int = 10,
        eval_every: int = 1,
        seed: int = 0,
        min_count: int = 2,
        max_tokens: int = 512,
        threshold: float = -1.0,
    ):
        self.linking = linking
        self.embed_dim = embed_dim
        self.blocks = blocks
        self.heads = heads
        self.keep_input = keep_input
        self.keep_attention = keep_attention
        self.keep_dense = keep_dense
        self.keep_word = keep_word
        self.pos_tuple_weight = pos_tuple_weight
        self.pos_entity_weight = pos_entity_weight
        self.entity_loss_weight = entity_loss_weight
        self.neg_samples = neg_samples
        self.top_k_mentions = top_k_mentions
        self.max_candidates = max_candidates
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.patience = patience
        self.eval_every = eval_every
        self.seed = seed
        self.min_count = min_count
        self.max_tokens = max_tokens
        self.threshold = threshold

    def _config(self) -> TrainConfig:
        cfg = TrainConfig(**{k: getattr(self, k) for k in _CONFIG_KEYS})
        cfg.validate()
        return cfg

    def fit(
        self,
        corpus: Corpus,
        candidate_sets: Mapping[str, list],
        split: Mapping[str, Sequence[str]],
        links: Mapping[tuple[str, int], str] | None = None,
        desc_vectors: np.ndarray | None = None,
        graph_vectors: np.ndarray | None = None,
    ) -> "GraphExtractor":
        """Train on split["train"], early-stop and tune the threshold on split["dev"]."""
        cfg = self._config()
        model, report = train(
            corpus,
            candidate_sets,
            split,
            cfg,
            linking=self.linking,
            links=links,
            desc_vectors=desc_vectors,
            graph_vectors=graph_vectors,
        )
        self.model_ = model
        self.report_ = report
        self.threshold_ = model.threshold
        return self

    def _scored(self, corpus, candidate_sets, doc_ids, links, threshold):
        check_is_fitted(self, "model_")
        doc_ids = list(doc_ids)
        missing = [d for d in doc_ids if d not in candidate_sets]
        if missing:
            raise DataError(f"no candidate sets for documents: {', '.join(missing[:5])}")
        if self.linking == "joint":
            return predict_documents(
                self.model_, corpus, candidate_sets, doc_ids, threshold=threshold
            )
        if self.linking == "external" and links is None:
            raise UsageError("external linking needs the link mapping at predict time")
        return pipeline_baseline(
            self.model_, corpus, candidate_sets, doc_ids,
            policy=self.linking, links=links, threshold=threshold,
        )

    def predict_scored(
        self,
        corpus: Corpus,
        candidate_sets: Mapping[str, list],
        doc_ids: Iterable[str],
        links=None,
        threshold: float | None = None,
    ) -> dict[str, list[tuple[str, int, str, float]]]:
        """Scored tuples per document, sorted by descending probability."""
        return self._scored(corpus, candidate_sets, doc_ids, links, threshold)

    def predict(
        self,
        corpus: Corpus,
        candidate_sets: Mapping[str, list],
        doc_ids: Iterable[str],
        links=None,
    ) -> dict[str, set[tuple[str, int, str]]]:
        """Thresholded tuple sets per document."""
        scored = self._scored(corpus, candidate_sets, doc_ids, links, None)
        return {d: {(h, r, t) for h, r, t, _ in rows} for d, rows in scored.items()}

    def score(
        self,
        corpus: Corpus,
        candidate_sets: Mapping[str, list],
        doc_ids: Iterable[str],
        links=None,
    ) -> float:
        """Micro-F1 of the thresholded predictions against the corpus annotations."""
        doc_ids = list(doc_ids)
        preds = self.predict(corpus, candidate_sets, doc_ids, links)
        gold = [corpus.annotation_of(d) for d in doc_ids]
        return micro_prf(preds, gold).f1
