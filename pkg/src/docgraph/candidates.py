"""Candidate entity generation by approximate string matching.

Mention and entity-name strings are normalized (lowercase, punctuation
stripped, Porter-stemmed), converted to tf-idf vectors over character
2..5-grams and word 1..2-grams, and matched by cosine similarity through an
inverted index. Retrieval is exact: rankings equal brute-force cosine over
every indexed name string.
"""

from __future__ import annotations

import string
import warnings
from dataclasses import dataclass
from math import log, sqrt
from typing import Optional

from .corpus import Corpus, KnowledgeBase, Mention, _read_lines
from .errors import DataError, FormatError, UsageError
from .stem import porter_stem

CHAR_NGRAM_SIZES = (2, 3, 4, 5)
WORD_NGRAM_SIZES = (1, 2)

_PUNCT = set(string.punctuation)


def normalize(surface: str) -> str:
    """Lowercase, strip punctuation, stem each whitespace token."""
    cleaned = "".join(" " if ch in _PUNCT else ch for ch in surface.lower())
    return " ".join(porter_stem(tok) for tok in cleaned.split())


def ngram_features(normalized: str) -> dict[tuple[str, str], int]:
    """Raw counts of character and word n-grams; spaces kept in char grams."""
    counts: dict[tuple[str, str], int] = {}
    for n in CHAR_NGRAM_SIZES:
        for i in range(len(normalized) - n + 1):
            key = ("c", normalized[i : i + n])
            counts[key] = counts.get(key, 0) + 1
    words = normalized.split()
    for n in WORD_NGRAM_SIZES:
        for i in range(len(words) - n + 1):
            key = ("w", " ".join(words[i : i + n]))
            counts[key] = counts.get(key, 0) + 1
    return counts


@dataclass
class NGramVocabulary:
    index: dict[tuple[str, str], int]
    idf: list[float]
    document_count: int


@dataclass
class SparseVector:
    """Sorted (feature_index, weight) pairs with a cached L2 norm."""

    indices: list[int]
    weights: list[float]
    norm: float

    @classmethod
    def from_weights(cls, pairs: dict[int, float]) -> "SparseVector":
        items = sorted((i, w) for i, w in pairs.items() if w != 0.0)
        indices = [i for i, _ in items]
        weights = [w for _, w in items]
        return cls(indices, weights, sqrt(sum(w * w for w in weights)))

    def unit(self) -> "SparseVector":
        if self.norm == 0.0:
            return SparseVector([], [], 0.0)
        scaled = [w / self.norm for w in self.weights]
        return SparseVector(list(self.indices), scaled, sqrt(sum(w * w for w in scaled)))

    def dot(self, other: "SparseVector") -> float:
        """Merge-based dot product, accumulated in increasing feature order."""
        total = 0.0
        i = j = 0
        a_idx, b_idx = self.indices, other.indices
        while i < len(a_idx) and j < len(b_idx):
            if a_idx[i] == b_idx[j]:
                total += self.weights[i] * other.weights[j]
                i += 1
                j += 1
            elif a_idx[i] < b_idx[j]:
                i += 1
            else:
                j += 1
        return total

    def __len__(self) -> int:
        return len(self.indices)


def featurize(normalized: str, vocab: NGramVocabulary) -> SparseVector:
    """tf-idf vector for a normalized string; features outside vocab dropped."""
    weights: dict[int, float] = {}
    for key, count in ngram_features(normalized).items():
        idx = vocab.index.get(key)
        if idx is not None:
            weights[idx] = count * vocab.idf[idx]
    return SparseVector.from_weights(weights)


@dataclass
class CandidateIndex:
    vocab: NGramVocabulary
    # one entry per indexed name string, sorted by (entity_id, name order)
    entry_entity: list[str]
    entry_vectors: list[SparseVector]  # unit-normalized
    postings: dict[int, list[tuple[int, float]]]  # feature -> [(entry, weight)]

    @property
    def entity_ids(self) -> list[str]:
        return sorted(set(self.entry_entity))


@dataclass
class CandidateSet:
    mention: Optional[Mention]
    candidates: list[tuple[str, float]]  # ranked (entity_id, cosine), best first

    def entity_ids(self, k: Optional[int] = None) -> list[str]:
        pool = self.candidates if k is None else self.candidates[:k]
        return [e for e, _ in pool]


def build_index(kb: KnowledgeBase) -> CandidateIndex:
    """Index every non-empty normalized name/synonym of every entity."""
    entry_entity: list[str] = []
    entry_norms: list[str] = []
    for entity_id in sorted(kb.entities):
        entity = kb.entities[entity_id]
        seen: set[str] = set()
        for name in entity.names:
            norm = normalize(name)
            if not norm or norm in seen:
                continue
            seen.add(norm)
            entry_entity.append(entity_id)
            entry_norms.append(norm)
        if not seen:
            warnings.warn(
                f"entity {entity_id} has no non-empty normalized name; excluded from index"
            )
    if not entry_norms:
        raise DataError("knowledge base has no entity with a non-empty normalized name")

    document_count = len(entry_norms)
    df: dict[tuple[str, str], int] = {}
    per_entry_counts = []
    for norm in entry_norms:
        counts = ngram_features(norm)
        per_entry_counts.append(counts)
        for key in counts:
            df[key] = df.get(key, 0) + 1
    index = {key: i for i, key in enumerate(sorted(df))}
    idf = [0.0] * len(index)
    for key, i in index.items():
        idf[i] = log((1.0 + document_count) / (1.0 + df[key])) + 1.0
    vocab = NGramVocabulary(index=index, idf=idf, document_count=document_count)

    entry_vectors = []
    postings: dict[int, list[tuple[int, float]]] = {}
    for entry_idx, counts in enumerate(per_entry_counts):
        vec = SparseVector.from_weights(
            {index[key]: count * idf[index[key]] for key, count in counts.items()}
        ).unit()
        entry_vectors.append(vec)
        for fidx, weight in zip(vec.indices, vec.weights):
            postings.setdefault(fidx, []).append((entry_idx, weight))
    return CandidateIndex(vocab, entry_entity, entry_vectors, postings)


def query_top_c(mention_surface: str, index: CandidateIndex, c: int) -> CandidateSet:
    """Top-c entities by cosine; best synonym wins; ties break on entity_id."""
    if c < 1:
        raise UsageError(f"candidate count must be >= 1, got {c}")
    query = featurize(normalize(mention_surface), index.vocab).unit()
    if len(query) == 0:
        return CandidateSet(None, [])
    scores: dict[int, float] = {}
    # iterate query features in increasing index order so per-entry sums
    # accumulate in the same order as a merge-based dot product
    for fidx, qweight in zip(query.indices, query.weights):
        for entry_idx, eweight in index.postings.get(fidx, ()):
            scores[entry_idx] = scores.get(entry_idx, 0.0) + qweight * eweight
    best: dict[str, float] = {}
    for entry_idx, score in scores.items():
        entity_id = index.entry_entity[entry_idx]
        score = min(score, 1.0)
        if entity_id not in best or score > best[entity_id]:
            best[entity_id] = score
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:c]
    return CandidateSet(None, ranked)


def generate_candidate_sets(
    corpus: Corpus, index: CandidateIndex, c: int
) -> dict[str, list[CandidateSet]]:
    """Per-document candidate sets in canonical mention order."""
    out: dict[str, list[CandidateSet]] = {}
    for doc in corpus.documents:
        sets = []
        for mention in corpus.mentions_of(doc.doc_id):
            cs = query_top_c(mention.surface, index, c)
            sets.append(CandidateSet(mention, cs.candidates))
        out[doc.doc_id] = sets
    return out


def candidate_recall_at_k(
    candidate_sets: dict[tuple[str, int], CandidateSet],
    gold_links: dict[tuple[str, int], str],
    k: int,
) -> float:
    """Fraction of gold-linked mentions whose entity is in the top-k candidates."""
    if k < 1:
        raise UsageError(f"recall cutoff k must be >= 1, got {k}")
    if not gold_links:
        return 0.0
    hits = 0
    for key, entity_id in gold_links.items():
        cs = candidate_sets.get(key)
        if cs is not None and entity_id in cs.entity_ids(k):
            hits += 1
    return hits / len(gold_links)


# ---------------------------------------------------------------------------
# candidate file IO: doc_id, mention_index, rank, entity_id, score


def write_candidates(candidate_sets: dict[str, list[CandidateSet]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id in sorted(candidate_sets):
            for mention_index, cs in enumerate(candidate_sets[doc_id]):
                for rank, (entity_id, score) in enumerate(cs.candidates):
                    f.write(f"{doc_id}\t{mention_index}\t{rank}\t{entity_id}\t{score!r}\n")


def read_candidates(path, corpus: Optional[Corpus] = None) -> dict[str, list[CandidateSet]]:
    """Rebuild candidate sets from a candidate file.

    When a corpus is given, rows are validated against its mentions and every
    mention receives a (possibly empty) CandidateSet.
    """
    rows: dict[str, dict[int, list[tuple[int, str, float]]]] = {}
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(
                f"expected 5 tab-separated fields for candidate, got {len(parts)}",
                path=path,
                line=lineno,
            )
        doc_id, mention_index, rank, entity_id, score = parts
        try:
            m_idx, r_idx, s_val = int(mention_index), int(rank), float(score)
        except ValueError:
            raise FormatError("bad integer/float field in candidate row", path=path, line=lineno) from None
        rows.setdefault(doc_id, {}).setdefault(m_idx, []).append((r_idx, entity_id, s_val))

    out: dict[str, list[CandidateSet]] = {}
    doc_ids = [d.doc_id for d in corpus.documents] if corpus is not None else sorted(rows)
    for doc_id in doc_ids:
        mentions = corpus.mentions_of(doc_id) if corpus is not None else None
        per_mention = rows.get(doc_id, {})
        count = len(mentions) if mentions is not None else (max(per_mention) + 1 if per_mention else 0)
        if mentions is not None:
            for m_idx in per_mention:
                if m_idx >= count:
                    raise DataError(
                        f"candidate file references mention {m_idx} of doc {doc_id!r} "
                        f"but the corpus has only {count} mentions"
                    )
        sets = []
        for m_idx in range(count):
            ranked = sorted(per_mention.get(m_idx, []))
            sets.append(
                CandidateSet(
                    mentions[m_idx] if mentions is not None else None,
                    [(e, s) for _, e, s in ranked],
                )
            )
        out[doc_id] = sets
    return out
