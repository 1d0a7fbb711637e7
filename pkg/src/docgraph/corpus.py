"""Data model and ingestion: documents, mentions, knowledge base, annotations.

All record files are UTF-8 TSV, one record per line; tabs and newlines are
forbidden inside field values. The knowledge-base file starts with two header
lines declaring the type and relation vocabularies.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import DataError, FormatError

DEFAULT_MAX_TOKENS = 512
UNK_TOKEN = "<unk>"

_PUNCT = set(string.punctuation)


class Token(NamedTuple):
    surface: str
    char_start: int
    char_end: int  # exclusive


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    abstract: str
    tokens: tuple[Token, ...]

    @property
    def text(self) -> str:
        return source_text(self.title, self.abstract)

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True, order=True)
class Mention:
    doc_id: str
    start_token: int
    end_token: int  # inclusive
    surface: str
    source: str = "unknown"


@dataclass(frozen=True)
class Entity:
    entity_id: str
    canonical_name: str
    synonyms: tuple[str, ...]
    type_id: int

    @property
    def names(self) -> tuple[str, ...]:
        return (self.canonical_name,) + self.synonyms


@dataclass
class KnowledgeBase:
    entities: dict[str, Entity]
    types: list[str]
    relations: list[str]

    def __post_init__(self):
        if not self.relations:
            raise DataError("knowledge base declares no relations")
        for ent in self.entities.values():
            if not 0 <= ent.type_id < len(self.types):
                raise DataError(
                    f"entity {ent.entity_id} has type_id {ent.type_id} "
                    f"but only {len(self.types)} types are declared"
                )

    def relation_index(self, name: str) -> int:
        try:
            return self.relations.index(name)
        except ValueError:
            raise DataError(f"unknown relation name {name!r}") from None


@dataclass(frozen=True)
class AnnotationGraph:
    """Per-document gold tuple set; the entity set is always derived."""

    doc_id: str
    tuples: frozenset[tuple[str, int, str]]

    @property
    def entity_set(self) -> frozenset[str]:
        return frozenset(e for h, _, t in self.tuples for e in (h, t))


@dataclass
class Vocabulary:
    index: dict[str, int]
    unk_index: int
    min_count: int

    def __len__(self) -> int:
        return len(self.index)

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.unk_index)

    def encode(self, document: Document) -> list[int]:
        return [self.lookup(t.surface) for t in document.tokens]


@dataclass
class Corpus:
    documents: list[Document]
    mentions: list[Mention]
    kb: KnowledgeBase
    annotations: list[AnnotationGraph]
    _doc_index: dict[str, Document] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._doc_index = {d.doc_id: d for d in self.documents}

    def document(self, doc_id: str) -> Document:
        return self._doc_index[doc_id]

    def mentions_of(self, doc_id: str) -> list[Mention]:
        """Mentions of one document in canonical (sorted) order."""
        return sorted(m for m in self.mentions if m.doc_id == doc_id)

    def annotation_of(self, doc_id: str) -> AnnotationGraph:
        for g in self.annotations:
            if g.doc_id == doc_id:
                return g
        return AnnotationGraph(doc_id, frozenset())


# ---------------------------------------------------------------------------
# tokenization


def source_text(title: str, abstract: str) -> str:
    if title and abstract:
        return title + " " + abstract
    return title + abstract


def _split_runs(chunk: str, offset: int) -> list[Token]:
    """Split one whitespace-free chunk into maximal punctuation / non-punctuation runs."""
    tokens = []
    i = 0
    while i < len(chunk):
        is_punct = chunk[i] in _PUNCT
        j = i
        while j < len(chunk) and (chunk[j] in _PUNCT) == is_punct:
            j += 1
        tokens.append(Token(chunk[i:j], offset + i, offset + j))
        i = j
    return tokens


def _tokenize_text(text: str, offset: int = 0) -> list[Token]:
    tokens = []
    i = 0
    while i < len(text):
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < len(text) and not text[j].isspace():
            j += 1
        tokens.extend(_split_runs(text[i:j], offset + i))
        i = j
    return tokens


def tokenize(
    title: str,
    abstract: str,
    doc_id: str = "",
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> Document:
    """Tokenize a title/abstract pair; truncates from the abstract end."""
    if not title and not abstract:
        raise DataError(f"document {doc_id!r}: empty title and empty abstract")
    tokens = _tokenize_text(title, 0)
    if abstract:
        abstract_offset = len(title) + 1 if title else 0
        tokens.extend(_tokenize_text(abstract, abstract_offset))
    return Document(doc_id, title, abstract, tuple(tokens[:max_tokens]))


# ---------------------------------------------------------------------------
# vocabulary


def build_vocabulary(documents: Iterable[Document], min_count: int = 2) -> Vocabulary:
    counts = Counter(t.surface for d in documents for t in d.tokens)
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count and tok != UNK_TOKEN),
        key=lambda tok: (-counts[tok], tok),
    )
    index = {UNK_TOKEN: 0}
    for tok in kept:
        index[tok] = len(index)
    return Vocabulary(index=index, unk_index=0, min_count=min_count)


# ---------------------------------------------------------------------------
# file IO


def _read_lines(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if line:
                yield lineno, line


def _fields(path, lineno, line, arity, what):
    parts = line.split("\t")
    if len(parts) != arity:
        raise FormatError(
            f"expected {arity} tab-separated fields for {what}, got {len(parts)}",
            path=path,
            line=lineno,
        )
    return parts


def _check_text_field(value, path, lineno):
    if "\t" in value or "\n" in value:
        raise FormatError("tabs/newlines forbidden in text fields", path=path, line=lineno)
    return value


def read_documents(path, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[Document]:
    docs = []
    seen = set()
    for lineno, line in _read_lines(path):
        doc_id, title, abstract = _fields(path, lineno, line, 3, "document")
        if doc_id in seen:
            raise FormatError(f"duplicate doc_id {doc_id!r}", path=path, line=lineno)
        seen.add(doc_id)
        try:
            docs.append(tokenize(title, abstract, doc_id=doc_id, max_tokens=max_tokens))
        except DataError as exc:
            raise FormatError(str(exc), path=path, line=lineno) from exc
    return docs


def write_documents(documents: Iterable[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in documents:
            f.write(f"{d.doc_id}\t{d.title}\t{d.abstract}\n")


def read_mentions(paths, documents: Iterable[Document]) -> list[Mention]:
    """Load one or more mention files and union their records."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    doc_len = {d.doc_id: len(d) for d in documents}
    out: set[Mention] = set()
    for path in paths:
        for lineno, line in _read_lines(path):
            doc_id, start, end, surface, source = _fields(path, lineno, line, 5, "mention")
            if doc_id not in doc_len:
                raise FormatError(f"mention references unknown doc_id {doc_id!r}", path=path, line=lineno)
            try:
                start_i, end_i = int(start), int(end)
            except ValueError:
                raise FormatError("mention token indices must be integers", path=path, line=lineno) from None
            if not 0 <= start_i <= end_i < doc_len[doc_id]:
                raise FormatError(
                    f"mention span [{start_i},{end_i}] out of range for doc {doc_id!r} "
                    f"({doc_len[doc_id]} tokens)",
                    path=path,
                    line=lineno,
                )
            out.add(Mention(doc_id, start_i, end_i, surface, source))
    return sorted(out)


def write_mentions(mentions: Iterable[Mention], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for m in sorted(mentions):
            f.write(f"{m.doc_id}\t{m.start_token}\t{m.end_token}\t{m.surface}\t{m.source}\n")


def read_kb(path) -> KnowledgeBase:
    types: list[str] = []
    relations: list[str] = []
    entities: dict[str, Entity] = {}
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if parts[0] == "#types":
            types = parts[1:]
            continue
        if parts[0] == "#relations":
            relations = parts[1:]
            continue
        if not types or not relations:
            raise FormatError(
                "#types and #relations headers must precede entity records",
                path=path,
                line=lineno,
            )
        if len(parts) != 4:
            raise FormatError(
                f"expected 4 tab-separated fields for entity, got {len(parts)}",
                path=path,
                line=lineno,
            )
        entity_id, type_name, canonical, syn_field = parts
        if entity_id in entities:
            raise FormatError(f"duplicate entity_id {entity_id!r}", path=path, line=lineno)
        if type_name not in types:
            raise FormatError(f"undeclared type {type_name!r}", path=path, line=lineno)
        synonyms = tuple(s for s in syn_field.split("|") if s)
        entities[entity_id] = Entity(entity_id, canonical, synonyms, types.index(type_name))
    if not relations:
        raise FormatError("missing #relations header", path=path)
    return KnowledgeBase(entities=entities, types=types, relations=relations)


def write_kb(kb: KnowledgeBase, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("#types\t" + "\t".join(kb.types) + "\n")
        f.write("#relations\t" + "\t".join(kb.relations) + "\n")
        for entity_id in sorted(kb.entities):
            e = kb.entities[entity_id]
            f.write(
                f"{e.entity_id}\t{kb.types[e.type_id]}\t{e.canonical_name}\t"
                + "|".join(e.synonyms)
                + "\n"
            )


def read_annotations(path, kb: KnowledgeBase, documents: Iterable[Document]) -> list[AnnotationGraph]:
    """One AnnotationGraph per document, empty when the document has no tuples."""
    doc_ids = [d.doc_id for d in documents]
    known = set(doc_ids)
    tuples: dict[str, set[tuple[str, int, str]]] = {d: set() for d in doc_ids}
    for lineno, line in _read_lines(path):
        doc_id, head, rel_name, tail = _fields(path, lineno, line, 4, "annotation")
        if doc_id not in known:
            raise FormatError(f"annotation references unknown doc_id {doc_id!r}", path=path, line=lineno)
        for ent in (head, tail):
            if ent not in kb.entities:
                raise FormatError(
                    f"annotation references entity {ent!r} absent from the knowledge base",
                    path=path,
                    line=lineno,
                )
        if rel_name not in kb.relations:
            raise FormatError(f"undeclared relation {rel_name!r}", path=path, line=lineno)
        tuples[doc_id].add((head, kb.relations.index(rel_name), tail))
    return [AnnotationGraph(doc_id, frozenset(tuples[doc_id])) for doc_id in doc_ids]


def write_annotations(annotations: Iterable[AnnotationGraph], kb: KnowledgeBase, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for g in annotations:
            for head, rel_idx, tail in sorted(g.tuples):
                f.write(f"{g.doc_id}\t{head}\t{kb.relations[rel_idx]}\t{tail}\n")


def read_split(path) -> list[str]:
    return [line for _, line in _read_lines(path)]


def write_split(doc_ids: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id in doc_ids:
            f.write(doc_id + "\n")


def read_links(path) -> dict[tuple[str, int], str]:
    """Hard links: (doc_id, mention_index) -> entity_id."""
    links = {}
    for lineno, line in _read_lines(path):
        doc_id, mention_index, entity_id = _fields(path, lineno, line, 3, "link")
        try:
            idx = int(mention_index)
        except ValueError:
            raise FormatError("mention_index must be an integer", path=path, line=lineno) from None
        links[(doc_id, idx)] = entity_id
    return links


def write_links(links: dict[tuple[str, int], str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for (doc_id, idx), entity_id in sorted(links.items()):
            f.write(f"{doc_id}\t{idx}\t{entity_id}\n")


def load_corpus(
    documents_path,
    mentions_paths,
    kb_path,
    annotations_path,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> Corpus:
    documents = read_documents(documents_path, max_tokens=max_tokens)
    kb = read_kb(kb_path)
    mentions = read_mentions(mentions_paths, documents)
    annotations = read_annotations(annotations_path, kb, documents)
    return Corpus(documents, mentions, kb, annotations)


def write_corpus(corpus: Corpus, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_documents(corpus.documents, outdir / "documents.tsv")
    write_mentions(corpus.mentions, outdir / "mentions.tsv")
    write_kb(corpus.kb, outdir / "kb.tsv")
    write_annotations(corpus.annotations, corpus.kb, outdir / "annotations.tsv")


# ---------------------------------------------------------------------------
# candidate-based annotation filtering


def filter_annotations_by_candidates(
    annotations: Iterable[AnnotationGraph],
    candidate_sets: dict[str, list],
    max_candidates: int,
) -> list[AnnotationGraph]:
    """Keep tuples whose head and tail are both candidates of some mention.

    candidate_sets maps doc_id -> list of per-mention CandidateSet objects
    (anything with a .candidates list of (entity_id, score) pairs). Only the
    top max_candidates of each mention contribute to the reachable set.
    Documents losing every tuple are retained with empty graphs.
    """
    out = []
    for graph in annotations:
        reachable: set[str] = set()
        for cs in candidate_sets.get(graph.doc_id, []):
            reachable.update(e for e, _ in cs.candidates[:max_candidates])
        kept = frozenset(
            (h, r, t) for h, r, t in graph.tuples if h in reachable and t in reachable
        )
        out.append(AnnotationGraph(graph.doc_id, kept))
    return out
