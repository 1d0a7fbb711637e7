"""Synthetic corpus generator with controllable linking ambiguity.

Every true entity has a unique canonical name. With ambiguity > 0 it also has
a shared alias owned by a decoy entity whose id sorts lexicographically
earlier, so an alias mention ties both at cosine 1.0 and rank-1 retrieval
picks the decoy. A mention uses the alias with probability `ambiguity`,
independently per mention. Relation tuples are expressed as
"head TRIGGER tail ." sentences with one trigger word per relation, so every
annotated tuple is recoverable from the text. A document repeats a relation
only when it has more tuples than there are relations. All randomness comes
from the "synth" stream of the run seed; output is byte-identical across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .candidates import normalize
from .config import SynthConfig
from .corpus import (
    AnnotationGraph,
    Corpus,
    Entity,
    KnowledgeBase,
    Mention,
    tokenize,
    write_corpus,
    write_links,
    write_split,
)
from .errors import ConfigError
from .seeding import stream

_CONSONANTS = list("bdfgklmnprstvz")
_VOWELS = list("aeiou")


def _word(rng, syllables: int) -> str:
    parts = []
    for _ in range(syllables):
        parts.append(rng.choice(_CONSONANTS) + rng.choice(_VOWELS))
    return "".join(parts)


def _fresh_word(rng, used: set[str], syllables: int) -> str:
    # uniqueness is enforced on the normalized (stemmed) form so that two
    # distinct raw names cannot collapse to the same retrieval key
    while True:
        word = _word(rng, syllables)
        key = normalize(word)
        if key and key not in used:
            used.add(key)
            return word


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    gold_links: dict[tuple[str, int], str]
    split: dict[str, list[str]]


def generate(cfg: SynthConfig) -> SyntheticCorpus:
    cfg.validate()
    space = cfg.entities * (cfg.entities - 1) * cfg.relations
    if cfg.tuples_per_doc > space:
        raise ConfigError(
            f"tuples_per_doc={cfg.tuples_per_doc} exceeds the {space} distinct tuples "
            f"available with {cfg.entities} entities and {cfg.relations} relations"
        )
    rng = stream(cfg.seed, "synth")
    used: set[str] = set()

    unique_names = [_fresh_word(rng, used, 3) for _ in range(cfg.entities)]
    aliases = [_fresh_word(rng, used, 3) for _ in range(cfg.entities)] if cfg.ambiguity > 0 else []
    triggers = [_fresh_word(rng, used, 2) for _ in range(cfg.relations)]
    fillers = [_fresh_word(rng, used, 2) for _ in range(20)]

    entities: dict[str, Entity] = {}
    true_ids = []
    for i, name in enumerate(unique_names):
        tid = f"Q{i:04d}"
        true_ids.append(tid)
        synonyms = (aliases[i],) if cfg.ambiguity > 0 else ()
        entities[tid] = Entity(tid, name, synonyms, 0)
    if cfg.ambiguity > 0:
        # decoy ids start with "D" so they precede the matching "Q" entity in
        # the lexicographic tie-break at identical retrieval scores
        for i, alias in enumerate(aliases):
            did = f"D{i:04d}"
            entities[did] = Entity(did, alias, (), 0)
    kb = KnowledgeBase(entities=entities, types=["concept"], relations=list(triggers))

    documents = []
    mentions = []
    annotations = []
    gold_links: dict[tuple[str, int], str] = {}

    def pick_filler():
        return fillers[int(rng.integers(len(fillers)))]

    for d in range(cfg.docs):
        doc_id = f"S{d:04d}"
        title = f"{pick_filler()} {pick_filler()}"
        title_len = 2

        doc_tuples: list[tuple[int, int, int]] = []
        seen = set()
        used_rels: set[int] = set()
        while len(doc_tuples) < cfg.tuples_per_doc:
            head, tail = (int(x) for x in rng.choice(cfg.entities, size=2, replace=False))
            rel = int(rng.integers(cfg.relations))
            # relations repeat within one document only once the inventory is
            # exhausted; two same-relation sentences would make the document
            # annotation consistent with the crossed head/tail pairing, which
            # document-level supervision cannot disambiguate
            if rel in used_rels and len(used_rels) < cfg.relations:
                continue
            if (head, rel, tail) not in seen:
                seen.add((head, rel, tail))
                used_rels.add(rel)
                doc_tuples.append((head, rel, tail))

        words: list[str] = []
        doc_mentions: list[Mention] = []

        def emit_mention(entity_idx: int):
            if cfg.ambiguity > 0 and rng.random() < cfg.ambiguity:
                surface = aliases[entity_idx]
            else:
                surface = unique_names[entity_idx]
            pos = title_len + len(words)
            words.append(surface)
            doc_mentions.append(Mention(doc_id, pos, pos, surface, source="synthetic"))
            gold_links[(doc_id, len(doc_mentions) - 1)] = true_ids[entity_idx]

        for head, rel, tail in doc_tuples:
            emit_mention(head)
            words.append(triggers[rel])
            emit_mention(tail)
            words.append(".")
        for _ in range(cfg.fillers_per_doc):
            words.extend(pick_filler() for _ in range(4))
            words.append(".")

        abstract = " ".join(words)
        doc = tokenize(title, abstract, doc_id=doc_id)
        assert len(doc) == title_len + len(words)
        documents.append(doc)
        mentions.extend(doc_mentions)
        annotations.append(
            AnnotationGraph(
                doc_id,
                frozenset((true_ids[h], r, true_ids[t]) for h, r, t in doc_tuples),
            )
        )

    corpus = Corpus(documents, mentions, kb, annotations)

    order = [documents[int(i)].doc_id for i in rng.permutation(cfg.docs)]
    n_train = max(1, round(cfg.train_frac * cfg.docs))
    n_dev = round(cfg.dev_frac * cfg.docs)
    n_train = min(n_train, cfg.docs)
    split = {
        "train": sorted(order[:n_train]),
        "dev": sorted(order[n_train : n_train + n_dev]),
        "test": sorted(order[n_train + n_dev :]),
    }
    return SyntheticCorpus(corpus=corpus, gold_links=gold_links, split=split)


def write_synthetic(synth: SyntheticCorpus, outdir) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_corpus(synth.corpus, outdir)
    write_links(synth.gold_links, outdir / "links.tsv")
    for name, doc_ids in synth.split.items():
        write_split(doc_ids, outdir / f"split.{name}.txt")
