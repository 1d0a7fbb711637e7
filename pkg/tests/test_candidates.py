"""Retrieval checked against an independent dense tf-idf/cosine computation."""

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docgraph.candidates import (
    CandidateSet,
    build_index,
    candidate_recall_at_k,
    generate_candidate_sets,
    ngram_features,
    normalize,
    query_top_c,
    read_candidates,
    write_candidates,
)
from docgraph.corpus import Corpus, Entity, KnowledgeBase, Mention, tokenize
from docgraph.errors import DataError, UsageError


# -- oracle -----------------------------------------------------------------
# plain-dict tf-idf cosine, written before the index and sharing none of its
# sparse machinery


def _oracle_features(text):
    counts = Counter()
    for n in (2, 3, 4, 5):
        for i in range(len(text) - n + 1):
            counts[("c", text[i : i + n])] += 1
    words = text.split()
    for n in (1, 2):
        for i in range(len(words) - n + 1):
            counts[("w", " ".join(words[i : i + n]))] += 1
    return counts


def oracle_rank(kb, surface):
    """Rank all entities by cosine against their best name, dense math."""
    names = []
    for eid in sorted(kb.entities):
        seen = set()
        for name in kb.entities[eid].names:
            norm = normalize(name)
            if norm and norm not in seen:
                seen.add(norm)
                names.append((eid, norm))
    d = len(names)
    df = Counter()
    for _, norm in names:
        for key in _oracle_features(norm):
            df[key] += 1
    idf = {key: math.log((1.0 + d) / (1.0 + c)) + 1.0 for key, c in df.items()}

    def tfidf(text):
        return {k: c * idf[k] for k, c in _oracle_features(text).items() if k in idf}

    def cosine(a, b):
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return sum(a[k] * b.get(k, 0.0) for k in a) / (na * nb)

    q = tfidf(normalize(surface))
    if not q:
        return []
    best = {}
    for eid, norm in names:
        score = min(cosine(q, tfidf(norm)), 1.0)
        if eid not in best or score > best[eid]:
            best[eid] = score
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(e, s) for e, s in ranked if s > 0.0]


def make_kb(names_by_id, relations=("r",)):
    entities = {
        eid: Entity(eid, names[0], tuple(names[1:]), 0) for eid, names in names_by_id.items()
    }
    return KnowledgeBase(entities=entities, types=["t"], relations=list(relations))


class TestNormalize:
    def test_lowercase_punct_stem(self):
        assert normalize("Heart Attacks!") == "heart attack"

    def test_hyphen_becomes_space(self):
        assert normalize("aspirin-induced") == "aspirin induc"

    def test_collapses_whitespace(self):
        assert normalize("  beta   blockers ") == "beta blocker"

    def test_all_punctuation_is_empty(self):
        assert normalize("!!!") == ""


class TestNgramFeatures:
    def test_hand_enumerated(self):
        feats = ngram_features("ab cd")
        assert feats[("c", "ab")] == 1
        assert feats[("c", "b c")] == 1  # space retained inside char grams
        assert feats[("c", "ab cd")] == 1
        assert feats[("w", "ab")] == 1
        assert feats[("w", "ab cd")] == 1
        assert ("w", "b c") not in feats
        # 4 bigrams + 3 trigrams + 2 four-grams + 1 five-gram + 2 + 1 words
        assert sum(feats.values()) == 13

    def test_repeat_counts(self):
        feats = ngram_features("aaa")
        assert feats[("c", "aa")] == 2
        assert feats[("c", "aaa")] == 1

    def test_short_string(self):
        feats = ngram_features("a")
        assert feats == {("w", "a"): 1}


class TestQueryAgainstOracle:
    def test_exact_name_scores_one(self):
        kb = make_kb({"E1": ["aspirin"], "E2": ["asthma"], "E3": ["heart attack"]})
        index = build_index(kb)
        cs = query_top_c("Aspirin", index, 3)
        assert cs.candidates[0][0] == "E1"
        assert cs.candidates[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_matches_oracle_on_random_kbs(self):
        rng = np.random.default_rng(42)
        letters = "abdegiklmnoprstuz"

        def word():
            n = rng.integers(3, 9)
            return "".join(letters[i] for i in rng.integers(0, len(letters), n))

        for trial in range(10):
            names_by_id = {}
            shared = [word() for _ in range(5)]
            for i in range(30):
                names = [word()]
                if rng.random() < 0.4:
                    names.append(shared[int(rng.integers(5))])
                names_by_id[f"E{i:03d}"] = names
            kb = make_kb(names_by_id)
            index = build_index(kb)
            queries = [word() for _ in range(5)] + shared[:2]
            for q in queries:
                expect = oracle_rank(kb, q)[:10]
                got = query_top_c(q, index, 10).candidates
                assert [e for e, _ in got] == [e for e, _ in expect]
                for (_, s_got), (_, s_exp) in zip(got, expect):
                    assert s_got == pytest.approx(s_exp, abs=1e-9)

    def test_tie_breaks_lexicographic(self):
        kb = make_kb({"Z9": ["shared name"], "A1": ["shared name"], "M5": ["other"]})
        index = build_index(kb)
        cs = query_top_c("shared name", index, 3)
        assert cs.candidates[0][0] == "A1"
        assert cs.candidates[1][0] == "Z9"
        assert cs.candidates[0][1] == pytest.approx(cs.candidates[1][1], abs=1e-12)

    def test_best_synonym_wins(self):
        kb = make_kb({"E1": ["acetylsalicylic acid", "aspirin"], "E2": ["aspirol"]})
        index = build_index(kb)
        cs = query_top_c("aspirin", index, 2)
        assert cs.candidates[0][0] == "E1"
        assert cs.candidates[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_empty_query_yields_empty_set(self):
        kb = make_kb({"E1": ["aspirin"]})
        index = build_index(kb)
        assert query_top_c("...", index, 5).candidates == []

    def test_c_must_be_positive(self):
        kb = make_kb({"E1": ["aspirin"]})
        index = build_index(kb)
        with pytest.raises(UsageError):
            query_top_c("aspirin", index, 0)

    def test_truncates_to_c(self):
        kb = make_kb({f"E{i}": [f"name{i} kind"] for i in range(8)})
        index = build_index(kb)
        assert len(query_top_c("name0 kind", index, 3).candidates) == 3

    @given(st.lists(st.text(alphabet="abcdeio ", min_size=1, max_size=12), min_size=1, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_score_bounds_and_order_property(self, raw_names):
        named = {
            f"E{i:02d}": [name]
            for i, name in enumerate(raw_names)
            if normalize(name)
        }
        if not named:
            return
        kb = make_kb(named)
        index = build_index(kb)
        cs = query_top_c(raw_names[0], index, 5)
        scores = [s for _, s in cs.candidates]
        assert all(0.0 < s <= 1.0 for s in scores)
        assert scores == sorted(scores, reverse=True)
        ids = [e for e, _ in cs.candidates]
        assert len(ids) == len(set(ids))


class TestBuildIndexValidation:
    def test_all_empty_names_rejected(self):
        kb = make_kb({"E1": ["!!!"]})
        with pytest.raises(DataError):
            with pytest.warns(UserWarning):
                build_index(kb)

    def test_empty_name_entity_warns_but_survives(self):
        kb = make_kb({"E1": ["..."], "E2": ["aspirin"]})
        with pytest.warns(UserWarning, match="E1"):
            index = build_index(kb)
        assert index.entity_ids == ["E2"]


class TestRecall:
    def test_hand_case(self):
        sets = {
            ("d1", 0): CandidateSet(None, [("E1", 1.0), ("E2", 0.5)]),
            ("d1", 1): CandidateSet(None, [("E9", 1.0), ("E2", 0.9)]),
        }
        gold = {("d1", 0): "E1", ("d1", 1): "E2"}
        assert candidate_recall_at_k(sets, gold, 1) == 0.5
        assert candidate_recall_at_k(sets, gold, 2) == 1.0

    def test_missing_mention_counts_as_miss(self):
        gold = {("d1", 0): "E1"}
        assert candidate_recall_at_k({}, gold, 5) == 0.0

    def test_k_must_be_positive(self):
        with pytest.raises(UsageError):
            candidate_recall_at_k({}, {("d", 0): "E"}, 0)


class TestCandidateIO:
    def test_roundtrip_bit_exact_scores(self, tmp_path):
        kb = make_kb({"E1": ["aspirin"], "E2": ["aspirol"], "E3": ["heart attack"]})
        index = build_index(kb)
        docs = [tokenize("aspirin attack", "", doc_id="d1")]
        mentions = [Mention("d1", 0, 0, "aspirin"), Mention("d1", 1, 1, "attack")]
        corpus = Corpus(docs, mentions, kb, [])
        sets = generate_candidate_sets(corpus, index, 3)
        path = tmp_path / "cands.tsv"
        write_candidates(sets, path)
        back = read_candidates(path, corpus)
        assert set(back) == {"d1"}
        for orig, loaded in zip(sets["d1"], back["d1"]):
            assert loaded.candidates == orig.candidates  # repr round-trip is exact

    def test_read_rejects_bad_mention_index(self, tmp_path):
        kb = make_kb({"E1": ["aspirin"]})
        docs = [tokenize("aspirin", "", doc_id="d1")]
        corpus = Corpus(docs, [Mention("d1", 0, 0, "aspirin")], kb, [])
        path = tmp_path / "cands.tsv"
        path.write_text("d1\t7\t0\tE1\t1.0\n")
        with pytest.raises(DataError):
            read_candidates(path, corpus)
