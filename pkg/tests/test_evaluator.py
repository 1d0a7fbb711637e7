import numpy as np
import pytest

import docgraph.ndtensor as nd
from docgraph.candidates import CandidateSet
from docgraph.config import TrainConfig
from docgraph.corpus import (
    AnnotationGraph,
    Document,
    Mention,
    Vocabulary,
    filter_annotations_by_candidates,
    tokenize,
)
from docgraph.errors import DataError, UsageError
from docgraph.evaluator import (
    MetricReport,
    hard_document_scores,
    hard_link_assignment,
    linking_doc_eval,
    micro_prf,
    oracle_recall,
    pipeline_baseline,
)
from docgraph.trainer import assemble_model


def graph(doc_id, *tuples):
    return AnnotationGraph(doc_id, frozenset(tuples))


class TestMicroPrf:
    def test_perfect_predictions(self):
        gold = [graph("d1", ("A", 0, "B")), graph("d2", ("B", 1, "C"), ("A", 0, "C"))]
        preds = {"d1": {("A", 0, "B")}, "d2": {("B", 1, "C"), ("A", 0, "C")}}
        rep = micro_prf(preds, gold)
        assert (rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0)

    def test_empty_predictions(self):
        rep = micro_prf({}, [graph("d1", ("A", 0, "B"))])
        assert (rep.precision, rep.recall, rep.f1) == (0.0, 0.0, 0.0)
        assert rep.fn == 1

    def test_frozen_four_sevenths(self):
        # gold of 4, predictions of 3, overlap 2: P=2/3, R=1/2, F1=4/7
        gold = [graph("d", ("A", 0, "B"), ("B", 0, "C"), ("C", 0, "D"), ("D", 0, "A"))]
        preds = {"d": {("A", 0, "B"), ("B", 0, "C"), ("X", 0, "Y")}}
        rep = micro_prf(preds, gold)
        assert rep.precision == pytest.approx(2 / 3, abs=1e-15)
        assert rep.recall == pytest.approx(1 / 2, abs=1e-15)
        assert rep.f1 == pytest.approx(4 / 7, abs=1e-15)

    def test_matches_bruteforce_on_random_fixtures(self):
        rng = np.random.default_rng(0)
        entities = ["A", "B", "C", "D"]
        universe = [(h, r, t) for h in entities for t in entities if h != t for r in (0, 1)]
        for trial in range(50):
            doc_ids = [f"d{i}" for i in range(rng.integers(1, 5))]
            gold, preds = [], {}
            for d in doc_ids:
                g = {universe[i] for i in rng.choice(len(universe), rng.integers(0, 6), replace=False)}
                p = {universe[i] for i in rng.choice(len(universe), rng.integers(0, 6), replace=False)}
                gold.append(graph(d, *g))
                preds[d] = p
            rep = micro_prf(preds, gold)
            tp = sum(len(set(g.tuples) & preds[g.doc_id]) for g in gold)
            fp = sum(len(preds[g.doc_id] - set(g.tuples)) for g in gold)
            fn = sum(len(set(g.tuples) - preds[g.doc_id]) for g in gold)
            assert (rep.tp, rep.fp, rep.fn) == (tp, fp, fn)
            expect_p = tp / (tp + fp) if tp + fp else 0.0
            expect_r = tp / (tp + fn) if tp + fn else 0.0
            assert rep.precision == pytest.approx(expect_p, abs=1e-15)
            assert rep.recall == pytest.approx(expect_r, abs=1e-15)

    def test_micro_differs_from_macro(self):
        # doc a: 1 gold, predicted perfectly; doc b: 9 gold, 1 found
        gold = [
            graph("a", ("A", 0, "B")),
            graph("b", *[("E", 0, f"X{i}") for i in range(9)]),
        ]
        preds = {"a": {("A", 0, "B")}, "b": {("E", 0, "X0")}}
        rep = micro_prf(preds, gold)
        assert rep.recall == pytest.approx(0.2)  # pooled 2/10
        macro = np.mean([rep.per_document["a"][1], rep.per_document["b"][1]])
        assert macro == pytest.approx((1.0 + 1 / 9) / 2)
        assert rep.recall != pytest.approx(macro)

    def test_unknown_document_rejected(self):
        with pytest.raises(DataError, match="ghost"):
            micro_prf({"ghost": set()}, [graph("d")])

    def test_duplicate_gold_rejected(self):
        with pytest.raises(DataError, match="d"):
            micro_prf({}, [graph("d"), graph("d")])

    def test_report_rendering(self):
        rep = MetricReport.from_counts(2, 1, 2)
        d = rep.as_dict()
        assert d["tp"] == 2 and "precision" in d
        assert "precision" in rep.table("tuples")


def cands(*ids):
    # descending synthetic scores so rank order equals argument order
    return CandidateSet(None, [(e, 1.0 - 0.01 * i) for i, e in enumerate(ids)])


class TestOracleRecall:
    def setup_method(self):
        self.sets = {
            "d1": [cands("A", "B"), cands("C"), cands("B", "D")],
            "d2": [cands("D", "A")],
        }
        self.gold = [
            graph("d1", ("A", 0, "C"), ("B", 0, "C"), ("D", 1, "A")),
            graph("d2", ("D", 0, "A")),
        ]

    def test_top1_matches_hand_count(self):
        # d1 reachable at rank-1: {A, C, B}; d2: {D}
        # tuples hit: (A,0,C) yes, (B,0,C) yes, (D,1,A) no, (D,0,A) no
        assert oracle_recall(self.sets, self.gold, "top1") == pytest.approx(2 / 4)

    def test_topc_matches_hand_count(self):
        # c=2 reaches every candidate: d1 {A,B,C,D}, d2 {D,A}
        assert oracle_recall(self.sets, self.gold, "topc", c=2) == pytest.approx(4 / 4)

    def test_external_policy(self):
        links = {("d1", 0): "A", ("d1", 1): "C", ("d2", 0): "D"}
        # d1 reach {A, C}: only (A,0,C) hits; d2 reach {D}: (D,0,A) misses
        assert oracle_recall(self.sets, self.gold, "external", links=links) == pytest.approx(1 / 4)

    def test_monotone_in_c_and_vs_bruteforce(self):
        rng = np.random.default_rng(1)
        entities = [f"E{i}" for i in range(6)]
        for trial in range(30):
            sets = {}
            gold = []
            for d in range(rng.integers(1, 4)):
                doc_id = f"d{d}"
                n_mentions = rng.integers(1, 5)
                doc_sets = []
                for _ in range(n_mentions):
                    k = rng.integers(1, 4)
                    picks = rng.choice(len(entities), k, replace=False)
                    doc_sets.append(cands(*[entities[i] for i in picks]))
                sets[doc_id] = doc_sets
                tuples = set()
                for _ in range(rng.integers(1, 4)):
                    h, t = rng.choice(len(entities), 2, replace=False)
                    tuples.add((entities[h], 0, entities[t]))
                gold.append(graph(doc_id, *tuples))
            prev = 0.0
            for c in (1, 2, 3):
                got = oracle_recall(sets, gold, "topc", c=c)
                # brute force: recompute reachability from scratch
                hits = total = 0
                for g in gold:
                    reach = set()
                    for cs in sets[g.doc_id]:
                        for e, _ in cs.candidates[:c]:
                            reach.add(e)
                    for h, _, t in g.tuples:
                        total += 1
                        hits += int(h in reach and t in reach)
                assert got == pytest.approx(hits / total)
                assert got >= prev - 1e-12
                prev = got
            assert oracle_recall(sets, gold, "top1") <= oracle_recall(sets, gold, "topc", c=1) + 1e-12

    def test_filtered_annotations_reach_one(self):
        # after candidate-based filtering, every surviving tuple is reachable
        sets = {"d1": [cands("A", "B"), cands("C")]}
        gold = [graph("d1", ("A", 0, "C"), ("A", 0, "Z"))]
        kept = filter_annotations_by_candidates(gold, sets, max_candidates=25)
        assert oracle_recall(sets, kept, "topc", c=25) == 1.0

    def test_empty_gold_returns_zero(self):
        assert oracle_recall({}, [], "top1") == 0.0

    def test_unknown_policy_rejected(self):
        with pytest.raises(UsageError):
            oracle_recall({}, [], "argmax")

    def test_external_requires_links(self):
        with pytest.raises(UsageError):
            oracle_recall(self.sets, self.gold, "external")


class TestLinkingDocEval:
    def test_equal_sets(self):
        rep = linking_doc_eval({"d": {"A", "B"}}, {"d": {"A", "B"}})
        assert rep.f1 == 1.0

    def test_half_recall(self):
        rep = linking_doc_eval({"d": {"A"}}, {"d": {"A", "B"}})
        assert rep.precision == 1.0
        assert rep.recall == 0.5
        assert rep.f1 == pytest.approx(2 / 3)

    def test_duplicates_count_once(self):
        rep = linking_doc_eval({"d": ["A", "A", "B"]}, {"d": ["B", "A", "A"]})
        assert (rep.tp, rep.fp, rep.fn) == (2, 0, 0)

    def test_stray_doc_rejected(self):
        with pytest.raises(DataError):
            linking_doc_eval({"x": set()}, {"d": {"A"}})


class TestHardLinkAssignment:
    def test_top_candidate(self):
        sets = [cands("A", "B"), cands(), cands("C")]
        assert hard_link_assignment("d", sets, "top_candidate") == {0: "A", 2: "C"}

    def test_external(self):
        sets = [cands("A"), cands("B")]
        links = {("d", 1): "Z", ("other", 0): "A"}
        assert hard_link_assignment("d", sets, "external", links) == {1: "Z"}

    def test_unknown_policy(self):
        with pytest.raises(UsageError):
            hard_link_assignment("d", [], "best_guess")


def tiny_model(n_entities=4, relations=2, seed=0):
    cfg = TrainConfig(
        embed_dim=8, blocks=1, heads=2, keep_input=1.0, keep_attention=1.0,
        keep_dense=1.0, keep_word=1.0, max_tokens=32, seed=seed,
    )
    vocab_tokens = ["<unk>", "alpha", "beta", "gamma", "delta", "epsilon"]
    vocab = Vocabulary({t: i for i, t in enumerate(vocab_tokens)}, 0, 1)
    ids = [f"E{i}" for i in range(n_entities)]
    return assemble_model(cfg, vocab, ids, [0] * n_entities, ["thing"],
                          [f"r{i}" for i in range(relations)])


def make_doc(n_tokens=6):
    words = ["alpha", "beta", "gamma", "delta", "epsilon", "alpha"][:n_tokens]
    return tokenize("alpha", " ".join(words[1:]), doc_id="d")


class TestHardScores:
    def test_indicator_linking_and_pools(self):
        model = tiny_model()
        doc = make_doc()
        mentions = [Mention("d", i, i, s) for i, s in enumerate(["a", "b", "c"])]
        assignment = {0: "E0", 1: "E1", 2: "E0"}
        ds = hard_document_scores(model, doc, mentions, assignment)
        np.testing.assert_array_equal(ds.linking.data, np.ones((3, 1)))
        assert ds.entity_mentions == {"E0": [(0, 0), (2, 2)], "E1": [(1, 1)]}
        # pooled tuple probability is the smax of the supported relation probs
        pooled, flags = model.scorer.pool_tuples(ds, [("E0", 1, "E1")])
        assert flags == [True]
        tau = float(nd.softplus(model.scorer.rho.value).data[0])
        vals = np.array([
            ds.relation.data[ds.pair_row[(0, 1)], 1],
            ds.relation.data[ds.pair_row[(2, 1)], 1],
        ])
        w = np.exp(vals / tau)
        w /= w.sum()
        assert pooled.data[0] == pytest.approx(float(w @ vals), abs=1e-12)

    def test_unlinked_mentions_excluded(self):
        model = tiny_model()
        doc = make_doc()
        mentions = [Mention("d", i, i, "m") for i in range(3)]
        ds = hard_document_scores(model, doc, mentions, {1: "E2"})
        assert ds.scoreable == [1]
        assert ds.relation is None

    def test_unknown_link_target_rejected(self):
        model = tiny_model()
        doc = make_doc()
        with pytest.raises(DataError, match="E9"):
            hard_document_scores(model, doc, [Mention("d", 0, 0, "m")], {0: "E9"})

    def test_bad_mention_index_rejected(self):
        model = tiny_model()
        doc = make_doc()
        with pytest.raises(DataError):
            hard_document_scores(model, doc, [Mention("d", 0, 0, "m")], {3: "E0"})


class FakeCorpus:
    def __init__(self, docs, mentions):
        self.docs = docs
        self._mentions = mentions

    def document(self, doc_id):
        return self.docs[doc_id]

    def mentions_of(self, doc_id):
        return self._mentions[doc_id]


class TestPipelineBaseline:
    def test_prediction_universe_is_linked_entities(self):
        model = tiny_model()
        doc = make_doc()
        mentions = [Mention("d", i, i, "m") for i in range(3)]
        corpus = FakeCorpus({"d": doc}, {"d": mentions})
        sets = {"d": [cands("E0"), cands("E1", "E0"), cands("E3")]}
        out = pipeline_baseline(model, corpus, sets, ["d"], threshold=0.0)
        entities = {e for h, _, t, _ in out["d"] for e in (h, t)}
        assert entities == {"E0", "E1", "E3"}
        # every ordered pair of distinct linked entities, every relation
        assert len(out["d"]) == 3 * 2 * 2

    def test_wrong_links_kill_recall(self):
        model = tiny_model()
        doc = make_doc()
        mentions = [Mention("d", i, i, "m") for i in range(2)]
        corpus = FakeCorpus({"d": doc}, {"d": mentions})
        # gold heads are E0 but the linker maps every mention to E2/E3
        links = {("d", 0): "E2", ("d", 1): "E3"}
        out = pipeline_baseline(model, corpus, sets := {"d": [cands("E0"), cands("E1")]},
                                ["d"], policy="external", links=links, threshold=0.0)
        gold = [graph("d", ("E0", 0, "E1"))]
        preds = {d: {(h, r, t) for h, r, t, _ in rows} for d, rows in out.items()}
        assert micro_prf(preds, gold).recall == 0.0

    def test_missing_candidates_rejected(self):
        model = tiny_model()
        corpus = FakeCorpus({"d": make_doc()}, {"d": []})
        with pytest.raises(DataError):
            pipeline_baseline(model, corpus, {}, ["d"])
