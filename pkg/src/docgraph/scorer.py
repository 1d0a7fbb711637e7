"""Probability heads over encoded documents.

Produces, per document: a mention-candidate linking matrix (softmax within
each mention's candidate list), a relation probability matrix over ordered
mention pairs, temperature-pooled tuple probabilities, and max-pooled
document-level entity probabilities.

Padded matrix cells carry an additive -1e30 mask, which underflows to an
exact 0.0 under softmax; real linking rows therefore sum to 1 exactly and
padding never leaks probability mass or gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .config import TrainConfig
from .corpus import Mention
from .errors import DataError, ShapeError

_MASK = -1e30
# softplus(rho0) == 1 so the pooling temperature starts at 1.0
_RHO_INIT = float(np.log(np.e - 1.0))
# relation logits are squashed through cap * tanh(x / cap) before the sigmoid;
# without the bound, cells swinging hard positive during the first epochs
# saturate to probability 1 where the gradient underflows and later negative
# evidence can never pull them back
_REL_LOGIT_CAP = 8.0


def smax(values: nd.Tensor, tau) -> nd.Tensor:
    """Soft maximum: softmax(values / tau) weights averaging the values.

    Interpolates between the hard maximum (tau -> 0) and the mean
    (tau -> infinity); always a convex combination of the inputs.
    """
    if values.size == 0:
        raise ShapeError("smax of an empty value list")
    if not isinstance(tau, nd.Tensor):
        tau = nd.Tensor(np.array([float(tau)]))
    weights = nd.softmax_over_axis(nd.div(values, tau), axis=-1)
    return nd.sum_over_axis(nd.mul(weights, values), axis=-1)


def select_top_k_mentions(
    linking: np.ndarray,
    entity_mentions: dict[str, list[tuple[int, int]]],
    k: int,
) -> dict[str, list[int]]:
    """Per candidate entity, the k mention ordinals with highest link probability.

    entity_mentions maps entity_id -> [(mention_ordinal, flat_linking_index)].
    Ties break toward the lower mention ordinal. With k >= number of mentions
    the restriction is the identity.
    """
    flat = linking.reshape(-1)
    out: dict[str, list[int]] = {}
    for entity_id, cells in entity_mentions.items():
        ranked = sorted(cells, key=lambda c: (-flat[c[1]], c[0]))
        out[entity_id] = sorted(ordinal for ordinal, _ in ranked[:k])
    return out


@dataclass
class DocScores:
    """All per-document score tensors plus the index maps to address them."""

    doc_id: str
    mentions: list[Mention]
    scoreable: list[int]  # indices into mentions with >= 1 candidate
    candidate_ids: list[list[str]]  # per scoreable mention
    c_max: int
    doc_rep: nd.Tensor
    linking: nd.Tensor | None  # (M_s, c_max), padded cells exactly 0
    relation: nd.Tensor | None  # (n_pairs, R) over ordered pairs i != j
    pair_row: dict[tuple[int, int], int] = field(default_factory=dict)
    # entity_id -> [(mention_ordinal, flat index into linking)]
    entity_mentions: dict[str, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def n_scoreable(self) -> int:
        return len(self.scoreable)

    def link_flat_index(self, ordinal: int, entity_id: str) -> int | None:
        pos_list = self.candidate_ids[ordinal]
        try:
            return ordinal * self.c_max + pos_list.index(entity_id)
        except ValueError:
            return None


class Scorer:
    """Owns linking/relation/pooling parameters inside a shared ParameterSet."""

    def __init__(
        self,
        params: nd.ParameterSet,
        rng,
        cfg: TrainConfig,
        entity_ids: list[str],
        entity_type_ids,
        n_types: int,
        n_relations: int,
        pretrained_desc: np.ndarray | None = None,
        pretrained_graph: np.ndarray | None = None,
        prefix: str = "scorer",
    ):
        self.cfg = cfg
        self.params = params
        self.entity_ids = list(entity_ids)
        self.entity_row = {e: i for i, e in enumerate(self.entity_ids)}
        self.entity_type_ids = np.asarray(entity_type_ids, dtype=np.int64)
        self.n_relations = n_relations
        n = cfg.embed_dim

        def add(name, shape, kind="glorot"):
            if kind == "emb":
                # unit-scale rows so candidate entities are separable by the
                # linking features from the first update onward
                data = rng.normal(0.0, 1.0 / np.sqrt(n), size=shape)
            elif kind == "zeros":
                data = np.zeros(shape)
            else:
                data = nd.glorot_uniform(shape, rng)
            return params.add(f"{prefix}/{name}", data)

        self.ent_emb = add("ent_emb", (len(self.entity_ids), n), "emb")
        self.type_emb = add("type_emb", (max(n_types, 1), n), "emb")
        self.desc_vectors = pretrained_desc
        self.graph_vectors = pretrained_graph
        if pretrained_desc is not None:
            self.desc_proj = add("desc_proj", (pretrained_desc.shape[1], n))
        if pretrained_graph is not None:
            self.graph_proj = add("graph_proj", (pretrained_graph.shape[1], n))

        self.doc_w1 = add("doc_w1", (2 * n, n))
        self.doc_b1 = add("doc_b1", (n,), "zeros")
        self.doc_w2 = add("doc_w2", (n, n))
        self.doc_b2 = add("doc_b2", (n,), "zeros")

        self.link_w1 = add("link_w1", (3 * n, n))
        self.link_b1 = add("link_b1", (n,), "zeros")
        self.link_w2 = add("link_w2", (n, 1))
        self.link_b2 = add("link_b2", (1,), "zeros")

        self.head_w1 = add("head_w1", (n, n))
        self.head_b1 = add("head_b1", (n,), "zeros")
        self.head_w2 = add("head_w2", (n, n))
        self.head_b2 = add("head_b2", (n,), "zeros")
        self.tail_w1 = add("tail_w1", (n, n))
        self.tail_b1 = add("tail_b1", (n,), "zeros")
        self.tail_w2 = add("tail_w2", (n, n))
        self.tail_b2 = add("tail_b2", (n,), "zeros")

        self.rel_w1 = add("rel_w1", (2 * n, n))
        self.rel_b1 = add("rel_b1", (n,), "zeros")
        self.rel_w2 = add("rel_w2", (n, n_relations))
        self.rel_b2 = add("rel_b2", (n_relations,), "zeros")

        self.rho = add("rho", (1,), "zeros")
        self.rho.data[...] = _RHO_INIT

    # -- building blocks ----------------------------------------------------

    def tau(self) -> nd.Tensor:
        return nd.softplus(self.rho.value)

    def entity_matrix(self) -> nd.Tensor:
        """Combined entity vectors: embedding + type (+ projected pretrained)."""
        out = nd.add(
            self.ent_emb.value,
            nd.embedding_lookup(self.type_emb.value, self.entity_type_ids),
        )
        if self.desc_vectors is not None:
            out = nd.add(out, nd.matmul(nd.Tensor(self.desc_vectors), self.desc_proj.value))
        if self.graph_vectors is not None:
            out = nd.add(out, nd.matmul(nd.Tensor(self.graph_vectors), self.graph_proj.value))
        return out

    def doc_representation(self, encoding: nd.Tensor) -> nd.Tensor:
        if encoding.size == 0:
            raise DataError("cannot build a document representation from an empty encoding")
        pooled = nd.concat(
            [
                nd.mean_over_axis(encoding, axis=0, keepdims=True),
                nd.max_over_axis(encoding, axis=0, keepdims=True),
            ],
            axis=1,
        )
        hidden = nd.relu(nd.add(nd.matmul(pooled, self.doc_w1.value), self.doc_b1.value))
        return nd.add(nd.matmul(hidden, self.doc_w2.value), self.doc_b2.value)

    def _dense_dropout(self, x, mode, rngs):
        return nd.dropout(x, self.cfg.keep_dense, mode, rngs["dropout"] if rngs else None)

    def linking_probabilities(
        self,
        mention_reps: nd.Tensor,
        candidate_ids: list[list[str]],
        doc_rep: nd.Tensor,
        entity_vectors: nd.Tensor,
        mode: str,
        rngs=None,
    ) -> nd.Tensor:
        """(M_s, c_max) matrix; each real row softmaxed over its candidates."""
        m_s = len(candidate_ids)
        c_max = max(len(c) for c in candidate_ids)
        rows = []
        repeat = []
        for ordinal, cands in enumerate(candidate_ids):
            for entity_id in cands:
                row = self.entity_row.get(entity_id)
                if row is None:
                    raise DataError(f"candidate entity {entity_id!r} missing from the entity table")
                rows.append(row)
                repeat.append(ordinal)
        total = len(rows)
        features = nd.concat(
            [
                nd.take_rows(entity_vectors, np.asarray(rows)),
                nd.take_rows(doc_rep, np.zeros(total, dtype=np.int64)),
                nd.take_rows(mention_reps, np.asarray(repeat)),
            ],
            axis=1,
        )
        hidden = nd.relu(nd.add(nd.matmul(features, self.link_w1.value), self.link_b1.value))
        hidden = self._dense_dropout(hidden, mode, rngs)
        logits = nd.reshape(
            nd.add(nd.matmul(hidden, self.link_w2.value), self.link_b2.value), (total,)
        )
        # scatter flat logits into the padded matrix through a gather on an
        # augmented vector whose last element feeds every padding cell
        augmented = nd.concat([logits, nd.Tensor(np.zeros(1))], axis=0)
        idx_map = np.full(m_s * c_max, total, dtype=np.int64)
        mask = np.full(m_s * c_max, _MASK)
        cursor = 0
        for ordinal, cands in enumerate(candidate_ids):
            for pos in range(len(cands)):
                cell = ordinal * c_max + pos
                idx_map[cell] = cursor
                mask[cell] = 0.0
                cursor += 1
        padded = nd.reshape(nd.take_flat(augmented, idx_map), (m_s, c_max))
        return nd.softmax_over_axis(nd.add_const(padded, mask.reshape(m_s, c_max)), axis=-1)

    def relation_probabilities(
        self, mention_reps: nd.Tensor, mode: str, rngs=None
    ) -> tuple[nd.Tensor, dict[tuple[int, int], int]]:
        """(n_pairs, R) sigmoid probabilities over ordered pairs i != j."""
        m_s = mention_reps.data.shape[0]

        def mlp(x, w1, b1, w2, b2):
            h = nd.relu(nd.add(nd.matmul(x, w1.value), b1.value))
            return nd.add(nd.matmul(h, w2.value), b2.value)

        e_head = self._dense_dropout(
            mlp(mention_reps, self.head_w1, self.head_b1, self.head_w2, self.head_b2), mode, rngs
        )
        e_tail = self._dense_dropout(
            mlp(mention_reps, self.tail_w1, self.tail_b1, self.tail_w2, self.tail_b2), mode, rngs
        )
        heads, tails, pair_row = [], [], {}
        for i in range(m_s):
            for j in range(m_s):
                if i == j:
                    continue
                pair_row[(i, j)] = len(heads)
                heads.append(i)
                tails.append(j)
        features = nd.concat(
            [
                nd.take_rows(e_head, np.asarray(heads)),
                nd.take_rows(e_tail, np.asarray(tails)),
            ],
            axis=1,
        )
        hidden = nd.relu(nd.add(nd.matmul(features, self.rel_w1.value), self.rel_b1.value))
        hidden = self._dense_dropout(hidden, mode, rngs)
        scores = nd.add(nd.matmul(hidden, self.rel_w2.value), self.rel_b2.value)
        capped = nd.mul_const(
            nd.tanh(nd.mul_const(scores, 1.0 / _REL_LOGIT_CAP)), _REL_LOGIT_CAP
        )
        return nd.sigmoid(capped), pair_row

    # -- per-document scoring ------------------------------------------------

    def score_document(
        self,
        doc_id: str,
        encoding: nd.Tensor,
        mentions: list[Mention],
        candidate_sets,
        mode: str,
        rngs=None,
        max_candidates: int | None = None,
    ) -> DocScores:
        """One scoring pass shared by training and inference."""
        if len(candidate_sets) != len(mentions):
            raise DataError(
                f"document {doc_id!r}: {len(mentions)} mentions but "
                f"{len(candidate_sets)} candidate sets"
            )
        doc_rep = self.doc_representation(encoding)
        limit = self.cfg.max_candidates if max_candidates is None else max_candidates
        scoreable, candidate_ids = [], []
        for idx, cs in enumerate(candidate_sets):
            ids = [e for e, _ in cs.candidates[:limit]]
            if ids:
                scoreable.append(idx)
                candidate_ids.append(ids)
        scores = DocScores(
            doc_id=doc_id,
            mentions=list(mentions),
            scoreable=scoreable,
            candidate_ids=candidate_ids,
            c_max=max((len(c) for c in candidate_ids), default=0),
            doc_rep=doc_rep,
            linking=None,
            relation=None,
        )
        if not scoreable:
            return scores
        starts = np.asarray([mentions[i].start_token for i in scoreable])
        if starts.max() >= encoding.data.shape[0]:
            raise DataError(f"document {doc_id!r}: mention start beyond the encoded length")
        mention_reps = nd.take_rows(encoding, starts)
        entity_vectors = self.entity_matrix()
        scores.linking = self.linking_probabilities(
            mention_reps, candidate_ids, doc_rep, entity_vectors, mode, rngs
        )
        for ordinal, cands in enumerate(candidate_ids):
            for pos, entity_id in enumerate(cands):
                scores.entity_mentions.setdefault(entity_id, []).append(
                    (ordinal, ordinal * scores.c_max + pos)
                )
        if len(scoreable) >= 2:
            scores.relation, scores.pair_row = self.relation_probabilities(
                mention_reps, mode, rngs
            )
        return scores

    # -- pooling -------------------------------------------------------------

    def pool_tuples(
        self,
        scores: DocScores,
        tuples: list[tuple[str, int, str]],
        allowed: dict[str, list[int]] | None = None,
    ) -> tuple[nd.Tensor | None, list[bool]]:
        """Smax-pooled probability per scoreable tuple.

        Returns (pooled vector over the scoreable subset, per-input flags).
        A tuple is unscoreable when no ordered mention pair links its head and
        tail; such tuples carry probability 0 by definition and are skipped.
        """
        link_cells: list[int] = []
        rel_cells: list[int] = []
        groups: list[tuple[int, int]] = []  # (start, length) into the cell lists
        flags = []
        for head, rel, tail in tuples:
            if not 0 <= rel < self.n_relations:
                raise DataError(f"relation index {rel} out of range")
            start = len(link_cells)
            if scores.relation is not None:
                head_ords = [
                    (o, f) for o, f in scores.entity_mentions.get(head, [])
                    if allowed is None or o in allowed.get(head, ())
                ]
                tail_ords = [
                    (o, f) for o, f in scores.entity_mentions.get(tail, [])
                    if allowed is None or o in allowed.get(tail, ())
                ]
                for oi, fi in head_ords:
                    for oj, fj in tail_ords:
                        if oi == oj:
                            continue
                        link_cells.append(fi)
                        link_cells.append(fj)
                        rel_cells.append(scores.pair_row[(oi, oj)] * self.n_relations + rel)
            length = (len(link_cells) - start) // 2
            if length == 0:
                flags.append(False)
            else:
                flags.append(True)
                groups.append((start, length))
        if not groups:
            return None, flags

        cells = np.asarray(link_cells, dtype=np.int64).reshape(-1, 2)
        p_head = nd.take_flat(scores.linking, cells[:, 0])
        p_tail = nd.take_flat(scores.linking, cells[:, 1])
        p_rel = nd.take_flat(scores.relation, np.asarray(rel_cells))
        products = nd.mul(nd.mul(p_head, p_rel), p_tail)

        v_max = max(length for _, length in groups)
        n_groups = len(groups)
        sentinel = len(rel_cells)
        idx_map = np.full(n_groups * v_max, sentinel, dtype=np.int64)
        mask = np.full(n_groups * v_max, _MASK)
        for g, (start, length) in enumerate(groups):
            base = start // 2
            for v in range(length):
                idx_map[g * v_max + v] = base + v
                mask[g * v_max + v] = 0.0
        augmented = nd.concat([products, nd.Tensor(np.zeros(1))], axis=0)
        padded = nd.reshape(nd.take_flat(augmented, idx_map), (n_groups, v_max))
        scaled = nd.div(padded, self.tau())
        weights = nd.softmax_over_axis(
            nd.add_const(scaled, mask.reshape(n_groups, v_max)), axis=-1
        )
        pooled = nd.sum_over_axis(nd.mul(weights, padded), axis=-1)
        return pooled, flags

    def entity_probabilities(
        self, scores: DocScores, entity_ids: list[str]
    ) -> tuple[nd.Tensor | None, list[bool]]:
        """Max over mentions of the linking probability, per entity.

        Entities that are a candidate of no mention are flagged False; their
        probability is 0 by definition and no tensor entry is produced.
        """
        cells, flags = [], []
        for entity_id in entity_ids:
            hit = scores.entity_mentions.get(entity_id)
            if not hit:
                flags.append(False)
            else:
                flags.append(True)
                cells.append([f for _, f in hit])
        if not cells:
            return None, flags
        k_max = max(len(c) for c in cells)
        # gather each entity's cells into a padded row; padding repeats the
        # first cell so it can never win the max or steal its gradient twice
        # at distinct values, and ties resolve to the first (real) cell
        idx_map = np.zeros((len(cells), k_max), dtype=np.int64)
        for row, cell_list in enumerate(cells):
            padded_row = cell_list + [cell_list[0]] * (k_max - len(cell_list))
            idx_map[row] = padded_row
        gathered = nd.reshape(
            nd.take_flat(scores.linking, idx_map.reshape(-1)), (len(cells), k_max)
        )
        return nd.max_over_axis(gathered, axis=-1), flags

    # -- inference -----------------------------------------------------------

    def predict_graph(
        self,
        scores: DocScores,
        threshold: float,
        top_k: int | None = None,
    ) -> list[tuple[str, int, str, float]]:
        """Every candidate tuple with pooled probability >= threshold."""
        if scores.relation is None:
            return []
        allowed = None
        if top_k is not None:
            allowed = select_top_k_mentions(scores.linking.data, scores.entity_mentions, top_k)
        entities = sorted(scores.entity_mentions)
        universe = [
            (h, r, t)
            for h in entities
            for t in entities
            if h != t
            for r in range(self.n_relations)
        ]
        if not universe:
            return []
        pooled, flags = self.pool_tuples(scores, universe, allowed)
        out = []
        if pooled is None:
            return out
        probs = pooled.data
        cursor = 0
        for (h, r, t), ok in zip(universe, flags):
            if not ok:
                continue
            p = float(probs[cursor])
            cursor += 1
            if p >= threshold:
                out.append((h, r, t, p))
        out.sort(key=lambda x: (-x[3], x[0], x[1], x[2]))
        return out
