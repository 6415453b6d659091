"""Pairwise antecedent scoring, the antecedent softmax, training loss, decoding.

Every mention ranks a dummy "no antecedent" option (score fixed at 0) against
its nearest preceding mentions. Training maximizes the marginal likelihood of
the gold antecedents; inference greedily links each mention to its best-scoring
antecedent and takes the transitive closure.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Span
from .encoder import MASK_NEG, bucket

__all__ = [
    "antecedent_candidates",
    "pairwise_scores",
    "assemble_score_matrix",
    "masked_logsumexp",
    "gold_antecedent_mask",
    "coref_loss",
    "antecedent_distribution",
    "predict_antecedents",
    "form_clusters",
]


def antecedent_candidates(n_mentions: int, max_antecedents: int) -> list[np.ndarray]:
    """Candidate antecedent indices per mention: the nearest preceding spans."""
    return [
        np.arange(max(0, i - max_antecedents), i, dtype=np.intp)
        for i in range(n_mentions)
    ]


def _flatten_pairs(candidates: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = [], []
    for i, cand in enumerate(candidates):
        rows.extend([i] * len(cand))
        cols.extend(cand.tolist())
    return np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp)


def pairwise_scores(
    rep: Tensor,
    scores: Tensor,
    pair_i: np.ndarray,
    pair_j: np.ndarray,
    bucket_ids: np.ndarray,
    store,
) -> Tensor:
    """Coreference score for each (i, j) pair, flat shape ``(n_pairs,)``.

    ``s(i, j) = s_m(i) + s_m(j) + FFN([g_i, g_j, g_i * g_j, phi(i, j)])``
    where ``phi`` embeds the given distance bucket.
    """
    g_i = ad.gather_rows(rep, pair_i)
    g_j = ad.gather_rows(rep, pair_j)
    phi = ad.gather_rows(store["distance_embedding"], bucket_ids)
    features = ad.concat([g_i, g_j, ad.mul(g_i, g_j), phi], axis=1)
    h = ad.relu(ad.add(ad.matmul(features, store["pair_ffn_w1"]), store["pair_ffn_b1"]))
    pair_term = ad.add(ad.matmul(h, store["pair_ffn_w2"]), store["pair_ffn_b2"])
    total = ad.add(
        ad.add(pair_term, ad.gather_rows(scores, pair_i)),
        ad.gather_rows(scores, pair_j),
    )
    return ad.reshape(total, (len(pair_i),))


def score_pairs_for_mentions(
    rep: Tensor,
    scores: Tensor,
    candidates: list[np.ndarray],
    store,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Score every (mention, candidate) pair with ordinal-distance buckets."""
    pair_i, pair_j = _flatten_pairs(candidates)
    buckets = np.array([bucket(int(i - j)) for i, j in zip(pair_i, pair_j)], dtype=np.intp)
    if len(pair_i) == 0:
        return ad.constant(np.zeros((0,))), pair_i, pair_j
    return pairwise_scores(rep, scores, pair_i, pair_j, buckets, store), pair_i, pair_j


def assemble_score_matrix(
    pair_values: Tensor,
    pair_i: np.ndarray,
    pair_j: np.ndarray,
    candidates: list[np.ndarray],
    max_antecedents: int,
) -> tuple[Tensor, np.ndarray]:
    """Dense ``(n_mentions, 1 + max_antecedents)`` score matrix.

    Column 0 is the dummy antecedent (score exactly 0); candidate scores fill
    columns 1.. in candidate order, with unusable slots held at a large
    negative constant. Also returns the 0/1 validity mask.
    """
    n = len(candidates)
    base = np.full((n, 1 + max_antecedents), MASK_NEG)
    base[:, 0] = 0.0
    mask = np.zeros_like(base)
    mask[:, 0] = 1.0
    col_of: dict[tuple[int, int], int] = {}
    for i, cand in enumerate(candidates):
        for slot, j in enumerate(cand):
            col_of[(i, int(j))] = 1 + slot
            mask[i, 1 + slot] = 1.0
    if len(pair_i) == 0:
        return ad.constant(base), mask
    rows = pair_i
    cols = np.array([col_of[(int(i), int(j))] for i, j in zip(pair_i, pair_j)], dtype=np.intp)
    return ad.scatter_rows(base, pair_values, rows, cols), mask


def masked_logsumexp(matrix: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise log-sum-exp over the entries where ``mask`` is 1."""
    n, _ = matrix.shape
    masked = ad.add(matrix, ad.constant((1.0 - mask) * MASK_NEG))
    mx, _ = ad.max_with_argmax(masked, axis=1)
    shifted = ad.add(masked, ad.mul(ad.reshape(mx, (n, 1)), ad.constant(-1.0)))
    totals = ad.tensor_sum(ad.exp(shifted), axis=1)
    return ad.add(mx, ad.log(totals))


def gold_antecedent_mask(
    mention_spans: list[Span],
    candidates: list[np.ndarray],
    gold_clusters,
    max_antecedents: int,
) -> np.ndarray:
    """0/1 mask over the dense score matrix marking each mention's gold targets.

    A mention whose gold cluster contributes no candidate antecedent (or which
    is not a gold mention at all) gets the dummy column instead.
    """
    cluster_of: dict[Span, int] = {}
    for cid, cluster in enumerate(gold_clusters):
        for span in cluster:
            cluster_of[span] = cid
    n = len(mention_spans)
    mask = np.zeros((n, 1 + max_antecedents))
    for i, span in enumerate(mention_spans):
        cid = cluster_of.get(span)
        marked = False
        if cid is not None:
            for slot, j in enumerate(candidates[i]):
                if cluster_of.get(mention_spans[int(j)]) == cid:
                    mask[i, 1 + slot] = 1.0
                    marked = True
        if not marked:
            mask[i, 0] = 1.0
    return mask


def coref_loss(matrix: Tensor, valid_mask: np.ndarray, gold_mask: np.ndarray) -> Tensor:
    """Negative marginal log-likelihood of the gold antecedents.

    Per mention: ``logsumexp(all candidates) - logsumexp(gold candidates)``,
    summed over mentions. Always nonnegative.
    """
    if matrix.shape[0] == 0:
        return ad.constant(0.0)
    lse_all = masked_logsumexp(matrix, valid_mask)
    lse_gold = masked_logsumexp(matrix, gold_mask)
    return ad.tensor_sum(ad.add(lse_all, ad.mul(lse_gold, ad.constant(-1.0))))


def antecedent_distribution(row) -> np.ndarray:
    """Softmax over one mention's antecedent scores (dummy included in the row)."""
    scores = np.asarray(row, dtype=np.float64)
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def predict_antecedents(
    matrix_values: np.ndarray,
    valid_mask: np.ndarray,
    candidates: list[np.ndarray],
) -> list[int | None]:
    """Greedy antecedent per mention: best-scoring candidate, or none.

    The dummy option scores 0; exact ties go to the dummy first, then to the
    nearest antecedent.
    """
    links: list[int | None] = []
    for i, cand in enumerate(candidates):
        best: int | None = None
        best_score = 0.0
        for slot, j in enumerate(cand):
            if valid_mask[i, 1 + slot] != 1.0:
                continue
            s = matrix_values[i, 1 + slot]
            # Strictly-better wins; an equal score from a nearer antecedent
            # (larger j) replaces an earlier non-dummy choice but never the dummy.
            if s > best_score or (s == best_score and best is not None and j > best):
                best = int(j)
                best_score = s
        links.append(best)
    return links


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def form_clusters(
    links: list[int | None],
    mention_spans: list[Span],
) -> list[frozenset[Span]]:
    """Transitive closure of the predicted links; singletons are dropped."""
    uf = _UnionFind(len(links))
    for i, j in enumerate(links):
        if j is not None:
            if j >= i:
                raise ValueError(f"link {i} -> {j} does not point backwards")
            uf.union(j, i)
    groups: dict[int, set[Span]] = {}
    for i, span in enumerate(mention_spans):
        groups.setdefault(uf.find(i), set()).add(span)
    clusters = [frozenset(g) for g in groups.values() if len(g) >= 2]
    clusters.sort(key=lambda c: min(c))
    return clusters
