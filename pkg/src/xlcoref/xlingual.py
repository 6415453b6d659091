"""Cross-lingual scoring between source and target mentions.

Target-side span representations pass through small residual adapters and are
scored against source mentions by the shared source-side scorers. Each source
mention picks its best-scoring in-window target mention; the unsupervised loss
pushes that best score up. Only source-side modules are used at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Document, ParallelDocument, Span
from .coref import pairwise_scores
from .encoder import MASK_NEG, bucket

__all__ = [
    "ADAPTER_HIDDEN",
    "start_positions",
    "xl_candidates",
    "xl_score_matrix",
    "xl_loss",
    "joint_loss",
    "PairAnalysis",
    "pair_labels",
    "analyze_pairs",
]

# Hidden width of the two residual adapters.
ADAPTER_HIDDEN = 500


def start_positions(spans: list[Span], doc: Document, mode: str) -> np.ndarray:
    """Position number of each span's first token.

    ``document`` mode counts from the start of the document, ``sentence`` mode
    from the start of the span's own sentence.
    """
    starts = np.array([s.start for s in spans], dtype=np.intp)
    if mode == "document":
        return starts
    if mode == "sentence":
        offsets = np.array(
            [doc.sentence_bounds[doc.sentence_index(s.start)][0] for s in spans],
            dtype=np.intp,
        )
        return starts - offsets
    raise ValueError(f"unknown position mode {mode!r}")


def xl_candidates(
    source_positions: np.ndarray,
    target_positions: np.ndarray,
    window: int,
) -> list[np.ndarray]:
    """Target candidates per source mention under the position-window rule.

    Target mention j is a candidate for source mention i when
    ``position(t_j) <= position(s_i) + window``.
    """
    return [
        np.flatnonzero(target_positions <= int(p) + window).astype(np.intp)
        for p in source_positions
    ]


def xl_score_matrix(
    source_rep: Tensor,
    source_scores: Tensor,
    target_rep_adapted: Tensor,
    target_scores: Tensor,
    source_positions: np.ndarray,
    target_positions: np.ndarray,
    candidates: list[np.ndarray],
    store,
) -> tuple[Tensor, np.ndarray]:
    """Dense ``(n_source, n_target)`` score matrix plus its 0/1 candidate mask.

    ``s_ij = s_m(g_si) + s_m(adapter_m(g_tj)) + FFN([g_si, a_cj, g_si * a_cj,
    phi_x])`` where ``a_cj`` is the coref-adapted target representation and
    ``phi_x`` embeds the bucketed absolute start offset. Non-candidate entries
    sit at a large negative constant and carry no gradient.
    """
    n_source = len(candidates)
    n_target = target_rep_adapted.shape[0]
    rows, cols = [], []
    for i, cand in enumerate(candidates):
        rows.extend([i] * len(cand))
        cols.extend(cand.tolist())
    mask = np.zeros((n_source, n_target))
    if rows:
        mask[rows, cols] = 1.0
    base = np.full((n_source, n_target), MASK_NEG)
    if not rows:
        return ad.constant(base), mask
    pair_i = np.asarray(rows, dtype=np.intp)
    pair_j = np.asarray(cols, dtype=np.intp)
    offsets = np.abs(
        source_positions[pair_i].astype(np.int64)
        - target_positions[pair_j].astype(np.int64)
    )
    buckets = np.array([bucket(int(o)) for o in offsets], dtype=np.intp)
    g_s = ad.gather_rows(source_rep, pair_i)
    a_c = ad.gather_rows(target_rep_adapted, pair_j)
    phi = ad.gather_rows(store["distance_embedding"], buckets)
    features = ad.concat([g_s, a_c, ad.mul(g_s, a_c), phi], axis=1)
    h = ad.relu(ad.add(ad.matmul(features, store["pair_ffn_w1"]), store["pair_ffn_b1"]))
    pair_term = ad.add(ad.matmul(h, store["pair_ffn_w2"]), store["pair_ffn_b2"])
    total = ad.add(
        ad.add(pair_term, ad.gather_rows(source_scores, pair_i)),
        ad.gather_rows(target_scores, pair_j),
    )
    flat = ad.reshape(total, (len(pair_i),))
    return ad.scatter_rows(base, flat, pair_i, pair_j), mask


def best_targets(matrix_values: np.ndarray, mask: np.ndarray) -> list[int | None]:
    """Argmax target per source row, or None for rows with no candidates."""
    choices: list[int | None] = []
    for i in range(matrix_values.shape[0]):
        if not mask[i].any():
            choices.append(None)
            continue
        row = np.where(mask[i] == 1.0, matrix_values[i], -np.inf)
        choices.append(int(np.argmax(row)))
    return choices


def xl_loss(matrix: Tensor, mask: np.ndarray) -> Tensor:
    """Sum over source mentions of ``exp(-best score)``.

    Rows with no candidates contribute 0. The gradient reaches only each row's
    argmax entry (the max subgradient), so raising a non-best score never
    changes the loss.
    """
    if matrix.shape[0] == 0 or matrix.shape[1] == 0:
        return ad.constant(0.0)
    has = (mask.sum(axis=1) > 0).astype(np.float64)
    row_max, _ = ad.max_with_argmax(matrix, axis=1)
    # Masked-empty rows sit at the mask constant; zeroing them *before* exp
    # keeps every intermediate finite.
    clean = ad.mul(row_max, ad.constant(has))
    terms = ad.mul(ad.exp(ad.mul(clean, ad.constant(-1.0))), ad.constant(has))
    return ad.tensor_sum(terms)


def joint_loss(l_coref: Tensor, l_x: Tensor, ratio: float = 1.0) -> Tensor:
    """Training objective for a parallel document: ``l_coref + ratio * l_x``."""
    return ad.add(l_coref, ad.mul(l_x, ad.constant(float(ratio))))


@dataclass(frozen=True)
class PairAnalysis:
    """Breakdown of predicted source-target mention pairs by relation."""

    total: int
    identical: int
    coreferential: int
    same_surface: int
    other: int

    def to_dict(self) -> dict[str, int]:
        return {
            "total": self.total,
            "identical": self.identical,
            "coreferential": self.coreferential,
            "same_surface": self.same_surface,
            "other": self.other,
        }

    @staticmethod
    def accumulate(parts: list["PairAnalysis"]) -> "PairAnalysis":
        return PairAnalysis(
            total=sum(p.total for p in parts),
            identical=sum(p.identical for p in parts),
            coreferential=sum(p.coreferential for p in parts),
            same_surface=sum(p.same_surface for p in parts),
            other=sum(p.other for p in parts),
        )


def pair_labels(
    pdoc: ParallelDocument,
    pairs: list[tuple[Span, Span]],
) -> list[str]:
    """Relation label for each predicted (source span, target span) pair.

    Only meaningful when the target side is an identity copy of the source, so
    that target spans live in the source index space. Precedence: identical
    span > coreferential under the gold clusters > same surface string > other.
    """
    if not pdoc.is_identity:
        raise ValueError(
            f"pair analysis requires identity-mode parallel data ({pdoc.source.doc_key})"
        )
    doc = pdoc.source
    cluster_of: dict[Span, int] = {}
    for cid, cluster in enumerate(doc.clusters):
        for span in cluster:
            cluster_of[span] = cid
    labels = []
    for src, tgt in pairs:
        if src == tgt:
            labels.append("identical")
        elif (
            src in cluster_of
            and tgt in cluster_of
            and cluster_of[src] == cluster_of[tgt]
        ):
            labels.append("coreferential")
        elif doc.span_tokens(src) == doc.span_tokens(tgt):
            labels.append("same_surface")
        else:
            labels.append("other")
    return labels


def analyze_pairs(
    pdoc: ParallelDocument,
    pairs: list[tuple[Span, Span]],
) -> PairAnalysis:
    """Count predicted pairs by relation; see :func:`pair_labels`."""
    labels = pair_labels(pdoc, pairs)
    return PairAnalysis(
        total=len(labels),
        identical=labels.count("identical"),
        coreferential=labels.count("coreferential"),
        same_surface=labels.count("same_surface"),
        other=labels.count("other"),
    )
