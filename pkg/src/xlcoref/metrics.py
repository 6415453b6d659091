"""Coreference evaluation: MUC, B-cubed, CEAF_e, their average, mention F1.

All counts accumulate as exact rationals and divide once at the end, so
hand-derived oracle values match to full float precision. Corpus-level scores
aggregate numerators and denominators across documents, never per-document F1s.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Iterable

from scipy.optimize import linear_sum_assignment

__all__ = [
    "PRF",
    "muc",
    "b_cubed",
    "ceaf_e",
    "avg_f1",
    "mention_f1",
    "CorpusScorer",
    "format_report",
]

Cluster = frozenset
_Counts = tuple[Fraction, Fraction, Fraction, Fraction]  # rn, rd, pn, pd


@dataclass(frozen=True)
class PRF:
    recall: float
    precision: float
    f1: float


def _normalize(clusters) -> list[frozenset]:
    out = [frozenset(c) for c in clusters]
    for c in out:
        if not c:
            raise ValueError("empty cluster")
    return out


def _prf(rn: Fraction, rd: Fraction, pn: Fraction, pd: Fraction) -> PRF:
    r = Fraction(rn, rd) if rd else Fraction(0)
    p = Fraction(pn, pd) if pd else Fraction(0)
    f = 2 * p * r / (p + r) if p + r else Fraction(0)
    return PRF(recall=float(r), precision=float(p), f1=float(f))


def _mention_index(clusters: list[frozenset]) -> dict[Hashable, int]:
    return {m: idx for idx, c in enumerate(clusters) for m in c}


def _muc_half(keys: list[frozenset], response: list[frozenset]) -> tuple[Fraction, Fraction]:
    """Link counts for one direction: sum of |S| - |partition(S)| over ``keys``."""
    index = _mention_index(response)
    num = den = 0
    for cluster in keys:
        parts = {index[m] for m in cluster if m in index}
        parts_count = len(parts) + sum(1 for m in cluster if m not in index)
        num += len(cluster) - parts_count
        den += len(cluster) - 1
    return Fraction(num), Fraction(den)


def muc_counts(gold, pred) -> _Counts:
    gold, pred = _normalize(gold), _normalize(pred)
    rn, rd = _muc_half(gold, pred)
    pn, pd = _muc_half(pred, gold)
    return rn, rd, pn, pd


def muc(gold, pred) -> PRF:
    """Link-based metric: minimal missing/extra coreference links."""
    return _prf(*muc_counts(gold, pred))


def _b3_half(keys: list[frozenset], response: list[frozenset]) -> tuple[Fraction, Fraction]:
    """Per-mention overlap ratios for one direction, summed over ``keys``."""
    index = _mention_index(response)
    total = Fraction(0)
    count = 0
    for cluster in keys:
        for m in cluster:
            other = response[index[m]] if m in index else frozenset([m])
            total += Fraction(len(cluster & other), len(cluster))
            count += 1
    return total, Fraction(count)


def b_cubed_counts(gold, pred) -> _Counts:
    gold, pred = _normalize(gold), _normalize(pred)
    rn, rd = _b3_half(gold, pred)
    pn, pd = _b3_half(pred, gold)
    return rn, rd, pn, pd


def b_cubed(gold, pred) -> PRF:
    """Mention-based metric: average per-mention cluster-overlap ratios.

    A mention absent from the other side counts as a singleton there.
    """
    return _prf(*b_cubed_counts(gold, pred))


def _with_singletons(clusters: list[frozenset], other: list[frozenset]) -> list[frozenset]:
    covered = {m for c in clusters for m in c}
    extra = sorted({m for c in other for m in c} - covered)
    return clusters + [frozenset([m]) for m in extra]


def phi4(k: frozenset, r: frozenset) -> Fraction:
    return Fraction(2 * len(k & r), len(k) + len(r))


def optimal_alignment_total(gold: list[frozenset], pred: list[frozenset]) -> Fraction:
    """Best one-to-one cluster alignment value under phi4, exactly.

    The assignment is found by an exact combinatorial solver on the float
    matrix; the total is then re-summed in exact arithmetic.
    """
    if not gold or not pred:
        return Fraction(0)
    sims = [[phi4(k, r) for r in pred] for k in gold]
    row_ind, col_ind = linear_sum_assignment(
        [[float(s) for s in row] for row in sims], maximize=True
    )
    return sum((sims[i][j] for i, j in zip(row_ind, col_ind)), Fraction(0))


def ceaf_e_counts(gold, pred) -> _Counts:
    gold, pred = _normalize(gold), _normalize(pred)
    gold_full = _with_singletons(gold, pred)
    pred_full = _with_singletons(pred, gold)
    phi_star = optimal_alignment_total(gold_full, pred_full)
    return phi_star, Fraction(len(gold_full)), phi_star, Fraction(len(pred_full))


def ceaf_e(gold, pred) -> PRF:
    """Entity-based metric over the optimal one-to-one cluster alignment.

    Mentions present on only one side enter the other side as singleton
    clusters before aligning.
    """
    return _prf(*ceaf_e_counts(gold, pred))


def avg_f1(muc_prf: PRF, b3_prf: PRF, ceafe_prf: PRF) -> float:
    """Unweighted mean of the three F1 scores."""
    return (muc_prf.f1 + b3_prf.f1 + ceafe_prf.f1) / 3.0


def mention_f1(gold_mentions: Iterable, predicted_mentions: Iterable) -> PRF:
    """Exact-boundary precision/recall/F1 over mention sets."""
    gold, pred = set(gold_mentions), set(predicted_mentions)
    tp = Fraction(len(gold & pred))
    return _prf(tp, Fraction(len(gold)), tp, Fraction(len(pred)))


_ZERO: _Counts = (Fraction(0), Fraction(0), Fraction(0), Fraction(0))


def _acc(a: _Counts, b: _Counts) -> _Counts:
    return tuple(x + y for x, y in zip(a, b))  # type: ignore[return-value]


class CorpusScorer:
    """Accumulates exact counts over documents; divides once in ``result``."""

    def __init__(self):
        self._muc = _ZERO
        self._b3 = _ZERO
        self._ceafe = _ZERO
        self._mention = _ZERO

    def add(
        self,
        gold_clusters,
        pred_clusters,
        gold_mentions: Iterable = (),
        pred_mentions: Iterable = (),
    ) -> None:
        self._muc = _acc(self._muc, muc_counts(gold_clusters, pred_clusters))
        self._b3 = _acc(self._b3, b_cubed_counts(gold_clusters, pred_clusters))
        self._ceafe = _acc(self._ceafe, ceaf_e_counts(gold_clusters, pred_clusters))
        gold, pred = set(gold_mentions), set(pred_mentions)
        tp = Fraction(len(gold & pred))
        self._mention = _acc(
            self._mention, (tp, Fraction(len(gold)), tp, Fraction(len(pred)))
        )

    def result(self) -> dict:
        muc_prf = _prf(*self._muc)
        b3_prf = _prf(*self._b3)
        ceafe_prf = _prf(*self._ceafe)
        return {
            "mention": _prf(*self._mention),
            "muc": muc_prf,
            "b_cubed": b3_prf,
            "ceaf_e": ceafe_prf,
            "avg_f1": avg_f1(muc_prf, b3_prf, ceafe_prf),
        }


def format_report(result: dict) -> str:
    """One table row per metric: mention F1, R/P/F1 for each metric, avg F1."""
    lines = [
        f"{'metric':<10} {'R':>8} {'P':>8} {'F1':>8}",
        f"{'mention':<10} {result['mention'].recall:8.4f} "
        f"{result['mention'].precision:8.4f} {result['mention'].f1:8.4f}",
    ]
    for key, label in (("muc", "MUC"), ("b_cubed", "B3"), ("ceaf_e", "CEAFe")):
        prf = result[key]
        lines.append(
            f"{label:<10} {prf.recall:8.4f} {prf.precision:8.4f} {prf.f1:8.4f}"
        )
    lines.append(f"{'avg F1':<10} {result['avg_f1']:26.4f}")
    return "\n".join(lines)
