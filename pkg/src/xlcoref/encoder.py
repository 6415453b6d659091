"""Contextual token encoding, span enumeration, span representations, scoring.

The encoder is a small bidirectional recurrent layer run independently over
each sentence. A span is represented as the concatenation of its first token
state, last token state, an attention-weighted head state, and a learned
width-bucket embedding. Mention scores come from a shared feed-forward
scorer, optionally behind a residual adapter for target-side spans.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Document, Span

__all__ = [
    "NUM_BUCKETS",
    "MASK_NEG",
    "bucket",
    "encode",
    "enumerate_spans",
    "span_representations",
    "apply_adapter",
    "mention_scores",
    "spans_cross",
    "prune_spans",
]

# Shared bucket scheme for widths, mention distances, and start offsets.
# Index 0 is the exact-zero bucket (used by cross-lingual offsets only).
_BUCKET_EDGES = (1, 2, 3, 4, 5, 8, 16, 32)
NUM_BUCKETS = 9

# Additive mask value; large enough to zero out softmax weight, small enough
# to stay finite through every op.
MASK_NEG = -1e30


def bucket(value: int) -> int:
    """Map a nonnegative width/distance/offset to its bucket index."""
    if value < 0:
        raise ValueError(f"bucket: negative value {value}")
    for i, edge in enumerate(_BUCKET_EDGES):
        if value < edge:
            return i
    return NUM_BUCKETS - 1


def encode(sentence_ids: list[list[int]], store, prefix: str = "") -> Tensor:
    """Run the bidirectional recurrence over each sentence.

    Returns one ``(total_tokens, 2H)`` matrix; the recurrent state resets at
    every sentence boundary. ``prefix`` selects the parameter set (``""`` for
    the source/shared encoder, ``"target_"`` for a separate target encoder).
    """
    embedding = store[prefix + "embedding"]
    hidden_dim = store[prefix + "rnn_fwd_wh"].shape[0]
    outputs = []
    for ids in sentence_ids:
        x = ad.gather_rows(embedding, ids)
        fwd = _run_direction(x, store, prefix + "rnn_fwd_", hidden_dim, reverse=False)
        bwd = _run_direction(x, store, prefix + "rnn_bwd_", hidden_dim, reverse=True)
        outputs.append(ad.concat([fwd, bwd], axis=1))
    return outputs[0] if len(outputs) == 1 else ad.concat(outputs, axis=0)


def _run_direction(x: Tensor, store, prefix: str, hidden_dim: int, reverse: bool) -> Tensor:
    length = x.shape[0]
    xw = ad.matmul(x, store[prefix + "wx"])
    wh = store[prefix + "wh"]
    b = store[prefix + "b"]
    h = ad.constant(np.zeros((1, hidden_dim)))
    steps = range(length - 1, -1, -1) if reverse else range(length)
    states: list[Tensor] = []
    for t in steps:
        h = ad.tanh(ad.add(ad.add(ad.slice_rows(xw, t, t + 1), ad.matmul(h, wh)), b))
        states.append(h)
    if reverse:
        states.reverse()
    return states[0] if length == 1 else ad.concat(states, axis=0)


def enumerate_spans(doc: Document, max_width: int) -> list[Span]:
    """All spans of width <= max_width inside a sentence, ordered by (start, end)."""
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    spans = []
    for lo, hi in doc.sentence_bounds:
        for start in range(lo, hi):
            for end in range(start, min(start + max_width, hi)):
                spans.append(Span(start, end))
    spans.sort()
    return spans


def span_representations(spans: list[Span], hidden: Tensor, store) -> Tensor:
    """Four-part representation for every span, as one ``(n_spans, D)`` matrix.

    The head state is an attention-weighted sum over the span's own token
    states, with weights softmax-normalized within the span.
    """
    n_tokens = hidden.shape[0]
    starts = np.array([s.start for s in spans], dtype=np.intp)
    ends = np.array([s.end for s in spans], dtype=np.intp)
    if len(spans) and ends.max() >= n_tokens:
        raise ValueError("span outside the encoded document")

    start_states = ad.gather_rows(hidden, starts)
    end_states = ad.gather_rows(hidden, ends)

    token_scores = ad.reshape(ad.matmul(hidden, store["head_attention"]), (1, n_tokens))
    mask = np.zeros((len(spans), n_tokens))
    for row, span in enumerate(spans):
        mask[row, span.start : span.end + 1] = 1.0
    masked = ad.add(
        ad.mul(ad.constant(mask), token_scores),
        ad.constant((1.0 - mask) * MASK_NEG),
    )
    weights = ad.softmax(masked, axis=1)
    head_states = ad.matmul(weights, hidden)

    width_ids = [bucket(s.width) for s in spans]
    width_features = ad.gather_rows(store["width_embedding"], width_ids)

    return ad.concat([start_states, end_states, head_states, width_features], axis=1)


def apply_adapter(g: Tensor, store, prefix: str) -> Tensor:
    """Residual one-hidden-layer adapter: ``g + relu(g W1 + b1) W2 + b2``.

    The output projection starts at zero, so a freshly initialized adapter is
    the identity map.
    """
    hidden = ad.relu(ad.add(ad.matmul(g, store[prefix + "w1"]), store[prefix + "b1"]))
    delta = ad.add(ad.matmul(hidden, store[prefix + "w2"]), store[prefix + "b2"])
    return ad.add(g, delta)


def mention_scores(rep: Tensor, store, use_adapter: bool = False) -> Tensor:
    """Mention score per span, shape ``(n_spans, 1)``.

    Target-side spans pass through the mention adapter before the shared
    scorer; source-side spans go straight in.
    """
    g = apply_adapter(rep, store, "adapter_mention_") if use_adapter else rep
    h = ad.relu(ad.add(ad.matmul(g, store["mention_ffn_w1"]), store["mention_ffn_b1"]))
    return ad.add(ad.matmul(h, store["mention_ffn_w2"]), store["mention_ffn_b2"])


def spans_cross(a: Span, b: Span) -> bool:
    """Partial overlap (neither nested nor disjoint)."""
    return (a.start < b.start <= a.end < b.end) or (b.start < a.start <= b.end < a.end)


def prune_spans(
    spans: list[Span],
    scores: np.ndarray,
    num_tokens: int,
    ratio: float,
    max_count: int,
) -> list[int]:
    """Indices of the retained spans, sorted by (start, end).

    Keeps the top ``k = min(ceil(ratio * num_tokens), max_count)`` spans by
    score (ties broken by position), then drops any that partially overlap a
    higher-scoring kept span.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio {ratio} outside (0, 1]")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    k = min(math.ceil(ratio * num_tokens), max_count)
    order = sorted(
        range(len(spans)),
        key=lambda i: (-scores[i], spans[i].start, spans[i].end),
    )
    kept: list[int] = []
    for i in order[:k]:
        if any(spans_cross(spans[i], spans[j]) for j in kept):
            continue
        kept.append(i)
    kept.sort(key=lambda i: (spans[i].start, spans[i].end))
    return kept
