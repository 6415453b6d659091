"""Model assembly: configuration, parameter initialization, forward passes.

Ties the encoder, the pairwise scorer, and the cross-lingual scorer together
into per-document training losses and a greedy decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import coref as C
from . import encoder as enc
from . import xlingual as xl
from .autodiff import ParamStore, Tensor, seeded_rng
from .corpus import Document, ParallelDocument, Span, Vocabulary

__all__ = [
    "ModelConfig",
    "init_params",
    "add_xl_params",
    "SpanForward",
    "DocumentForward",
    "ParallelForward",
    "forward_document",
    "document_loss",
    "decode_document",
    "predicted_mentions",
    "forward_parallel",
    "predict_pairs",
]

_ENCODER_MODES = ("shared", "separate")
_POSITION_MODES = ("document", "sentence")


@dataclass
class ModelConfig:
    """Every architecture hyperparameter, with desk-scale defaults."""

    embed_dim: int = 32
    hidden_dim: int = 16
    width_feature_dim: int = 8
    ffn_hidden_dim: int = 64
    adapter_hidden_dim: int = xl.ADAPTER_HIDDEN
    max_span_width: int = 10
    span_ratio: float = 0.4
    max_spans: int = 50
    max_antecedents: int = 50
    encoder_mode: str = "shared"
    window: int = 50
    xl_position_mode: str = "document"
    loss_ratio: float = 1.0

    def __post_init__(self):
        for name in (
            "embed_dim",
            "hidden_dim",
            "width_feature_dim",
            "ffn_hidden_dim",
            "adapter_hidden_dim",
            "max_span_width",
            "max_spans",
            "max_antecedents",
        ):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.span_ratio <= 1.0:
            raise ValueError("span_ratio must be in (0, 1]")
        if self.encoder_mode not in _ENCODER_MODES:
            raise ValueError(f"encoder_mode must be one of {_ENCODER_MODES}")
        if self.xl_position_mode not in _POSITION_MODES:
            raise ValueError(f"xl_position_mode must be one of {_POSITION_MODES}")
        if self.loss_ratio < 0.0:
            raise ValueError("loss_ratio must be >= 0")
        if self.window < 0:
            raise ValueError("window must be >= 0")

    @property
    def span_dim(self) -> int:
        """Dimension of the four-part span representation."""
        return 3 * (2 * self.hidden_dim) + self.width_feature_dim

    @property
    def pair_feature_dim(self) -> int:
        return 3 * self.span_dim + self.width_feature_dim


def _create(store: ParamStore, name: str, shape: tuple[int, ...], seed: int, kind: str) -> None:
    if kind == "zero":
        values = np.zeros(shape)
    else:
        fan_in = shape[1] if kind == "embedding" else shape[0]
        limit = 1.0 / np.sqrt(float(fan_in))
        values = seeded_rng(seed, name).uniform(-limit, limit, size=shape)
    store.add(name, values)


def _encoder_params(store: ParamStore, cfg: ModelConfig, vocab_size: int, seed: int, prefix: str) -> None:
    e, h = cfg.embed_dim, cfg.hidden_dim
    _create(store, prefix + "embedding", (vocab_size, e), seed, "embedding")
    for d in ("fwd", "bwd"):
        _create(store, f"{prefix}rnn_{d}_wx", (e, h), seed, "weight")
        _create(store, f"{prefix}rnn_{d}_wh", (h, h), seed, "weight")
        _create(store, f"{prefix}rnn_{d}_b", (1, h), seed, "zero")


def init_params(cfg: ModelConfig, vocab_size: int, seed: int) -> ParamStore:
    """Fresh, seeded parameters for the monolingual model.

    Weight matrices draw from a fan-in-scaled uniform; biases start at zero.
    Each tensor's values depend only on (seed, name), not on creation order.
    """
    store = ParamStore()
    d, w, f = cfg.span_dim, cfg.width_feature_dim, cfg.ffn_hidden_dim
    _encoder_params(store, cfg, vocab_size, seed, "")
    _create(store, "head_attention", (2 * cfg.hidden_dim, 1), seed, "weight")
    _create(store, "width_embedding", (enc.NUM_BUCKETS, w), seed, "embedding")
    _create(store, "distance_embedding", (enc.NUM_BUCKETS, w), seed, "embedding")
    _create(store, "mention_ffn_w1", (d, f), seed, "weight")
    _create(store, "mention_ffn_b1", (1, f), seed, "zero")
    _create(store, "mention_ffn_w2", (f, 1), seed, "weight")
    _create(store, "mention_ffn_b2", (1, 1), seed, "zero")
    _create(store, "pair_ffn_w1", (cfg.pair_feature_dim, f), seed, "weight")
    _create(store, "pair_ffn_b1", (1, f), seed, "zero")
    _create(store, "pair_ffn_w2", (f, 1), seed, "weight")
    _create(store, "pair_ffn_b2", (1, 1), seed, "zero")
    return store


def add_xl_params(
    store: ParamStore,
    cfg: ModelConfig,
    seed: int,
    target_vocab_size: Optional[int] = None,
) -> None:
    """Add fresh adapters (and, in separate mode, a target-side encoder).

    Adapter output projections start at zero, so both adapters begin as the
    identity map.
    """
    d, a = cfg.span_dim, cfg.adapter_hidden_dim
    for name in ("adapter_mention_", "adapter_coref_"):
        _create(store, name + "w1", (d, a), seed, "weight")
        _create(store, name + "b1", (1, a), seed, "zero")
        _create(store, name + "w2", (a, d), seed, "zero")
        _create(store, name + "b2", (1, d), seed, "zero")
    if cfg.encoder_mode == "separate":
        if target_vocab_size is None:
            raise ValueError("separate encoder mode needs a target vocabulary size")
        _encoder_params(store, cfg, target_vocab_size, seed, "target_")


@dataclass
class SpanForward:
    """Everything one side's span pipeline produces for a document."""

    doc: Document
    spans: list[Span]
    mentions: list[Span]
    kept: list[int]
    rep_kept: Tensor
    scores_kept: Tensor


@dataclass
class DocumentForward(SpanForward):
    """Monolingual forward pass: span pipeline plus the antecedent matrix."""

    candidates: list[np.ndarray] = field(default_factory=list)
    matrix: Tensor = None
    valid_mask: np.ndarray = None


@dataclass
class ParallelForward:
    """Joint forward pass over a parallel document."""

    source: DocumentForward
    target: SpanForward
    xl_candidates: list[np.ndarray]
    xl_matrix: Tensor
    xl_mask: np.ndarray


def _encode_spans(
    doc: Document,
    vocab: Vocabulary,
    store: ParamStore,
    cfg: ModelConfig,
    prefix: str = "",
    use_adapter: bool = False,
) -> SpanForward:
    ids = vocab.encode_sentences(doc.sentences)
    hidden = enc.encode(ids, store, prefix)
    spans = enc.enumerate_spans(doc, cfg.max_span_width)
    rep = enc.span_representations(spans, hidden, store)
    scores = enc.mention_scores(rep, store, use_adapter=use_adapter)
    kept = enc.prune_spans(spans, scores.data, doc.num_tokens, cfg.span_ratio, cfg.max_spans)
    return SpanForward(
        doc=doc,
        spans=spans,
        mentions=[spans[i] for i in kept],
        kept=kept,
        rep_kept=ad.gather_rows(rep, kept),
        scores_kept=ad.gather_rows(scores, kept),
    )


def forward_document(
    doc: Document,
    vocab: Vocabulary,
    store: ParamStore,
    cfg: ModelConfig,
) -> DocumentForward:
    """Source-side forward pass up to the dense antecedent score matrix."""
    sf = _encode_spans(doc, vocab, store, cfg)
    candidates = C.antecedent_candidates(len(sf.mentions), cfg.max_antecedents)
    pair_values, pair_i, pair_j = C.score_pairs_for_mentions(
        sf.rep_kept, sf.scores_kept, candidates, store
    )
    matrix, valid_mask = C.assemble_score_matrix(
        pair_values, pair_i, pair_j, candidates, cfg.max_antecedents
    )
    return DocumentForward(
        doc=sf.doc,
        spans=sf.spans,
        mentions=sf.mentions,
        kept=sf.kept,
        rep_kept=sf.rep_kept,
        scores_kept=sf.scores_kept,
        candidates=candidates,
        matrix=matrix,
        valid_mask=valid_mask,
    )


def document_loss(fw: DocumentForward, cfg: ModelConfig) -> Tensor:
    """Marginal log-likelihood loss of the document's gold clusters."""
    gold = C.gold_antecedent_mask(
        fw.mentions, fw.candidates, fw.doc.clusters, cfg.max_antecedents
    )
    return C.coref_loss(fw.matrix, fw.valid_mask, gold)


def decode_document(fw: DocumentForward) -> list[frozenset[Span]]:
    """Greedy antecedent links, then transitive closure."""
    links = C.predict_antecedents(fw.matrix.data, fw.valid_mask, fw.candidates)
    return C.form_clusters(links, fw.mentions)


def predicted_mentions(fw: SpanForward) -> set[Span]:
    """Pruned spans whose mention score clears the dummy-antecedent level 0."""
    flat = fw.scores_kept.data.reshape(-1)
    return {span for span, s in zip(fw.mentions, flat) if s > 0.0}


def forward_parallel(
    pdoc: ParallelDocument,
    vocab: Vocabulary,
    store: ParamStore,
    cfg: ModelConfig,
    target_vocab: Optional[Vocabulary] = None,
) -> ParallelForward:
    """Joint forward pass: monolingual source side plus the XL score matrix."""
    src = forward_document(pdoc.source, vocab, store, cfg)
    tdoc = pdoc.target_document()
    if cfg.encoder_mode == "separate":
        if target_vocab is None:
            raise ValueError("separate encoder mode needs a target vocabulary")
        tgt = _encode_spans(tdoc, target_vocab, store, cfg, "target_", use_adapter=True)
    else:
        tgt = _encode_spans(tdoc, vocab, store, cfg, "", use_adapter=True)
    a_c = enc.apply_adapter(tgt.rep_kept, store, "adapter_coref_")
    src_pos = xl.start_positions(src.mentions, pdoc.source, cfg.xl_position_mode)
    tgt_pos = xl.start_positions(tgt.mentions, tdoc, cfg.xl_position_mode)
    cands = xl.xl_candidates(src_pos, tgt_pos, cfg.window)
    matrix, mask = xl.xl_score_matrix(
        src.rep_kept,
        src.scores_kept,
        a_c,
        tgt.scores_kept,
        src_pos,
        tgt_pos,
        cands,
        store,
    )
    return ParallelForward(
        source=src, target=tgt, xl_candidates=cands, xl_matrix=matrix, xl_mask=mask
    )


def predict_pairs(pf: ParallelForward) -> list[tuple[Span, Span]]:
    """Best in-window target mention per source mention."""
    choices = xl.best_targets(pf.xl_matrix.data, pf.xl_mask)
    return [
        (pf.source.mentions[i], pf.target.mentions[j])
        for i, j in enumerate(choices)
        if j is not None
    ]
