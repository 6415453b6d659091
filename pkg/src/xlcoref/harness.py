"""Training loops, evaluation, prediction, and run-folder management.

Every run writes a self-contained output directory: the resolved config, the
vocabulary, a line-oriented JSON log with one entry per epoch, and the best
checkpoint by dev average F1. Given the same config and seed, every logged
number reproduces bit-for-bit.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import model as md
from .autodiff import AdamConfig, ParamStore, Tensor, adam_step, backward
from .corpus import (
    CorpusError,
    Document,
    ParallelDocument,
    Vocabulary,
    build_vocab,
    generate_toy_corpus,
    load_corpus,
    load_parallel_corpus,
    pseudo_translate,
    save_corpus,
    save_parallel_corpus,
)
from .metrics import CorpusScorer
from .model import ModelConfig
from .xlingual import PairAnalysis, analyze_pairs, joint_loss, pair_labels, xl_loss

__all__ = [
    "HarnessError",
    "RunConfig",
    "load_config",
    "TrainResult",
    "train",
    "train_xl",
    "evaluate",
    "evaluate_documents",
    "predict",
    "predict_documents",
    "analyze",
    "gen_corpus",
    "translate",
]


class HarnessError(RuntimeError):
    """Operational failures: missing files, bad configs, mismatched shapes."""


class RunConfig(BaseModel):
    """Everything a training run needs; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    train_path: str
    dev_path: str
    output_dir: str
    test_path: Optional[str] = None
    parallel_train_path: Optional[str] = None
    init_checkpoint: Optional[str] = None

    epochs: int = Field(default=24, ge=0)
    seed: int = 0
    lr: float = Field(default=1e-3, gt=0)

    embed_dim: int = Field(default=32, ge=1)
    hidden_dim: int = Field(default=16, ge=1)
    width_feature_dim: int = Field(default=8, ge=1)
    ffn_hidden_dim: int = Field(default=64, ge=1)
    adapter_hidden_dim: int = Field(default=500, ge=1)
    max_span_width: int = Field(default=10, ge=1)
    span_ratio: float = Field(default=0.4, gt=0, le=1)
    max_spans: int = Field(default=50, ge=1)
    max_antecedents: int = Field(default=50, ge=1)
    encoder_mode: str = "shared"
    window: int = Field(default=50, ge=0)
    xl_position_mode: str = "document"
    loss_ratio: float = Field(default=1.0, ge=0)

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            width_feature_dim=self.width_feature_dim,
            ffn_hidden_dim=self.ffn_hidden_dim,
            adapter_hidden_dim=self.adapter_hidden_dim,
            max_span_width=self.max_span_width,
            span_ratio=self.span_ratio,
            max_spans=self.max_spans,
            max_antecedents=self.max_antecedents,
            encoder_mode=self.encoder_mode,
            window=self.window,
            xl_position_mode=self.xl_position_mode,
            loss_ratio=self.loss_ratio,
        )


def load_config(path: str, overrides: tuple[str, ...] = ()) -> RunConfig:
    """Read a JSON config file and apply ``key=value`` overrides."""
    p = Path(path)
    if not p.is_file():
        raise HarnessError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise HarnessError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise HarnessError(f"config file {path} must hold a JSON object")
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise HarnessError(f"override {item!r} is not of the form key=value")
        raw[key] = value
    try:
        return RunConfig(**raw)
    except ValidationError as e:
        raise HarnessError(f"invalid config: {e}") from e


def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise HarnessError(f"{what} not found: {path}")


def _read_vocab_sidecar(checkpoint: str, name: str = "vocab.json") -> Vocabulary:
    sidecar = Path(checkpoint).parent / name
    if not sidecar.is_file():
        raise HarnessError(f"vocabulary sidecar not found next to checkpoint: {sidecar}")
    return Vocabulary.from_json(sidecar.read_text(encoding="utf-8"))


def _check_vocab(store: ParamStore, vocab: Vocabulary, prefix: str = "") -> None:
    rows = store[prefix + "embedding"].shape[0]
    if rows != len(vocab):
        raise HarnessError(
            f"corpus/checkpoint vocabulary mismatch: embedding has {rows} rows, "
            f"vocabulary has {len(vocab)} entries"
        )


def _extend_unseen(vocab: Vocabulary, docs: list[Document]) -> Vocabulary:
    """Grow a vocabulary with tokens it has never seen, in first-seen order."""
    unseen: list[str] = []
    known: set[str] = set()
    for doc in docs:
        for sentence in doc.sentences:
            for tok in sentence:
                if vocab.lookup(tok) == vocab.unk_id and tok not in known:
                    known.add(tok)
                    unseen.append(tok)
    return vocab.extended(unseen) if unseen else vocab


def _load_init(store: ParamStore, checkpoint: str, cfg: ModelConfig) -> None:
    """Copy values from a checkpoint into an initialized store.

    Names missing from the checkpoint keep their fresh initialization (that is
    how adapters start); names missing from the store are ignored. A grown
    shared embedding keeps the checkpoint rows and fresh rows above them; any
    other shape difference is an error listing the offending tensors.
    """
    loaded = ParamStore.load(checkpoint)
    mismatches = []
    for name in loaded.names():
        if name not in store:
            continue
        src = loaded[name].data
        dst_shape = store[name].shape
        if src.shape == dst_shape:
            store.replace(name, src)
        elif (
            name == "embedding"
            and src.shape[1:] == dst_shape[1:]
            and src.shape[0] < dst_shape[0]
        ):
            merged = store[name].data.copy()
            merged[: src.shape[0]] = src
            store.replace(name, merged)
        else:
            mismatches.append(f"{name}: checkpoint {src.shape} vs model {dst_shape}")
    if mismatches:
        raise HarnessError(
            "init_checkpoint shape mismatch: " + "; ".join(sorted(mismatches))
        )


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint_path: Path
    log: list[dict]
    best_epoch: int
    best_dev_avg_f1: float


def _gold_mentions(doc: Document) -> set:
    return {span for cluster in doc.clusters for span in cluster}


def evaluate_documents(
    docs: list[Document],
    vocab: Vocabulary,
    store: ParamStore,
    cfg: ModelConfig,
) -> dict:
    """Decode every document and aggregate corpus-level metrics."""
    scorer = CorpusScorer()
    for doc in docs:
        fw = md.forward_document(doc, vocab, store, cfg)
        pred = md.decode_document(fw)
        scorer.add(
            doc.clusters,
            pred,
            gold_mentions=_gold_mentions(doc),
            pred_mentions=md.predicted_mentions(fw),
        )
    return scorer.result()


def _shuffled(n: int, seed: int, epoch: int) -> list[int]:
    order = list(range(n))
    random.Random(f"{seed}:epoch:{epoch}").shuffle(order)
    return order


def _prepare_run_dir(config: RunConfig) -> Path:
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    resolved = json.dumps(config.model_dump(), indent=2, sort_keys=True)
    (run_dir / "config.json").write_text(resolved + "\n", encoding="utf-8")
    return run_dir


def _item_losses(
    item,
    vocab: Vocabulary,
    target_vocab: Optional[Vocabulary],
    store: ParamStore,
    cfg: ModelConfig,
) -> tuple[Tensor, float, float]:
    """Loss graph plus (coref, xl) component values for one training item."""
    if isinstance(item, ParallelDocument) and cfg.loss_ratio != 0.0:
        pf = md.forward_parallel(item, vocab, store, cfg, target_vocab)
        l_coref = md.document_loss(pf.source, cfg)
        l_x = xl_loss(pf.xl_matrix, pf.xl_mask)
        total = joint_loss(l_coref, l_x, cfg.loss_ratio)
        return total, l_coref.item(), l_x.item()
    doc = item.source if isinstance(item, ParallelDocument) else item
    fw = md.forward_document(doc, vocab, store, cfg)
    l_coref = md.document_loss(fw, cfg)
    return l_coref, l_coref.item(), 0.0


def _run_training(
    config: RunConfig,
    cfg: ModelConfig,
    store: ParamStore,
    vocab: Vocabulary,
    target_vocab: Optional[Vocabulary],
    items: list,
    dev_docs: list[Document],
) -> TrainResult:
    run_dir = _prepare_run_dir(config)
    (run_dir / "vocab.json").write_text(vocab.to_json() + "\n", encoding="utf-8")
    if target_vocab is not None:
        (run_dir / "target_vocab.json").write_text(
            target_vocab.to_json() + "\n", encoding="utf-8"
        )
    adam = AdamConfig(lr=config.lr)
    entries: list[dict] = []
    best_f1 = -math.inf
    best_epoch = 0
    best_store = store.copy()

    def log_epoch(epoch: int, coref_sum: float, xl_sum: float, total_sum: float) -> dict:
        nonlocal best_f1, best_epoch, best_store
        n = len(items)
        dev = evaluate_documents(dev_docs, vocab, store, cfg)
        entry = {
            "epoch": epoch,
            "train_loss": total_sum / n,
            "coref_loss": coref_sum / n,
            "xl_loss": xl_sum / n,
            "dev_avg_f1": dev["avg_f1"],
        }
        entries.append(entry)
        if entry["dev_avg_f1"] > best_f1:
            best_f1 = entry["dev_avg_f1"]
            best_epoch = epoch
            best_store = store.copy()
        return entry

    # Epoch 0 reports the untrained model: losses forward-only, no updates.
    coref_sum = xl_sum = total_sum = 0.0
    for item in items:
        total, c, x = _item_losses(item, vocab, target_vocab, store, cfg)
        coref_sum += c
        xl_sum += x
        total_sum += total.item()
    log_epoch(0, coref_sum, xl_sum, total_sum)

    for epoch in range(1, config.epochs + 1):
        coref_sum = xl_sum = total_sum = 0.0
        for idx in _shuffled(len(items), config.seed, epoch):
            total, c, x = _item_losses(items[idx], vocab, target_vocab, store, cfg)
            grads = backward(total, store)
            adam_step(store, grads, adam)
            coref_sum += c
            xl_sum += x
            total_sum += total.item()
        log_epoch(epoch, coref_sum, xl_sum, total_sum)

    log_path = run_dir / "log.jsonl"
    log_path.write_text(
        "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries),
        encoding="utf-8",
    )
    checkpoint_path = run_dir / "best.ckpt"
    best_store.save(str(checkpoint_path))
    return TrainResult(
        run_dir=run_dir,
        checkpoint_path=checkpoint_path,
        log=entries,
        best_epoch=best_epoch,
        best_dev_avg_f1=best_f1,
    )


def train(config: RunConfig) -> TrainResult:
    """Monolingual training with per-epoch dev selection."""
    _require_file(config.train_path, "train corpus")
    _require_file(config.dev_path, "dev corpus")
    docs = load_corpus(config.train_path)
    dev_docs = load_corpus(config.dev_path)
    if not docs:
        raise HarnessError(f"train corpus is empty: {config.train_path}")
    cfg = config.to_model_config()
    if config.init_checkpoint:
        _require_file(config.init_checkpoint, "init checkpoint")
        # Continue from the checkpoint's vocabulary; tokens new to this train
        # corpus extend it (and the embedding table grows under _load_init).
        vocab = _extend_unseen(_read_vocab_sidecar(config.init_checkpoint), docs)
        store = md.init_params(cfg, len(vocab), config.seed)
        _load_init(store, config.init_checkpoint, cfg)
    else:
        vocab = build_vocab(docs)
        store = md.init_params(cfg, len(vocab), config.seed)
    return _run_training(config, cfg, store, vocab, None, docs, dev_docs)


def train_xl(config: RunConfig) -> TrainResult:
    """Joint training on parallel data, usually from a monolingual checkpoint.

    Source modules come from ``init_checkpoint`` when given; adapters (and the
    target encoder in separate mode) always start fresh. The optimizer state
    starts fresh either way.
    """
    if not config.parallel_train_path:
        raise HarnessError("train-xl needs parallel_train_path")
    _require_file(config.parallel_train_path, "parallel train corpus")
    _require_file(config.dev_path, "dev corpus")
    pdocs = load_parallel_corpus(config.parallel_train_path)
    dev_docs = load_corpus(config.dev_path)
    if not pdocs:
        raise HarnessError(f"parallel train corpus is empty: {config.parallel_train_path}")
    cfg = config.to_model_config()

    if config.init_checkpoint:
        _require_file(config.init_checkpoint, "init checkpoint")
        vocab = _read_vocab_sidecar(config.init_checkpoint)
    else:
        vocab = build_vocab([p.source for p in pdocs])

    vocab = _extend_unseen(vocab, [p.source for p in pdocs])
    target_vocab: Optional[Vocabulary] = None
    if cfg.loss_ratio == 0.0:
        # Ratio 0 disables the cross-lingual term entirely: no adapter
        # parameters and no target-side vocabulary, so the run matches a plain
        # monolingual continuation bit for bit.
        store = md.init_params(cfg, len(vocab), config.seed)
    else:
        if cfg.encoder_mode == "separate":
            target_vocab = build_vocab([p.target_document() for p in pdocs])
        else:
            # The shared encoder must embed target tokens too; unseen ones
            # extend the vocabulary (and embedding table) in first-seen order.
            vocab = _extend_unseen(vocab, [p.target_document() for p in pdocs])
        store = md.init_params(cfg, len(vocab), config.seed)
        md.add_xl_params(
            store, cfg, config.seed,
            target_vocab_size=len(target_vocab) if target_vocab is not None else None,
        )
    if config.init_checkpoint:
        _load_init(store, config.init_checkpoint, cfg)
    return _run_training(config, cfg, store, vocab, target_vocab, pdocs, dev_docs)


def _load_run(checkpoint: str) -> tuple[ParamStore, Vocabulary, ModelConfig, Path]:
    _require_file(checkpoint, "checkpoint")
    store = ParamStore.load(checkpoint)
    vocab = _read_vocab_sidecar(checkpoint)
    _check_vocab(store, vocab)
    run_dir = Path(checkpoint).parent
    config_path = run_dir / "config.json"
    if not config_path.is_file():
        raise HarnessError(f"resolved config not found next to checkpoint: {config_path}")
    cfg = load_config(str(config_path)).to_model_config()
    return store, vocab, cfg, run_dir


def evaluate(checkpoint: str, corpus_path: str, output_json: Optional[str] = None) -> dict:
    """Source-side evaluation of a checkpoint against an annotated corpus."""
    store, vocab, cfg, run_dir = _load_run(checkpoint)
    _require_file(corpus_path, "evaluation corpus")
    docs = load_corpus(corpus_path)
    result = evaluate_documents(docs, vocab, store, cfg)
    payload = {
        key: vars(result[key]) for key in ("mention", "muc", "b_cubed", "ceaf_e")
    }
    payload["avg_f1"] = result["avg_f1"]
    out = (
        Path(output_json)
        if output_json
        else run_dir / f"metrics_{Path(corpus_path).stem}.json"
    )
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


def predict_documents(checkpoint: str, corpus_path: str) -> list[Document]:
    """Decode a corpus into documents with predicted clusters substituted."""
    store, vocab, cfg, _ = _load_run(checkpoint)
    _require_file(corpus_path, "input corpus")
    docs = load_corpus(corpus_path)
    predicted = []
    for doc in docs:
        fw = md.forward_document(doc, vocab, store, cfg)
        clusters = [tuple(sorted(c)) for c in md.decode_document(fw)]
        predicted.append(
            Document(doc_key=doc.doc_key, sentences=doc.sentences, clusters=clusters)
        )
    return predicted


def predict(checkpoint: str, corpus_path: str, out_path: str) -> int:
    """Decode a corpus and write the predictions as a corpus file."""
    predicted = predict_documents(checkpoint, corpus_path)
    save_corpus(predicted, out_path)
    return len(predicted)


def analyze(
    checkpoint: str,
    parallel_path: str,
    tsv_path: Optional[str] = None,
) -> tuple[PairAnalysis, str]:
    """Classify predicted source-target pairs on identity-mode parallel data.

    Returns the aggregate counts and a TSV dump of every pair with surfaces;
    the dump is also written to ``tsv_path`` when given.
    """
    store, vocab, cfg, _ = _load_run(checkpoint)
    if "adapter_mention_w1" not in store:
        raise HarnessError(
            f"checkpoint {checkpoint} has no cross-lingual parameters; run train-xl first"
        )
    target_vocab = None
    if cfg.encoder_mode == "separate":
        target_vocab = _read_vocab_sidecar(checkpoint, "target_vocab.json")
    _require_file(parallel_path, "parallel corpus")
    pdocs = load_parallel_corpus(parallel_path)
    parts = []
    tsv_lines = ["doc_key\tsource\ttarget\tsource_text\ttarget_text\tlabel"]
    for pdoc in pdocs:
        pf = md.forward_parallel(pdoc, vocab, store, cfg, target_vocab)
        pairs = md.predict_pairs(pf)
        try:
            parts.append(analyze_pairs(pdoc, pairs))
            labels = pair_labels(pdoc, pairs)
        except ValueError as e:
            raise HarnessError(str(e)) from e
        tdoc = pdoc.target_document()
        for (src, tgt), label in zip(pairs, labels):
            tsv_lines.append(
                f"{pdoc.source.doc_key}\t{src.start}-{src.end}\t{tgt.start}-{tgt.end}\t"
                f"{' '.join(pdoc.source.span_tokens(src))}\t"
                f"{' '.join(tdoc.span_tokens(tgt))}\t{label}"
            )
    tsv_text = "\n".join(tsv_lines) + "\n"
    if tsv_path:
        Path(tsv_path).write_text(tsv_text, encoding="utf-8")
    return PairAnalysis.accumulate(parts), tsv_text


def gen_corpus(n_docs: int, seed: int, out_path: str) -> int:
    """Write a deterministic toy corpus; returns the document count."""
    if n_docs < 1:
        raise HarnessError("gen-corpus needs n >= 1")
    docs = generate_toy_corpus(n_docs, seed)
    save_corpus(docs, out_path)
    return len(docs)


def translate(
    in_path: str,
    out_path: str,
    mode: str,
    seed: int,
    attach_clusters: bool = False,
) -> int:
    """Pseudo-translate a corpus into a parallel corpus file."""
    _require_file(in_path, "input corpus")
    docs = load_corpus(in_path)
    try:
        pdocs = [
            pseudo_translate(doc, mode, seed, attach_clusters=attach_clusters)
            for doc in docs
        ]
    except CorpusError as e:
        raise HarnessError(str(e)) from e
    save_parallel_corpus(pdocs, out_path)
    return len(pdocs)
