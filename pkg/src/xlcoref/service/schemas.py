"""Request/response bodies for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from ..harness import RunConfig

__all__ = [
    "HealthResponse",
    "DocumentPayload",
    "ParallelDocumentPayload",
    "GenCorpusRequest",
    "CorpusResponse",
    "TranslateRequest",
    "ParallelCorpusResponse",
    "TrainRequest",
    "EpochEntry",
    "TrainResponse",
    "EvaluateRequest",
    "PRFPayload",
    "EvaluateResponse",
    "PredictRequest",
    "PredictResponse",
    "AnalyzePairsRequest",
    "AnalyzePairsResponse",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HealthResponse(_Strict):
    status: str = "ok"


class DocumentPayload(_Strict):
    """One document in the corpus wire format."""

    doc_key: str
    sentences: list[list[str]]
    clusters: list[list[list[int]]]


class ParallelDocumentPayload(DocumentPayload):
    target_sentences: list[list[str]]
    target_clusters: Optional[list[list[list[int]]]] = None


class GenCorpusRequest(_Strict):
    n_docs: int = Field(ge=1)
    seed: int = 0


class CorpusResponse(_Strict):
    documents: list[DocumentPayload]


class TranslateRequest(_Strict):
    documents: list[DocumentPayload]
    mode: str = "identity"
    seed: int = 0
    attach_clusters: bool = False


class ParallelCorpusResponse(_Strict):
    documents: list[ParallelDocumentPayload]


class TrainRequest(_Strict):
    config: RunConfig


class EpochEntry(_Strict):
    epoch: int
    train_loss: float
    coref_loss: float
    xl_loss: float
    dev_avg_f1: float


class TrainResponse(_Strict):
    run_dir: str
    checkpoint: str
    best_epoch: int
    best_dev_avg_f1: float
    log: list[EpochEntry]


class EvaluateRequest(_Strict):
    checkpoint: str
    corpus: str
    output_json: Optional[str] = None


class PRFPayload(_Strict):
    recall: float
    precision: float
    f1: float


class EvaluateResponse(_Strict):
    mention: PRFPayload
    muc: PRFPayload
    b_cubed: PRFPayload
    ceaf_e: PRFPayload
    avg_f1: float


class PredictRequest(_Strict):
    checkpoint: str
    corpus: str


class PredictResponse(_Strict):
    documents: list[DocumentPayload]


class AnalyzePairsRequest(_Strict):
    checkpoint: str
    corpus: str
    include_tsv: bool = False


class AnalyzePairsResponse(_Strict):
    total: int
    identical: int
    coreferential: int
    same_surface: int
    other: int
    tsv: Optional[str] = None
