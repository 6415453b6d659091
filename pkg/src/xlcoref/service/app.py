"""HTTP service exposing the training and inference operations.

Thin synchronous wrappers around the library: corpus payloads travel in the
request/response bodies, while training and checkpoint paths refer to the
server's filesystem.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import harness
from ..autodiff import AutodiffError
from ..corpus import (
    CorpusError,
    Document,
    ParallelDocument,
    Span,
    generate_toy_corpus,
    pseudo_translate,
)
from .schemas import (
    AnalyzePairsRequest,
    AnalyzePairsResponse,
    CorpusResponse,
    DocumentPayload,
    EpochEntry,
    EvaluateRequest,
    EvaluateResponse,
    GenCorpusRequest,
    HealthResponse,
    ParallelCorpusResponse,
    ParallelDocumentPayload,
    PredictRequest,
    PredictResponse,
    PRFPayload,
    TrainRequest,
    TrainResponse,
    TranslateRequest,
)

__all__ = ["create_app"]

_CLIENT_ERRORS = (harness.HarnessError, CorpusError, AutodiffError)


def _clusters_payload(clusters) -> list[list[list[int]]]:
    return [[[span.start, span.end] for span in cluster] for cluster in clusters]


def _document_payload(doc: Document) -> DocumentPayload:
    return DocumentPayload(
        doc_key=doc.doc_key,
        sentences=doc.sentences,
        clusters=_clusters_payload(doc.clusters),
    )


def _parallel_payload(pdoc: ParallelDocument) -> ParallelDocumentPayload:
    return ParallelDocumentPayload(
        doc_key=pdoc.source.doc_key,
        sentences=pdoc.source.sentences,
        clusters=_clusters_payload(pdoc.source.clusters),
        target_sentences=pdoc.target_sentences,
        target_clusters=(
            None
            if pdoc.target_clusters is None
            else _clusters_payload(pdoc.target_clusters)
        ),
    )


def _document_from_payload(payload: DocumentPayload) -> Document:
    clusters = tuple(
        tuple(Span(int(lo), int(hi)) for lo, hi in cluster)
        for cluster in payload.clusters
    )
    return Document(
        doc_key=payload.doc_key, sentences=payload.sentences, clusters=clusters
    )


def _train_response(result: harness.TrainResult) -> TrainResponse:
    return TrainResponse(
        run_dir=str(result.run_dir),
        checkpoint=str(result.checkpoint_path),
        best_epoch=result.best_epoch,
        best_dev_avg_f1=result.best_dev_avg_f1,
        log=[EpochEntry(**entry) for entry in result.log],
    )


def _evaluate_response(result: dict) -> EvaluateResponse:
    return EvaluateResponse(
        mention=PRFPayload(**vars(result["mention"])),
        muc=PRFPayload(**vars(result["muc"])),
        b_cubed=PRFPayload(**vars(result["b_cubed"])),
        ceaf_e=PRFPayload(**vars(result["ceaf_e"])),
        avg_f1=result["avg_f1"],
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="xlcoref",
        description="Span-based coreference resolver with a cross-lingual module",
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse()

    @app.post("/gen-corpus", response_model=CorpusResponse)
    def gen_corpus(req: GenCorpusRequest) -> CorpusResponse:
        try:
            docs = generate_toy_corpus(req.n_docs, req.seed)
        except CorpusError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return CorpusResponse(documents=[_document_payload(d) for d in docs])

    @app.post("/translate", response_model=ParallelCorpusResponse)
    def translate(req: TranslateRequest) -> ParallelCorpusResponse:
        try:
            docs = [_document_from_payload(p) for p in req.documents]
            pdocs = [
                pseudo_translate(d, req.mode, req.seed, attach_clusters=req.attach_clusters)
                for d in docs
            ]
        except CorpusError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return ParallelCorpusResponse(documents=[_parallel_payload(p) for p in pdocs])

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        try:
            return _train_response(harness.train(req.config))
        except _CLIENT_ERRORS as e:
            raise HTTPException(status_code=400, detail=str(e)) from e

    @app.post("/train-xl", response_model=TrainResponse)
    def train_xl(req: TrainRequest) -> TrainResponse:
        try:
            return _train_response(harness.train_xl(req.config))
        except _CLIENT_ERRORS as e:
            raise HTTPException(status_code=400, detail=str(e)) from e

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        try:
            result = harness.evaluate(req.checkpoint, req.corpus, req.output_json)
        except _CLIENT_ERRORS as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return _evaluate_response(result)

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest) -> PredictResponse:
        try:
            docs = harness.predict_documents(req.checkpoint, req.corpus)
        except _CLIENT_ERRORS as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return PredictResponse(documents=[_document_payload(d) for d in docs])

    @app.post("/analyze-pairs", response_model=AnalyzePairsResponse)
    def analyze_pairs(req: AnalyzePairsRequest) -> AnalyzePairsResponse:
        try:
            analysis, tsv = harness.analyze(req.checkpoint, req.corpus)
        except _CLIENT_ERRORS as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return AnalyzePairsResponse(
            **analysis.to_dict(), tsv=tsv if req.include_tsv else None
        )

    return app
