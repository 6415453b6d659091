"""Shared fixtures: a small toy corpus, a small model, and doc builders."""

import pytest

from xlcoref import model as md
from xlcoref.corpus import Document, Span, build_vocab, generate_toy_corpus


def make_doc(sentences, clusters=(), doc_key="doc"):
    """Build a Document from plain lists: clusters as [[(s, e), ...], ...]."""
    built = tuple(
        tuple(Span(s, e) for s, e in cluster) for cluster in clusters
    )
    return Document(doc_key=doc_key, sentences=[list(s) for s in sentences], clusters=built)


@pytest.fixture(scope="session")
def toy_docs():
    return generate_toy_corpus(6, 0)


@pytest.fixture(scope="session")
def toy_vocab(toy_docs):
    return build_vocab(toy_docs)


@pytest.fixture(scope="session")
def small_cfg():
    # Miniature dimensions keep unit-level forward/backward passes fast; the
    # default-size configuration is exercised by the acceptance suite.
    return md.ModelConfig(
        embed_dim=8,
        hidden_dim=4,
        width_feature_dim=4,
        ffn_hidden_dim=8,
        adapter_hidden_dim=16,
    )


@pytest.fixture()
def small_store(small_cfg, toy_vocab):
    return md.init_params(small_cfg, len(toy_vocab), seed=0)
