"""Document model, JSON-lines corpus I/O, toy-corpus generation, and pseudo-translation.

A corpus file holds one JSON object per line with fields ``doc_key``,
``sentences`` and ``clusters``. Spans are inclusive ``[start, end]`` pairs of
document-level token indices and never cross sentence boundaries. Parallel
corpus files carry an extra ``target_sentences`` field (and optionally
``target_clusters`` for analysis runs).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

__all__ = [
    "CorpusError",
    "Span",
    "Document",
    "ParallelDocument",
    "Vocabulary",
    "parse_document",
    "parse_parallel_document",
    "serialize_document",
    "serialize_parallel_document",
    "load_corpus",
    "load_parallel_corpus",
    "save_corpus",
    "save_parallel_corpus",
    "pseudo_translate",
    "generate_toy_corpus",
    "build_vocab",
]


class CorpusError(ValueError):
    """Raised for malformed corpus files or invariant violations."""


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive [start, end] token span with document-level indices."""

    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise CorpusError(f"span ({self.start},{self.end}) has start > end")
        if self.start < 0:
            raise CorpusError(f"span ({self.start},{self.end}) has negative start")

    @property
    def width(self) -> int:
        return self.end - self.start + 1


def _canonical_clusters(clusters) -> tuple[tuple[Span, ...], ...]:
    canon = tuple(tuple(sorted(set(c))) for c in clusters)
    return tuple(sorted(canon, key=lambda c: c[0]))


@dataclass
class Document:
    """A tokenized document with gold coreference clusters.

    ``sentences`` is a list of token lists; ``clusters`` is kept in a
    canonical order (spans sorted within a cluster, clusters sorted by their
    first span) so that parse/serialize round-trips are field-for-field
    identities.
    """

    doc_key: str
    sentences: list[list[str]]
    clusters: tuple[tuple[Span, ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.sentences = [list(s) for s in self.sentences]
        self.clusters = _canonical_clusters(self.clusters)
        self._validate()

    def _validate(self) -> None:
        n = self.num_tokens
        bounds = self.sentence_bounds
        for cluster in self.clusters:
            if len(cluster) < 2:
                span = cluster[0] if cluster else None
                raise CorpusError(
                    f"doc {self.doc_key!r}: singleton cluster at span {span}"
                )
            for span in cluster:
                if span.end >= n:
                    raise CorpusError(
                        f"doc {self.doc_key!r}: span ({span.start},{span.end}) "
                        f"out of range for {n} tokens"
                    )
                if not any(lo <= span.start and span.end < hi for lo, hi in bounds):
                    raise CorpusError(
                        f"doc {self.doc_key!r}: span ({span.start},{span.end}) "
                        "crosses a sentence boundary"
                    )
        seen: set[Span] = set()
        for cluster in self.clusters:
            for span in cluster:
                if span in seen:
                    raise CorpusError(
                        f"doc {self.doc_key!r}: span ({span.start},{span.end}) "
                        "appears in more than one cluster"
                    )
                seen.add(span)

    @property
    def num_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    @property
    def sentence_bounds(self) -> list[tuple[int, int]]:
        """Half-open [lo, hi) token ranges, one per sentence."""
        bounds = []
        offset = 0
        for sent in self.sentences:
            bounds.append((offset, offset + len(sent)))
            offset += len(sent)
        return bounds

    @property
    def tokens(self) -> list[str]:
        return [tok for sent in self.sentences for tok in sent]

    def span_tokens(self, span: Span) -> tuple[str, ...]:
        toks = self.tokens
        return tuple(toks[span.start : span.end + 1])

    def sentence_index(self, token_index: int) -> int:
        for i, (lo, hi) in enumerate(self.sentence_bounds):
            if lo <= token_index < hi:
                return i
        raise CorpusError(f"token index {token_index} out of range")


@dataclass
class ParallelDocument:
    """A source document paired with its (synthetic) translation.

    The target side carries no annotations during training; analysis runs on
    identity translations may attach the source clusters as ``target_clusters``.
    """

    source: Document
    target_sentences: list[list[str]]
    target_clusters: tuple[tuple[Span, ...], ...] | None = None

    def __post_init__(self):
        self.target_sentences = [list(s) for s in self.target_sentences]
        if sum(len(s) for s in self.target_sentences) < 1:
            raise CorpusError(
                f"doc {self.source.doc_key!r}: empty target side"
            )
        if self.target_clusters is not None:
            self.target_clusters = _canonical_clusters(self.target_clusters)

    @property
    def num_target_tokens(self) -> int:
        return sum(len(s) for s in self.target_sentences)

    @property
    def target_tokens(self) -> list[str]:
        return [tok for sent in self.target_sentences for tok in sent]

    @property
    def is_identity(self) -> bool:
        return self.target_sentences == self.source.sentences

    def target_document(self) -> Document:
        """Target side viewed as an (unannotated) Document."""
        return Document(
            doc_key=self.source.doc_key + ":target",
            sentences=self.target_sentences,
            clusters=(),
        )


def _clusters_from_json(raw, doc_key: str) -> tuple[tuple[Span, ...], ...]:
    clusters = []
    for cluster in raw:
        spans = []
        for pair in cluster:
            if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
                raise CorpusError(f"doc {doc_key!r}: span must be a [start, end] pair, got {pair!r}")
            start, end = pair
            if not (isinstance(start, int) and isinstance(end, int)):
                raise CorpusError(f"doc {doc_key!r}: non-integer span {pair!r}")
            spans.append(Span(start, end))
        clusters.append(tuple(spans))
    return tuple(clusters)


def parse_document(line: str) -> Document:
    """Parse one JSON-lines record into a validated Document."""
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise CorpusError("document line must be a JSON object")
    for key in ("doc_key", "sentences", "clusters"):
        if key not in raw:
            raise CorpusError(f"missing field {key!r}")
    doc_key = raw["doc_key"]
    clusters = _clusters_from_json(raw["clusters"], doc_key)
    return Document(doc_key=doc_key, sentences=raw["sentences"], clusters=clusters)


def parse_parallel_document(line: str) -> ParallelDocument:
    """Parse one parallel-corpus record (source fields plus target_sentences)."""
    source = parse_document(line)
    raw = json.loads(line)
    if "target_sentences" not in raw:
        raise CorpusError(f"doc {source.doc_key!r}: missing field 'target_sentences'")
    target_clusters = None
    if raw.get("target_clusters") is not None:
        target_clusters = _clusters_from_json(raw["target_clusters"], source.doc_key)
    return ParallelDocument(
        source=source,
        target_sentences=raw["target_sentences"],
        target_clusters=target_clusters,
    )


def serialize_document(doc: Document) -> str:
    record = {
        "doc_key": doc.doc_key,
        "sentences": doc.sentences,
        "clusters": [[[s.start, s.end] for s in c] for c in doc.clusters],
    }
    return json.dumps(record, ensure_ascii=False)


def serialize_parallel_document(pdoc: ParallelDocument) -> str:
    record = json.loads(serialize_document(pdoc.source))
    record["target_sentences"] = pdoc.target_sentences
    if pdoc.target_clusters is not None:
        record["target_clusters"] = [
            [[s.start, s.end] for s in c] for c in pdoc.target_clusters
        ]
    return json.dumps(record, ensure_ascii=False)


def _load_lines(path: str, parse, label: str):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse(line))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return out


def load_corpus(path: str) -> list[Document]:
    """Load a JSON-lines corpus; any bad line aborts with its line number."""
    return _load_lines(path, parse_document, "document")


def load_parallel_corpus(path: str) -> list[ParallelDocument]:
    return _load_lines(path, parse_parallel_document, "parallel document")


def save_corpus(docs: list[Document], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(serialize_document(doc) + "\n")


def save_parallel_corpus(pdocs: list[ParallelDocument], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pdoc in pdocs:
            fh.write(serialize_parallel_document(pdoc) + "\n")


# --------------------------------------------------------------------------
# Pseudo-translation
# --------------------------------------------------------------------------

SWAP_PROBABILITY = 0.2
XENO_PREFIX = "zx_"


def xeno_token(token: str) -> str:
    """Deterministic per-token transform into the disjoint target 'language'."""
    return XENO_PREFIX + token[::-1]


def pseudo_translate(
    doc: Document,
    mode: str,
    seed: int,
    attach_clusters: bool = False,
) -> ParallelDocument:
    """Produce a deterministic synthetic translation of ``doc``.

    ``identity`` copies the source tokens verbatim; ``xenoglot`` maps every
    token through :func:`xeno_token` and then swaps adjacent tokens with
    probability 0.2 under a generator seeded from ``(seed, doc_key)``,
    scanning each sentence left to right. Sentence alignment is 1:1 by
    construction. ``attach_clusters`` copies the source clusters onto the
    target side and is only meaningful for identity translations.
    """
    if mode == "identity":
        target = [list(sent) for sent in doc.sentences]
    elif mode == "xenoglot":
        rng = random.Random(f"{seed}:{doc.doc_key}")
        target = []
        for sent in doc.sentences:
            toks = [xeno_token(t) for t in sent]
            for t in range(len(toks) - 1):
                if rng.random() < SWAP_PROBABILITY:
                    toks[t], toks[t + 1] = toks[t + 1], toks[t]
            target.append(toks)
    else:
        raise CorpusError(f"unknown pseudo-translation mode {mode!r}")
    if attach_clusters and mode != "identity":
        raise CorpusError("target clusters can only be attached in identity mode")
    return ParallelDocument(
        source=doc,
        target_sentences=target,
        target_clusters=doc.clusters if attach_clusters else None,
    )


# --------------------------------------------------------------------------
# Toy corpus
# --------------------------------------------------------------------------

_PEOPLE = [
    ("anna", "she"),
    ("ben", "he"),
    ("carla", "she"),
    ("dan", "he"),
    ("emma", "she"),
    ("felix", "he"),
    ("grace", "she"),
    ("henry", "he"),
    ("ida", "she"),
    ("jonas", "he"),
]

_THINGS = [
    (("red", "kite"), "it"),
    (("gray", "boat"), "it"),
    (("small", "lamp"), "it"),
    (("green", "door"), "it"),
]

_INTRO_TAILS = [
    ("near", "the", "market", "."),
    ("at", "the", "station", "."),
    ("by", "the", "river", "."),
]

_SAME_SENTENCE_VERBS = [
    ("thought", None, "had", "lost", "the", "way", "."),
    ("said", None, "liked", "the", "garden", "."),
    ("knew", None, "would", "arrive", "late", "."),
]

_PRON_TAILS = [
    ("smiled", "quietly", "."),
    ("waited", "outside", "."),
    ("walked", "home", "."),
]

_REMENTION_TAILS = [
    ("found", "a", "letter", "."),
    ("opened", "the", "box", "."),
    ("watched", "the", "clouds", "."),
]

_THING_TAILS = [
    ("stood", "near", "the", "wall", "."),
    ("lay", "on", "the", "table", "."),
]

_THING_REMENTION_TAILS = [
    ("fell", "over", "."),
    ("was", "gone", "."),
]

_FILLERS = [
    ("the", "rain", "kept", "falling", "."),
    ("the", "street", "was", "empty", "."),
    ("a", "cold", "wind", "came", "up", "."),
]


class _DocBuilder:
    def __init__(self):
        self.sentences: list[list[str]] = []
        self.mentions: dict[str, list[Span]] = {}
        self.offset = 0

    def add(self, tokens: list[str], spans: dict[str, tuple[int, int]]) -> None:
        """Append a sentence; spans are sentence-local per entity key."""
        for key, (lo, hi) in spans.items():
            self.mentions.setdefault(key, []).append(
                Span(self.offset + lo, self.offset + hi)
            )
        self.sentences.append(tokens)
        self.offset += len(tokens)


def _build_toy_document(index: int, seed: int) -> Document:
    rng = random.Random(f"{seed}:{index}")
    if rng.random() < 0.5:
        # Same-gender pair: pronouns are ambiguous by surface form alone,
        # so linking them needs positional context.
        gender = rng.choice(["she", "he"])
        pool = [p for p in _PEOPLE if p[1] == gender]
        first, second = rng.sample(pool, 2)
    else:
        she = rng.choice([p for p in _PEOPLE if p[1] == "she"])
        he = rng.choice([p for p in _PEOPLE if p[1] == "he"])
        first, second = (she, he) if rng.random() < 0.5 else (he, she)
    thing = rng.choice(_THINGS)

    b = _DocBuilder()

    tail = rng.choice(_INTRO_TAILS)
    tokens = [first[0], "met", second[0], *tail]
    b.add(tokens, {"first": (0, 0), "second": (2, 2)})

    verb = rng.choice(_SAME_SENTENCE_VERBS)
    tokens = [first[0]] + [first[1] if t is None else t for t in verb]
    pron_pos = 1 + verb.index(None)
    b.add(tokens, {"first": (0, 0), "first_p": (pron_pos, pron_pos)})

    tail = rng.choice(_PRON_TAILS)
    b.add([second[1], *tail], {"second_p": (0, 0)})

    words, pron = thing
    tail = rng.choice(_THING_TAILS)
    b.add([*words, *tail], {"thing": (0, len(words) - 1)})
    b.add([pron, "looked", "heavy", "."], {"thing_p": (0, 0)})

    if rng.random() < 0.5:
        b.add(list(rng.choice(_FILLERS)), {})

    # Re-mention of the first entity by name, 3+ sentences after its last use.
    tail = rng.choice(_REMENTION_TAILS)
    b.add(["later", first[0], *tail], {"first": (1, 1)})

    # Shortened re-mention of the thing ("that kite"), also 3+ sentences out.
    tail = rng.choice(_THING_REMENTION_TAILS)
    b.add(["that", words[-1], *tail], {"thing": (0, 1)})

    if rng.random() < 0.5:
        tail = rng.choice(_PRON_TAILS)
        b.add([second[0], *tail], {"second": (0, 0)})

    groups = {
        "A": b.mentions.get("first", []) + b.mentions.get("first_p", []),
        "B": b.mentions.get("second", []) + b.mentions.get("second_p", []),
        "T": b.mentions.get("thing", []) + b.mentions.get("thing_p", []),
    }
    clusters = tuple(
        tuple(sorted(spans)) for spans in groups.values() if len(spans) >= 2
    )
    return Document(doc_key=f"toy_{index}", sentences=b.sentences, clusters=clusters)


def generate_toy_corpus(n_docs: int, seed: int) -> list[Document]:
    """Deterministic synthetic documents with pronoun/antecedent chains.

    Every document validates, contains at least one cluster, and exercises
    same-sentence, adjacent-sentence, and 3+-sentence mention distances. The
    vocabulary stays well under 500 token types.
    """
    if n_docs < 1:
        raise CorpusError("n_docs must be >= 1")
    return [_build_toy_document(i, seed) for i in range(n_docs)]


# --------------------------------------------------------------------------
# Vocabulary
# --------------------------------------------------------------------------

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class Vocabulary:
    """Bijective token/id map with reserved padding and unknown ids."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = [PAD_TOKEN, UNK_TOKEN, *tokens]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def token(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def encode_sentences(self, sentences: list[list[str]]) -> list[list[int]]:
        return [[self.lookup(t) for t in sent] for sent in sentences]

    def extended(self, extra_tokens) -> "Vocabulary":
        """New vocabulary with unseen tokens appended; existing ids unchanged."""
        known = set(self.token_to_id)
        added = []
        for tok in extra_tokens:
            if tok not in known:
                known.add(tok)
                added.append(tok)
        return Vocabulary(self.id_to_token[2:] + added)

    def to_json(self) -> str:
        return json.dumps({"tokens": self.id_to_token[2:]}, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls(json.loads(text)["tokens"])


def build_vocab(corpus: list[Document]) -> Vocabulary:
    """Vocabulary over every token type in the corpus, in first-seen order."""
    if not corpus:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    seen: dict[str, None] = {}
    for doc in corpus:
        for sent in doc.sentences:
            for tok in sent:
                seen.setdefault(tok)
    return Vocabulary(list(seen))
