"""Span-based neural coreference resolution with a cross-lingual module.

Subpackages and modules:

* :mod:`xlcoref.corpus` — document model, corpus files, toy data, pseudo-translation
* :mod:`xlcoref.autodiff` — reverse-mode autodiff engine, optimizer, checkpoints
* :mod:`xlcoref.encoder` — token encoding, span enumeration/representation, pruning
* :mod:`xlcoref.coref` — antecedent scoring, training loss, greedy decoding
* :mod:`xlcoref.xlingual` — adapters, the cross-lingual score matrix and loss
* :mod:`xlcoref.metrics` — MUC, B-cubed, CEAF_e, mention detection
* :mod:`xlcoref.model` — configuration, parameters, forward passes
* :mod:`xlcoref.harness` — training loops, evaluation, run folders
* :mod:`xlcoref.service` — FastAPI wrapper
* :mod:`xlcoref.cli` — command-line interface
"""

from .corpus import Document, ParallelDocument, Span, Vocabulary
from .harness import RunConfig
from .model import ModelConfig

__version__ = "0.1.0"

__all__ = [
    "Document",
    "ParallelDocument",
    "Span",
    "Vocabulary",
    "ModelConfig",
    "RunConfig",
    "__version__",
]
