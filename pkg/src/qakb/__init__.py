"""Question answering over a triple-store knowledge base.

The package has two answer-producing stacks that share the knowledge base
and the alias index:

* a staged pipeline (entity tagger, candidate retrieval, relation matcher,
  optional type / out-degree disambiguation), and
* a jointly trained ranker that embeds questions, subjects and predicates
  into one space and answers by cosine similarity.

Everything numeric runs on a small numpy-backed reverse-mode autodiff in
:mod:`qakb.nn`; no external ML framework is used.
"""

from qakb.errors import (
    EmptyEvalSet,
    EmptySequence,
    EmptyTrainingSet,
    LabelFailure,
    MalformedId,
    NoCandidates,
    NoRelation,
    ParseError,
    QAKBError,
    ShapeMismatch,
)

__all__ = [
    "QAKBError",
    "MalformedId",
    "ParseError",
    "ShapeMismatch",
    "EmptySequence",
    "EmptyTrainingSet",
    "LabelFailure",
    "NoCandidates",
    "NoRelation",
    "EmptyEvalSet",
]

__version__ = "0.1.0"
