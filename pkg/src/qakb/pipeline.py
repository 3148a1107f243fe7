"""Staged question answering over a knowledge base.

A bidirectional-LSTM tagger marks each question token as entity text
(``e``) or context (``c``); the detected span is looked up in the alias
index to produce candidate entities; a bidirectional-GRU matcher scores
the question against each candidate relation (and, optionally, against
notable-type labels).  Ranking strategies then combine matcher scores
with entity out-degree and type context to select one (entity, relation)
answer per question.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from qakb.aliasindex import (
    AliasIndex,
    CandidateEntity,
    retrieve_candidates,
    retrieve_question_candidates,
    tokenize,
)
from qakb.datagen import LabeledQuestion, MatcherPair
from qakb.errors import EmptyTrainingSet, NoCandidates, NoRelation
from qakb.kb import KnowledgeBase, lookup_objects, notable_type, out_degree, relations_of
from qakb.nn import (
    Adam,
    Dense,
    EmbeddingTable,
    GRUCell,
    LSTMCell,
    TrainConfig,
    bidirectional_encode,
    dropout,
)
from qakb.nn.io import (
    load_params,
    read_model_meta,
    restore_params,
    save_params,
    write_model_meta,
)
from qakb.nn.losses import loss_binary_ce, loss_categorical_ce
from qakb.nn.tensor import Tensor, concat, reshape, softmax_rows

logger = logging.getLogger(__name__)

TAG_ORDER = ("c", "e")

STRATEGIES = ("p-qa", "p-qa-out", "p-qa-type", "p-qa-out-type", "p-qa-type-out")


def matcher_tokens(text: str) -> list[str]:
    """Token sequence for matcher input; relation paths split on '/'."""
    if text.startswith("/"):
        return [seg for seg in text.split("/") if seg]
    return tokenize(text)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class TaggerModel:
    """Bidirectional LSTM with a per-token softmax over (c, e)."""

    def __init__(self, vocab: Sequence[str], cfg: TrainConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = EmbeddingTable.random(list(vocab), cfg.embed_dim, rng)
        self.fwd = LSTMCell(cfg.embed_dim, cfg.hidden_size, rng, name="tagger.fwd")
        self.bwd = LSTMCell(cfg.embed_dim, cfg.hidden_size, rng, name="tagger.bwd")
        self.head = Dense(2 * cfg.hidden_size, 2, rng, name="tagger.head")

    def forward(self, tokens: Sequence[str]) -> Tensor:
        """Per-token class probabilities, shape [T, 2]; column 1 is 'e'."""
        states, _ = bidirectional_encode(
            self.fwd, self.bwd, self.embedding.embed(list(tokens))
        )
        return softmax_rows(self.head(states))

    def parameters(self) -> dict[str, Tensor]:
        params = {"tagger.embedding": self.embedding.vectors}
        for part in (self.fwd, self.bwd, self.head):
            params.update(part.parameters())
        return params


class MatcherModel:
    """Shared bidirectional GRU over question and candidate text.

    Both sequences run through the same recurrent encoder; the two final
    states are concatenated and passed through a fully connected layer,
    then a sigmoid output unit whose value is used directly as the
    matching score.  The hidden layer is what lets the score depend on
    the question-text interaction rather than on each side separately.
    """

    def __init__(self, vocab: Sequence[str], cfg: TrainConfig,
                 rng: np.random.Generator, name: str = "matcher"):
        self.cfg = cfg
        self.name = name
        self.embedding = EmbeddingTable.random(list(vocab), cfg.embed_dim, rng)
        self.fwd = GRUCell(cfg.embed_dim, cfg.hidden_size, rng, name=f"{name}.fwd")
        self.bwd = GRUCell(cfg.embed_dim, cfg.hidden_size, rng, name=f"{name}.bwd")
        self.hidden = Dense(4 * cfg.hidden_size, cfg.hidden_size, rng,
                            activation="relu", name=f"{name}.hidden")
        self.head = Dense(cfg.hidden_size, 1, rng, activation="sigmoid",
                          name=f"{name}.head")

    def encode(self, tokens: Sequence[str]) -> Tensor:
        _, last = bidirectional_encode(
            self.fwd, self.bwd, self.embedding.embed(list(tokens))
        )
        return last

    def forward(self, question: str, text: str, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> Tensor:
        """Match score in (0, 1) as a scalar tensor."""
        joint = concat([self.encode(tokenize(question)),
                        self.encode(matcher_tokens(text))])
        joint = dropout(joint, self.cfg.dropout_p, mode, rng)
        return reshape(self.head(self.hidden(joint)), ())

    def score(self, question: str, text: str) -> float:
        return float(self.forward(question, text).data)

    def parameters(self) -> dict[str, Tensor]:
        params = {f"{self.name}.embedding": self.embedding.vectors}
        for part in (self.fwd, self.bwd, self.hidden, self.head):
            params.update(part.parameters())
        return params


@dataclass
class PipelineModels:
    """The trained stages used by the prediction strategies.

    Any objects with the same call surface work here, which is how the
    evaluation harness substitutes oracles: the tagger needs
    ``forward(tokens) -> [T, 2]`` probabilities and the matchers need
    ``score(question, text) -> float``.
    """

    tagger: TaggerModel
    relation_matcher: MatcherModel
    type_matcher: Optional[MatcherModel] = None


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_tagger(data: Sequence[LabeledQuestion],
                 cfg: TrainConfig) -> tuple[TaggerModel, list[float]]:
    """Fit the span tagger; returns the model and per-epoch mean losses."""
    if not data:
        raise EmptyTrainingSet("no labeled questions to train on")
    rng = np.random.default_rng(cfg.seed)
    vocab = sorted({tok for q in data for tok in q.tokens})
    model = TaggerModel(vocab, cfg, rng)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for batch in _batches(len(data), cfg.batch_size, order):
            losses = []
            for i in batch:
                q = data[i]
                gold = [1 if tag == "e" else 0 for tag in q.tags]
                losses.append(loss_categorical_ce(model.forward(q.tokens), gold))
            batch_loss = losses[0]
            for extra in losses[1:]:
                batch_loss = batch_loss + extra
            total += float(batch_loss.data)
            batch_loss = batch_loss * (1.0 / len(batch))
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
        curve.append(total / len(data))
        logger.debug("tagger epoch %d loss %.6f", epoch, curve[-1])
    return model, curve


def train_matcher(pairs: Sequence[MatcherPair], cfg: TrainConfig,
                  name: str = "matcher") -> tuple[MatcherModel, list[float]]:
    """Fit a binary semantic matcher on (question, text, tag) pairs."""
    if not pairs:
        raise EmptyTrainingSet("no matcher pairs to train on")
    rng = np.random.default_rng(cfg.seed)
    vocab = sorted(
        {tok for q, text, _ in pairs
         for tok in tokenize(q) + matcher_tokens(text)}
    )
    model = MatcherModel(vocab, cfg, rng, name=name)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for batch in _batches(len(pairs), cfg.batch_size, order):
            losses = []
            for i in batch:
                question, text, tag = pairs[i]
                pred = model.forward(question, text, mode="train", rng=rng)
                losses.append(loss_binary_ce(pred, tag))
            batch_loss = losses[0]
            for extra in losses[1:]:
                batch_loss = batch_loss + extra
            total += float(batch_loss.data)
            batch_loss = batch_loss * (1.0 / len(batch))
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
        curve.append(total / len(pairs))
        logger.debug("%s epoch %d loss %.6f", name, epoch, curve[-1])
    return model, curve


# ---------------------------------------------------------------------------
# Tagging and span extraction
# ---------------------------------------------------------------------------

def tag_question(model, question: Union[str, Sequence[str]]) -> LabeledQuestion:
    """Argmax tag per token."""
    tokens = tokenize(question) if isinstance(question, str) else list(question)
    probs = model.forward(tokens)
    tags = tuple(TAG_ORDER[int(i)] for i in np.argmax(probs.data, axis=1))
    return LabeledQuestion(tokens=tuple(tokens), tags=tags)


def spans(labels: LabeledQuestion) -> list[str]:
    """Maximal runs of 'e'-tagged tokens, each joined by single spaces."""
    out: list[str] = []
    current: list[str] = []
    for tok, tag in zip(labels.tokens, labels.tags):
        if tag == "e":
            current.append(tok)
        elif current:
            out.append(" ".join(current))
            current = []
    if current:
        out.append(" ".join(current))
    return out


# ---------------------------------------------------------------------------
# Prediction strategies
# ---------------------------------------------------------------------------

@dataclass
class Prediction:
    """One answer with its score decomposition and ranking trace."""

    entity: str
    relation: str
    s_r: float
    s_t: Optional[float]
    s: float
    trace: dict = field(default_factory=dict)


def _question_candidates(
    question: str, models: PipelineModels, index: AliasIndex
) -> tuple[list[CandidateEntity], list[str]]:
    """Detected-span candidates, falling back to whole-question grams.

    The fallback covers both an all-context tagging (no spans) and spans
    that match nothing in the index.
    """
    labeled = tag_question(models.tagger, question)
    span_list = spans(labeled)
    merged: dict[str, CandidateEntity] = {}
    for span_text in span_list:
        for cand in retrieve_candidates(index, span_text):
            prev = merged.get(cand.id)
            if prev is None or cand.score > prev.score:
                merged[cand.id] = cand
    cands = sorted(merged.values(), key=lambda c: (-c.score, c.id))
    if not cands:
        cands = retrieve_question_candidates(index, question)
    return cands, span_list


def _relation_scores(
    question: str, models: PipelineModels, kb: KnowledgeBase,
    cands: Sequence[CandidateEntity],
) -> dict[str, float]:
    relations = sorted({r for c in cands for r in relations_of(kb, c.id)})
    if not relations:
        raise NoRelation(f"no relations for candidates of {question!r}")
    return {r: models.relation_matcher.score(question, r) for r in relations}


def _argmax_relation(scores: dict[str, float]) -> str:
    return min(scores, key=lambda r: (-scores[r], r))


def _type_score(question: str, models: PipelineModels, kb: KnowledgeBase,
                entity: str) -> float:
    """Type-matcher score for an entity; untyped entities contribute 0."""
    label = notable_type(kb, entity)
    if label is None:
        return 0.0
    return models.type_matcher.score(question, label)


def _require_type_matcher(models: PipelineModels, strategy: str) -> None:
    if models.type_matcher is None:
        raise ValueError(f"{strategy} requires a type matcher")


def _base_trace(span_list: list[str], cands: Sequence[CandidateEntity],
                rel_scores: dict[str, float]) -> dict:
    return {
        "spans": list(span_list),
        "candidates": [[c.id, c.score] for c in cands],
        "relations": sorted(
            ([r, s] for r, s in rel_scores.items()),
            key=lambda item: (-item[1], item[0]),
        ),
    }


def predict_p_qa(question: str, models: PipelineModels, kb: KnowledgeBase,
                 index: AliasIndex) -> Prediction:
    """Baseline: argmax relation over all candidates, first holder wins."""
    cands, span_list = _question_candidates(question, models, index)
    if not cands:
        raise NoCandidates(f"no candidate entities for {question!r}")
    rel_scores = _relation_scores(question, models, kb, cands)
    best_rel = _argmax_relation(rel_scores)
    holders = [c for c in cands if best_rel in relations_of(kb, c.id)]
    top = holders[0]
    trace = _base_trace(span_list, cands, rel_scores)
    trace["holders"] = [[c.id, out_degree(kb, c.id), c.score] for c in holders]
    return Prediction(entity=top.id, relation=best_rel,
                      s_r=rel_scores[best_rel], s_t=None,
                      s=rel_scores[best_rel], trace=trace)


def predict_p_qa_out(question: str, models: PipelineModels, kb: KnowledgeBase,
                     index: AliasIndex) -> Prediction:
    """Re-rank the holders of the argmax relation by out-degree."""
    cands, span_list = _question_candidates(question, models, index)
    if not cands:
        raise NoCandidates(f"no candidate entities for {question!r}")
    rel_scores = _relation_scores(question, models, kb, cands)
    best_rel = _argmax_relation(rel_scores)
    holders = [c for c in cands if best_rel in relations_of(kb, c.id)]
    holders.sort(key=lambda c: (-out_degree(kb, c.id), -c.score, c.id))
    top = holders[0]
    trace = _base_trace(span_list, cands, rel_scores)
    trace["holders"] = [[c.id, out_degree(kb, c.id), c.score] for c in holders]
    return Prediction(entity=top.id, relation=best_rel,
                      s_r=rel_scores[best_rel], s_t=None,
                      s=rel_scores[best_rel], trace=trace)


def predict_p_qa_type(question: str, models: PipelineModels, kb: KnowledgeBase,
                      index: AliasIndex) -> Prediction:
    """Rank (entity, best-own-relation) pairs by type + relation score."""
    _require_type_matcher(models, "p-qa-type")
    cands, span_list = _question_candidates(question, models, index)
    if not cands:
        raise NoCandidates(f"no candidate entities for {question!r}")
    rel_scores = _relation_scores(question, models, kb, cands)
    entries = []
    for cand in cands:
        own = {r: rel_scores[r] for r in relations_of(kb, cand.id)}
        if not own:
            continue
        best_rel = _argmax_relation(own)
        s_r = own[best_rel]
        s_t = _type_score(question, models, kb, cand.id)
        entries.append((cand, best_rel, s_r, s_t, s_t + s_r))
    entries.sort(key=lambda e: (-e[4], -out_degree(kb, e[0].id), -e[0].score,
                                e[0].id))
    cand, best_rel, s_r, s_t, s = entries[0]
    trace = _base_trace(span_list, cands, rel_scores)
    trace["pairs"] = [[c.id, r, st, sr, ss] for c, r, sr, st, ss in entries]
    return Prediction(entity=cand.id, relation=best_rel, s_r=s_r, s_t=s_t,
                      s=s, trace=trace)


def predict_combo(order: str, question: str, models: PipelineModels,
                  kb: KnowledgeBase, index: AliasIndex) -> Prediction:
    """Disambiguate argmax-relation holders by out-degree and type score.

    ``out_then_type`` ranks by out-degree and breaks ties with the type
    score; ``type_then_out`` does the reverse.  Either way the second
    criterion only matters among candidates tied under the first.
    """
    if order not in ("out_then_type", "type_then_out"):
        raise ValueError(f"unknown combo order {order!r}")
    _require_type_matcher(models, order)
    cands, span_list = _question_candidates(question, models, index)
    if not cands:
        raise NoCandidates(f"no candidate entities for {question!r}")
    rel_scores = _relation_scores(question, models, kb, cands)
    best_rel = _argmax_relation(rel_scores)
    holders = [c for c in cands if best_rel in relations_of(kb, c.id)]
    typed = {c.id: _type_score(question, models, kb, c.id) for c in holders}
    if order == "out_then_type":
        key = lambda c: (-out_degree(kb, c.id), -typed[c.id], -c.score, c.id)
    else:
        key = lambda c: (-typed[c.id], -out_degree(kb, c.id), -c.score, c.id)
    holders.sort(key=key)
    top = holders[0]
    s_r = rel_scores[best_rel]
    s_t = typed[top.id]
    trace = _base_trace(span_list, cands, rel_scores)
    trace["holders"] = [
        [c.id, out_degree(kb, c.id), typed[c.id], c.score] for c in holders
    ]
    return Prediction(entity=top.id, relation=best_rel, s_r=s_r, s_t=s_t,
                      s=s_t + s_r, trace=trace)


def predict(strategy: str, question: str, models: PipelineModels,
            kb: KnowledgeBase, index: AliasIndex) -> Prediction:
    """Dispatch a prediction strategy by CLI name."""
    if strategy == "p-qa":
        return predict_p_qa(question, models, kb, index)
    if strategy == "p-qa-out":
        return predict_p_qa_out(question, models, kb, index)
    if strategy == "p-qa-type":
        return predict_p_qa_type(question, models, kb, index)
    if strategy == "p-qa-out-type":
        return predict_combo("out_then_type", question, models, kb, index)
    if strategy == "p-qa-type-out":
        return predict_combo("type_then_out", question, models, kb, index)
    raise ValueError(f"unknown strategy {strategy!r}")


def answer_record(question: str, prediction: Prediction, kb: KnowledgeBase,
                  strategy: str) -> str:
    """One JSON line describing an answer."""
    scores: dict[str, float] = {"s_r": prediction.s_r, "s": prediction.s}
    if prediction.s_t is not None:
        scores["s_t"] = prediction.s_t
    record = {
        "question": question,
        "entity": prediction.entity,
        "relation": prediction.relation,
        "objects": lookup_objects(kb, prediction.entity, prediction.relation),
        "scores": scores,
        "strategy": strategy,
    }
    return json.dumps(record, sort_keys=True)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_tagger(model: TaggerModel, path: str) -> None:
    save_params(model.parameters(), path)
    write_model_meta(path, "tagger", {
        "name": "tagger",
        "vocab": list(model.embedding.vocab),
        "config": model.cfg.to_dict(),
    })


def load_tagger(path: str) -> TaggerModel:
    meta = read_model_meta(path, "tagger")
    cfg = TrainConfig(**meta["config"])
    model = TaggerModel(meta["vocab"], cfg, np.random.default_rng(0))
    restore_params(model.parameters(), load_params(path))
    return model


def save_matcher(model: MatcherModel, path: str) -> None:
    save_params(model.parameters(), path)
    write_model_meta(path, "matcher", {
        "name": model.name,
        "vocab": list(model.embedding.vocab),
        "config": model.cfg.to_dict(),
    })


def load_matcher(path: str) -> MatcherModel:
    meta = read_model_meta(path, "matcher")
    cfg = TrainConfig(**meta["config"])
    model = MatcherModel(meta["vocab"], cfg, np.random.default_rng(0),
                         name=meta["name"])
    restore_params(model.parameters(), load_params(path))
    return model
