"""End-to-end question answering over a fact store.

Questions, subject labels, and relation paths are encoded into one
semantic space by a weight-shared recurrent encoder; facts are ranked by
cosine similarity between the question vector and each fact's subject
and predicate vectors.  Two scoring heads are supported: a single weight
vector over the concatenated similarities, or per-channel coefficients
trained with margin losses (optionally with a third question-type
channel).  Notable-type text and entity out-degree can be folded in to
separate same-label subjects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from qakb.aliasindex import AliasIndex, retrieve_question_candidates, tokenize
from qakb.datagen import NegativePools, QuestionInstance
from qakb.errors import EmptySequence, EmptyTrainingSet, NoCandidates
from qakb.kb import Fact, KnowledgeBase, notable_type, out_degree, primary_alias
from qakb.nn import (
    Adam,
    Dense,
    EmbeddingTable,
    GRUCell,
    LSTMCell,
    OOV_TOKEN,
    TrainConfig,
    cosine,
    dropout,
    run_recurrent,
    self_attention,
)
from qakb.nn.io import (
    load_params,
    read_model_meta,
    restore_params,
    save_params,
    write_model_meta,
)
from qakb.nn.losses import (
    loss_hinge_qas,
    loss_hinge_qat,
    loss_hinge_qat_type,
)
from qakb.nn.tensor import (
    Tensor,
    as_tensor,
    concat,
    dot,
    param,
    reshape,
    row,
    stack_rows,
    zeros,
)

logger = logging.getLogger(__name__)

SCORE_TIE_TOL = 1e-9


def _relation_tokens(relation: str) -> list[str]:
    return [seg for seg in relation.split("/") if seg]


def subject_text(kb: KnowledgeBase, entity: str, type_in_label: bool) -> str:
    """The text standing in for a subject: its primary alias, optionally
    prefixed with the notable type ("musical recording germany")."""
    alias = primary_alias(kb, entity)
    if type_in_label:
        label = notable_type(kb, entity)
        if label is not None:
            return f"{label} {alias}"
    return alias


# ---------------------------------------------------------------------------
# Variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class E2EVariant:
    """Mechanism switches for the end-to-end model."""

    qas_head: bool = False
    char_level: bool = False
    self_attention: bool = False
    type_in_label: bool = False
    type_as_task: bool = False
    out_degree_sort: bool = False

    def __post_init__(self) -> None:
        if self.type_in_label and self.type_as_task:
            raise ValueError(
                "type_in_label and type_as_task are mutually exclusive"
            )

    @property
    def head_mode(self) -> str:
        if self.qas_head:
            return "qas"
        return "qat_type" if self.type_as_task else "qat"

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


VARIANTS = {
    "qa-s": E2EVariant(qas_head=True),
    "qa-t": E2EVariant(),
    "qa-t-w": E2EVariant(char_level=True),
    "qa-t-ws": E2EVariant(char_level=True, self_attention=True),
    "qa-t-wt": E2EVariant(char_level=True, type_in_label=True),
    "qa-t-swt": E2EVariant(char_level=True, self_attention=True,
                           type_in_label=True),
    "qa-t-mwt": E2EVariant(char_level=True, type_as_task=True),
    "qa-t-mwst": E2EVariant(char_level=True, self_attention=True,
                            type_as_task=True),
}


def variant_from_name(name: str, out_degree_sort: bool = False) -> E2EVariant:
    try:
        base = VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown variant {name!r}") from None
    if out_degree_sort:
        return replace(base, out_degree_sort=True)
    return base


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------

class WordEncoder:
    """Word-table rows, optionally extended with a char-GRU summary.

    With char mode on, each word's character sequence runs through a GRU
    and the last state is concatenated onto the word vector, so unknown
    words that share the out-of-vocabulary row still get distinct
    encodings from their spelling.
    """

    def __init__(self, word_table: EmbeddingTable,
                 char_table: Optional[EmbeddingTable],
                 char_gru: Optional[GRUCell]):
        self.word_table = word_table
        self.char_table = char_table
        self.char_gru = char_gru

    @classmethod
    def build(cls, tokens: Sequence[str], cfg: TrainConfig,
              rng: np.random.Generator, char_level: bool) -> "WordEncoder":
        word_table = EmbeddingTable.random(list(tokens), cfg.embed_dim, rng)
        if not char_level:
            return cls(word_table, None, None)
        chars = sorted({ch for tok in tokens if tok != OOV_TOKEN for ch in tok})
        char_table = EmbeddingTable.random(chars, cfg.char_dim, rng)
        char_gru = GRUCell(cfg.char_dim, cfg.char_dim, rng, name="e2e.char_gru")
        return cls(word_table, char_table, char_gru)

    @property
    def char_level(self) -> bool:
        return self.char_gru is not None

    @property
    def dim(self) -> int:
        extra = self.char_gru.hidden_dim if self.char_level else 0
        return self.word_table.dim + extra

    def encode_word(self, word: str) -> Tensor:
        index = self.word_table.indices([word])[0]
        vec = row(self.word_table.vectors, index)
        if not self.char_level:
            return vec
        chars = self.char_table.embed(list(word))
        _, last = run_recurrent(self.char_gru, chars)
        return concat([vec, last])

    def encode_tokens(self, tokens: Sequence[str]) -> Tensor:
        if not tokens:
            return zeros((0, self.dim))
        return stack_rows([self.encode_word(tok) for tok in tokens])

    def parameters(self) -> dict[str, Tensor]:
        params = {"e2e.words": self.word_table.vectors}
        if self.char_level:
            params["e2e.chars"] = self.char_table.vectors
            params.update(self.char_gru.parameters())
        return params


class SharedEncoder:
    """One LSTM + dense stack reused for subjects, questions, predicates."""

    def __init__(self, input_dim: int, cfg: TrainConfig,
                 rng: np.random.Generator, self_attention_enabled: bool):
        self.lstm = LSTMCell(input_dim, cfg.hidden_size, rng, name="e2e.lstm")
        self.self_attention_enabled = self_attention_enabled
        self.max_len = cfg.max_len
        self.dropout_p = cfg.dropout_p
        self.dense = Dense(cfg.max_len * cfg.hidden_size, cfg.hidden_size,
                           rng, activation="relu", name="e2e.dense")

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.lstm.parameters())
        params.update(self.dense.parameters())
        return params


def pad_states(states: Tensor, max_len: int) -> Tensor:
    """Right-pad (with zero rows) or truncate a state matrix to max_len."""
    length, width = states.shape
    if length == max_len:
        return states
    if length > max_len:
        return stack_rows([row(states, i) for i in range(max_len)])
    return concat([states, zeros((max_len - length, width))], axis=0)


def encode_sequence(se: SharedEncoder, we: WordEncoder,
                    tokens: Sequence[str], mode: str = "eval",
                    rng: Optional[np.random.Generator] = None) -> Tensor:
    """Token sequence → shared LSTM (→ self-attention) → flatten → dense."""
    if not tokens:
        raise EmptySequence("cannot encode an empty token sequence")
    states, _ = run_recurrent(se.lstm, we.encode_tokens(tokens))
    if se.self_attention_enabled:
        states = self_attention(states)
    padded = pad_states(states, se.max_len)
    flat = reshape(padded, (se.max_len * se.lstm.hidden_dim,))
    return dropout(se.dense(flat), se.dropout_p, mode, rng)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

class ScoringHead:
    """Combines the per-channel cosine similarities into one fact score."""

    def __init__(self, mode: str):
        if mode not in ("qas", "qat", "qat_type"):
            raise ValueError(f"unknown head mode {mode!r}")
        self.mode = mode
        if mode == "qas":
            self.W = param(np.ones(2))
        else:
            self.w_a = param(np.asarray(1.0))
            self.w_b = param(np.asarray(1.0))
            if mode == "qat_type":
                self.w_c = param(np.asarray(1.0))

    def subject_score(self, cos_qs) -> Tensor:
        return self.w_a * as_tensor(cos_qs)

    def predicate_score(self, cos_qp) -> Tensor:
        return self.w_b * as_tensor(cos_qp)

    def type_score(self, cos_qt) -> Tensor:
        return self.w_c * as_tensor(cos_qt)

    def combined(self, cos_qs, cos_qp, cos_qt=None) -> Tensor:
        if self.mode == "qas":
            pair = concat([reshape(as_tensor(cos_qs), (1,)),
                           reshape(as_tensor(cos_qp), (1,))])
            return dot(self.W, pair)
        total = self.subject_score(cos_qs) + self.predicate_score(cos_qp)
        if self.mode == "qat_type":
            if cos_qt is None:
                raise ValueError("the qat_type head needs a type similarity")
            total = total + self.type_score(cos_qt)
        return total

    def parameters(self) -> dict[str, Tensor]:
        if self.mode == "qas":
            return {"e2e.head.W": self.W}
        params = {"e2e.head.w_a": self.w_a, "e2e.head.w_b": self.w_b}
        if self.mode == "qat_type":
            params["e2e.head.w_c"] = self.w_c
        return params


class E2EModel:
    """Word encoder, shared sequence encoder, and scoring head."""

    def __init__(self, vocab: Sequence[str], cfg: TrainConfig,
                 variant: E2EVariant, rng: np.random.Generator):
        self.cfg = cfg
        self.variant = variant
        self.words = WordEncoder.build(vocab, cfg, rng, variant.char_level)
        self.encoder = SharedEncoder(self.words.dim, cfg, rng,
                                     variant.self_attention)
        self.head = ScoringHead(variant.head_mode)

    def encode_text(self, tokens: Sequence[str], mode: str = "eval",
                    rng: Optional[np.random.Generator] = None) -> Tensor:
        return encode_sequence(self.encoder, self.words, tokens, mode, rng)

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.words.parameters())
        params.update(self.encoder.parameters())
        params.update(self.head.parameters())
        return params


@dataclass
class FactScore:
    """A candidate fact with its per-channel and combined scores."""

    fact: Fact
    s_qs: float
    s_qp: float
    s_qt: Optional[float]
    combined: float


def score_fact(model: E2EModel, q_vec: Tensor, fact: Fact,
               kb: KnowledgeBase, variant: E2EVariant) -> FactScore:
    """Cosine channels and head-combined score for one fact (eval mode)."""
    s_tokens = tokenize(subject_text(kb, fact.subject, variant.type_in_label))
    cos_qs = cosine(q_vec, model.encode_text(s_tokens))
    cos_qp = cosine(q_vec, model.encode_text(_relation_tokens(fact.relation)))
    if variant.type_as_task:
        label = notable_type(kb, fact.subject)
        if label is None:
            cos_qt = as_tensor(0.0)
        else:
            cos_qt = cosine(q_vec, model.encode_text(tokenize(label)))
        combined = model.head.combined(cos_qs, cos_qp, cos_qt)
        s_qt = float(cos_qt.data)
    else:
        combined = model.head.combined(cos_qs, cos_qp)
        s_qt = None
    return FactScore(fact=fact, s_qs=float(cos_qs.data),
                     s_qp=float(cos_qp.data), s_qt=s_qt,
                     combined=float(combined.data))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

class _PoolSampler:
    """Draws without replacement, reshuffling once a pool is exhausted."""

    def __init__(self, items: Sequence[str], rng: np.random.Generator):
        self.items = list(items)
        self.rng = rng
        self.order: list[int] = []

    def draw(self) -> Optional[str]:
        if not self.items:
            return None
        if not self.order:
            self.order = list(self.rng.permutation(len(self.items)))
        return self.items[self.order.pop()]


def _training_vocab(dataset: Sequence[QuestionInstance],
                    kb: KnowledgeBase) -> list[str]:
    toks: set[str] = set()
    for q in dataset:
        toks.update(tokenize(q.text))
    for rec in kb.entities.values():
        for alias in rec.aliases:
            toks.update(tokenize(alias))
        if rec.notable_type is not None:
            toks.update(tokenize(rec.notable_type))
    for fact in kb.facts:
        toks.update(_relation_tokens(fact.relation))
    return sorted(toks)


def _question_loss(model: E2EModel, kb: KnowledgeBase, q: QuestionInstance,
                   neg_subject: Optional[str], neg_pred: Optional[str],
                   cfg: TrainConfig,
                   rng: np.random.Generator) -> Optional[Tensor]:
    """Margin loss for one question, or None when no channel is usable."""
    variant = model.variant
    head = model.head
    q_vec = model.encode_text(tokenize(q.text), "train", rng)

    def enc_subject(entity: str) -> Tensor:
        text = subject_text(kb, entity, variant.type_in_label)
        return model.encode_text(tokenize(text), "train", rng)

    def enc_relation(relation: str) -> Tensor:
        return model.encode_text(_relation_tokens(relation), "train", rng)

    pos_s = cosine(q_vec, enc_subject(q.gold.subject))
    pos_p = cosine(q_vec, enc_relation(q.gold.relation))

    if head.mode == "qas":
        if neg_subject is None and neg_pred is None:
            return None
        neg_s = pos_s if neg_subject is None else cosine(
            q_vec, enc_subject(neg_subject)
        )
        neg_p = pos_p if neg_pred is None else cosine(
            q_vec, enc_relation(neg_pred)
        )
        return loss_hinge_qas(head.combined(pos_s, pos_p),
                              head.combined(neg_s, neg_p), cfg.gamma)

    neg_s = None if neg_subject is None else cosine(
        q_vec, enc_subject(neg_subject)
    )
    neg_p = None if neg_pred is None else cosine(q_vec, enc_relation(neg_pred))

    type_pair = None
    if head.mode == "qat_type" and neg_subject is not None:
        t_pos = notable_type(kb, q.gold.subject)
        t_neg = notable_type(kb, neg_subject)
        if t_pos is not None and t_neg is not None:
            type_pair = (
                cosine(q_vec, model.encode_text(tokenize(t_pos), "train", rng)),
                cosine(q_vec, model.encode_text(tokenize(t_neg), "train", rng)),
            )

    if neg_s is not None and neg_p is not None:
        ss_pos, ss_neg = head.subject_score(pos_s), head.subject_score(neg_s)
        sp_pos, sp_neg = head.predicate_score(pos_p), head.predicate_score(neg_p)
        if type_pair is not None:
            st_pos = head.type_score(type_pair[0])
            st_neg = head.type_score(type_pair[1])
            return loss_hinge_qat_type(ss_pos, ss_neg, sp_pos, sp_neg,
                                       st_pos, st_neg, cfg.gamma)
        return loss_hinge_qat(ss_pos, ss_neg, sp_pos, sp_neg, cfg.gamma)

    terms = []
    if neg_s is not None:
        terms.append(loss_hinge_qas(head.subject_score(pos_s),
                                    head.subject_score(neg_s), cfg.gamma))
    if neg_p is not None:
        terms.append(loss_hinge_qas(head.predicate_score(pos_p),
                                    head.predicate_score(neg_p), cfg.gamma))
    if type_pair is not None:
        terms.append(loss_hinge_qas(head.type_score(type_pair[0]),
                                    head.type_score(type_pair[1]), cfg.gamma))
    if not terms:
        return None
    total = terms[0]
    for extra in terms[1:]:
        total = total + extra
    return total


def train_e2e(dataset: Sequence[QuestionInstance], kb: KnowledgeBase,
              pools: NegativePools, variant: E2EVariant,
              cfg: TrainConfig) -> tuple[E2EModel, list[float]]:
    """Fit an end-to-end model; returns it with per-epoch mean losses."""
    if not dataset:
        raise EmptyTrainingSet("no questions to train on")
    rng = np.random.default_rng(cfg.seed)
    model = E2EModel(_training_vocab(dataset, kb), cfg, variant, rng)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    subj_samplers = [_PoolSampler(p, rng) for p in pools.subject_pools]
    pred_samplers = [_PoolSampler(p, rng) for p in pools.predicate_pools]
    curve: list[float] = []
    skipped = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total, counted = 0.0, 0
        for start in range(0, len(dataset), cfg.batch_size):
            losses = []
            for i in order[start:start + cfg.batch_size]:
                loss = _question_loss(
                    model, kb, dataset[i],
                    subj_samplers[i].draw() if i < len(subj_samplers) else None,
                    pred_samplers[i].draw() if i < len(pred_samplers) else None,
                    cfg, rng,
                )
                if loss is None:
                    skipped += 1
                    continue
                losses.append(loss)
            if not losses:
                continue
            batch_loss = losses[0]
            for extra in losses[1:]:
                batch_loss = batch_loss + extra
            total += float(batch_loss.data)
            counted += len(losses)
            batch_loss = batch_loss * (1.0 / len(losses))
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
        curve.append(total / max(counted, 1))
        logger.debug("e2e epoch %d loss %.6f", epoch, curve[-1])
    if skipped:
        logger.info("skipped %d question steps with no usable channel", skipped)
    return model, curve


# ---------------------------------------------------------------------------
# Answering
# ---------------------------------------------------------------------------

def answer(model: E2EModel, kb: KnowledgeBase, index: AliasIndex,
           question: str, variant: E2EVariant, k: int = 1) -> list[FactScore]:
    """Top-k candidate facts for a question, highest combined score first."""
    cands = retrieve_question_candidates(index, question)
    if not cands:
        raise NoCandidates(f"no candidate entities for {question!r}")
    q_vec = model.encode_text(tokenize(question))
    scored: list[FactScore] = []
    for cand in cands:
        for i in kb.by_subject.get(cand.id, ()):
            scored.append(score_fact(model, q_vec, kb.facts[i], kb, variant))
    if not scored:
        raise NoCandidates(f"candidates for {question!r} hold no facts")
    scored.sort(key=lambda fs: (-fs.combined, fs.fact.subject,
                                fs.fact.relation, fs.fact.object))
    if variant.out_degree_sort:
        top = scored[0].combined
        tied = [fs for fs in scored if fs.combined >= top - SCORE_TIE_TOL]
        rest = scored[len(tied):]
        tied.sort(key=lambda fs: -out_degree(kb, fs.fact.subject))
        scored = tied + rest
    return scored[:k]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_e2e(model: E2EModel, path: str) -> None:
    save_params(model.parameters(), path)
    write_model_meta(path, "e2e", {
        "vocab": list(model.words.word_table.vocab),
        "config": model.cfg.to_dict(),
        "variant": model.variant.to_dict(),
    })


def load_e2e(path: str) -> E2EModel:
    meta = read_model_meta(path, "e2e")
    cfg = TrainConfig(**meta["config"])
    variant = E2EVariant(**meta["variant"])
    model = E2EModel(meta["vocab"], cfg, variant, np.random.default_rng(0))
    restore_params(model.parameters(), load_params(path))
    return model
