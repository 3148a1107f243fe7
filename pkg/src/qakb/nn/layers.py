"""Network building blocks on top of the autodiff tensor.

Every layer exposes ``parameters() -> dict[name, Tensor]`` so optimizers
and snapshots can address weights by stable hierarchical names.
"""

from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np

from qakb.errors import ShapeMismatch
from qakb.nn.tensor import (
    Tensor,
    concat,
    gather_rows,
    matmul,
    mul,
    norm,
    param,
    relu,
    row,
    sigmoid,
    softmax_rows,
    stack_rows,
    tanh,
    transpose,
    zeros,
)

log = logging.getLogger(__name__)

OOV_TOKEN = "<oov>"


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[-1] if len(shape) > 1 else shape[0]
    fan_out = shape[0]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class EmbeddingTable:
    """Token-to-vector lookup; unknown tokens share one trained row."""

    def __init__(self, tokens: list[str], vectors: np.ndarray,
                 trainable: bool = True):
        if len(tokens) != vectors.shape[0]:
            raise ShapeMismatch(
                f"{len(tokens)} tokens vs {vectors.shape[0]} vector rows"
            )
        self.vocab = {tok: i for i, tok in enumerate(tokens)}
        if OOV_TOKEN not in self.vocab:
            raise ShapeMismatch(f"vocabulary must contain {OOV_TOKEN!r}")
        self.oov_index = self.vocab[OOV_TOKEN]
        self.vectors = param(vectors, requires_grad=trainable)
        self.dim = vectors.shape[1]

    @classmethod
    def random(cls, tokens: list[str], dim: int, rng: np.random.Generator,
               scale: float = 0.1, trainable: bool = True) -> "EmbeddingTable":
        toks = list(dict.fromkeys(tokens))
        if OOV_TOKEN not in toks:
            toks.append(OOV_TOKEN)
        vecs = rng.uniform(-scale, scale, size=(len(toks), dim))
        return cls(toks, vecs, trainable=trainable)

    @classmethod
    def from_pretrained(cls, tokens: list[str], vectors: np.ndarray,
                        trainable: bool = True) -> "EmbeddingTable":
        toks = list(tokens)
        vecs = vectors
        if OOV_TOKEN not in toks:
            toks = toks + [OOV_TOKEN]
            vecs = np.vstack([vectors, np.zeros((1, vectors.shape[1]))])
        return cls(toks, vecs, trainable=trainable)

    def indices(self, seq: list[str]) -> list[int]:
        return [self.vocab.get(tok, self.oov_index) for tok in seq]

    def embed(self, seq: list[str]) -> Tensor:
        """Rows for a token sequence; empty input gives a [0, d] tensor."""
        return gather_rows(self.vectors, self.indices(seq))

    def parameters(self) -> dict[str, Tensor]:
        return {"embedding": self.vectors} if self.vectors.requires_grad else {}


class Dense:
    """Affine map with an optional activation; accepts vectors or matrices."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 activation: str = "none", name: str = "dense"):
        if activation not in ("none", "relu", "sigmoid"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.name = name
        self.weight = param(glorot(rng, (out_dim, in_dim)))
        self.bias = param(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch(
                f"{self.name}: input dim {x.shape[-1]}, expected {self.in_dim}"
            )
        if x.ndim == 1:
            y = matmul(self.weight, x) + self.bias
        else:
            y = matmul(x, transpose(self.weight)) + self.bias
        if self.activation == "relu":
            return relu(y)
        if self.activation == "sigmoid":
            return sigmoid(y)
        return y

    def parameters(self) -> dict[str, Tensor]:
        return {f"{self.name}.weight": self.weight, f"{self.name}.bias": self.bias}


class GRUCell:
    """Gated recurrent unit: h' = (1-z)*n + z*h with reset-gated candidate."""

    state_size = 1

    def __init__(self, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator, name: str = "gru"):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.name = name
        self._p: dict[str, Tensor] = {}
        for gate in ("z", "r", "n"):
            self._p[f"W_{gate}"] = param(glorot(rng, (hidden_dim, input_dim)))
            self._p[f"U_{gate}"] = param(glorot(rng, (hidden_dim, hidden_dim)))
            self._p[f"b_{gate}"] = param(np.zeros(hidden_dim))

    def initial_state(self) -> Tensor:
        return zeros((self.hidden_dim,))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        p = self._p
        z = sigmoid(matmul(p["W_z"], x) + matmul(p["U_z"], h) + p["b_z"])
        r = sigmoid(matmul(p["W_r"], x) + matmul(p["U_r"], h) + p["b_r"])
        n = tanh(matmul(p["W_n"], x) + mul(r, matmul(p["U_n"], h)) + p["b_n"])
        return (1.0 - z) * n + z * h

    def parameters(self) -> dict[str, Tensor]:
        return {f"{self.name}.{k}": v for k, v in self._p.items()}


class LSTMCell:
    """Long short-term memory cell with the usual i/f/g/o gates."""

    state_size = 2

    def __init__(self, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator, name: str = "lstm"):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.name = name
        self._p: dict[str, Tensor] = {}
        for gate in ("i", "f", "g", "o"):
            self._p[f"W_{gate}"] = param(glorot(rng, (hidden_dim, input_dim)))
            self._p[f"U_{gate}"] = param(glorot(rng, (hidden_dim, hidden_dim)))
            self._p[f"b_{gate}"] = param(np.zeros(hidden_dim))

    def initial_state(self) -> tuple[Tensor, Tensor]:
        return zeros((self.hidden_dim,)), zeros((self.hidden_dim,))

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]):
        h, c = state
        p = self._p
        i = sigmoid(matmul(p["W_i"], x) + matmul(p["U_i"], h) + p["b_i"])
        f = sigmoid(matmul(p["W_f"], x) + matmul(p["U_f"], h) + p["b_f"])
        g = tanh(matmul(p["W_g"], x) + matmul(p["U_g"], h) + p["b_g"])
        o = sigmoid(matmul(p["W_o"], x) + matmul(p["U_o"], h) + p["b_o"])
        c_new = f * c + i * g
        h_new = o * tanh(c_new)
        return h_new, c_new

    def parameters(self) -> dict[str, Tensor]:
        return {f"{self.name}.{k}": v for k, v in self._p.items()}


def _cell_outputs(cell, inputs: Tensor, positions: list[int]) -> list[Tensor]:
    state = cell.initial_state()
    outputs: list[Tensor] = []
    for t in positions:
        x = row(inputs, t)
        if cell.state_size == 1:
            state = cell.step(x, state)
            outputs.append(state)
        else:
            state = cell.step(x, state)
            outputs.append(state[0])
    return outputs


def run_recurrent(cell, inputs: Tensor, direction: str = "forward"):
    """Run a cell over [T, d] inputs; returns ([T, h] states, [h] last).

    The backward direction processes the sequence right-to-left but the
    returned state matrix stays aligned with input positions; ``last`` is
    then the state computed at position 0.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    if inputs.ndim != 2:
        raise ShapeMismatch(f"recurrent input must be [T, d], got {inputs.shape}")
    if inputs.shape[1] != cell.input_dim:
        raise ShapeMismatch(
            f"input dim {inputs.shape[1]}, cell expects {cell.input_dim}"
        )
    T = inputs.shape[0]
    if T == 0:
        return zeros((0, cell.hidden_dim)), zeros((cell.hidden_dim,))
    positions = list(range(T)) if direction == "forward" else list(range(T - 1, -1, -1))
    outputs = _cell_outputs(cell, inputs, positions)
    last = outputs[-1]
    if direction == "backward":
        outputs = list(reversed(outputs))
    return stack_rows(outputs), last


def bidirectional_encode(cell_fwd, cell_bwd, inputs: Tensor):
    """Concatenate forward and backward runs: ([T, 2h], [2h])."""
    states_f, last_f = run_recurrent(cell_fwd, inputs, "forward")
    states_b, last_b = run_recurrent(cell_bwd, inputs, "backward")
    if inputs.shape[0] == 0:
        return zeros((0, cell_fwd.hidden_dim + cell_bwd.hidden_dim)), concat(
            [last_f, last_b]
        )
    return concat([states_f, states_b], axis=1), concat([last_f, last_b])


def self_attention(states: Tensor) -> Tensor:
    """Scaled dot-product attention of a state sequence against itself.

    A = softmax(states statesᵀ / sqrt(h)) row-wise; output is A·states.
    """
    if states.ndim != 2:
        raise ShapeMismatch(f"self_attention expects [T, h], got {states.shape}")
    T, h = states.shape
    if T == 0:
        return states
    scores = mul(matmul(states, transpose(states)), 1.0 / math.sqrt(h))
    return matmul(softmax_rows(scores), states)


def attention_matrix(states: Tensor) -> np.ndarray:
    """The attention weights alone (for inspection and tests)."""
    T, h = states.shape
    scores = states.data @ states.data.T / math.sqrt(h)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dropout(x: Tensor, p: float, mode: str, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: train-time mask and rescale, eval-time identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown dropout mode {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout requires an rng")
    mask = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return mul(x, mask)


_warned_zero_norm = False


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors; zero-norm inputs score 0."""
    global _warned_zero_norm
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatch(f"cosine expects equal-length vectors, got {a.shape} / {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        # first occurrence is worth surfacing; after that it is routine
        level = logging.DEBUG if _warned_zero_norm else logging.WARNING
        log.log(level, "cosine of a zero-norm vector; returning 0.0")
        _warned_zero_norm = True
        return Tensor(0.0)
    return matmul(a, b) / (norm(a) * norm(b))
