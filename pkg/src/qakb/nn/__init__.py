"""Numpy-backed differentiable computation for the QA models."""

from qakb.nn.config import TrainConfig
from qakb.nn.gradcheck import finite_diff_check
from qakb.nn.io import (
    load_params,
    load_word_vectors,
    load_word_vectors_file,
    restore_params,
    save_params,
)
from qakb.nn.layers import (
    Dense,
    EmbeddingTable,
    GRUCell,
    LSTMCell,
    OOV_TOKEN,
    attention_matrix,
    bidirectional_encode,
    cosine,
    dropout,
    glorot,
    run_recurrent,
    self_attention,
)
from qakb.nn.losses import (
    loss_binary_ce,
    loss_categorical_ce,
    loss_hinge_qas,
    loss_hinge_qat,
    loss_hinge_qat_type,
)
from qakb.nn.optim import Adam
from qakb.nn.tensor import Tensor, as_tensor, param

__all__ = [
    "TrainConfig",
    "Tensor",
    "as_tensor",
    "param",
    "Dense",
    "EmbeddingTable",
    "GRUCell",
    "LSTMCell",
    "OOV_TOKEN",
    "attention_matrix",
    "bidirectional_encode",
    "cosine",
    "dropout",
    "glorot",
    "run_recurrent",
    "self_attention",
    "loss_binary_ce",
    "loss_categorical_ce",
    "loss_hinge_qas",
    "loss_hinge_qat",
    "loss_hinge_qat_type",
    "Adam",
    "finite_diff_check",
    "save_params",
    "load_params",
    "restore_params",
    "load_word_vectors",
    "load_word_vectors_file",
]
