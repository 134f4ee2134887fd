"""The three forecaster architectures and their parameter plumbing."""

from __future__ import annotations

import numpy as np

from .attention import causal_mask, multi_head_attention, scaled_dot_attention
from .params import ModelParams, load_checkpoint, save_checkpoint
from .recurrent import (
    LSTMForecaster,
    RecurrentSpec,
    RNNForecaster,
    lstm_param_count,
    rnn_param_count,
)
from .transformer import (
    TransformerForecaster,
    TransformerSpec,
    decoder_forward,
    encoder_forward,
    positional_encoding,
    transformer_param_count,
)

__all__ = [
    "MODEL_KINDS",
    "MODEL_LABELS",
    "ModelParams",
    "TransformerSpec",
    "RecurrentSpec",
    "TransformerForecaster",
    "LSTMForecaster",
    "RNNForecaster",
    "build_forecaster",
    "scaled_dot_attention",
    "multi_head_attention",
    "causal_mask",
    "positional_encoding",
    "encoder_forward",
    "decoder_forward",
    "transformer_param_count",
    "lstm_param_count",
    "rnn_param_count",
    "save_checkpoint",
    "load_checkpoint",
]

# Canonical ordering used for reports ("Transformer-2TI" before "LSTM-2TI" ...).
MODEL_KINDS = ("transformer", "lstm", "rnn")
MODEL_LABELS = {"transformer": "Transformer", "lstm": "LSTM", "rnn": "RNN"}


def build_forecaster(
    kind: str,
    rng: np.random.Generator,
    *,
    transformer_spec: TransformerSpec | None = None,
    recurrent_spec: RecurrentSpec | None = None,
):
    """Construct a forecaster of ``kind`` with weights drawn from ``rng``."""
    if kind == "transformer":
        return TransformerForecaster(transformer_spec or TransformerSpec(), rng)
    if kind == "lstm":
        return LSTMForecaster(recurrent_spec or RecurrentSpec(), rng)
    if kind == "rnn":
        return RNNForecaster(recurrent_spec or RecurrentSpec(), rng)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
