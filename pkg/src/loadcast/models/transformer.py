"""Encoder-decoder Transformer for one-step-ahead load forecasting.

A window of n past readings is projected to d_model, position-encoded, and
run through a stack of identical encoder layers (self-attention + position-
wise feed-forward, each wrapped as LayerNorm(x + Sublayer(x))). The decoder
consumes a single target token (the last observed reading) through causally
masked self-attention, cross-attention over the encoder output, and a
feed-forward sublayer; a linear head maps its output to the scalar forecast.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import EmptyInputError
from .attention import causal_mask, multi_head_attention
from .params import ModelParams, uniform_init

__all__ = [
    "TransformerSpec",
    "positional_encoding",
    "encoder_forward",
    "decoder_forward",
    "TransformerForecaster",
    "transformer_param_count",
]

LAYER_NORM_EPS = 1e-5

# Attention projection parameter names, in init order.
_ATTN_PARAMS = ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o")


@dataclass(frozen=True)
class TransformerSpec:
    """Architecture hyperparameters.

    Defaults are desk-scale: small enough to train in minutes on a CPU.
    ``n_layers=0`` is allowed as a testing hook (the stack degenerates to the
    identity); real models use >= 1.
    """

    n_layers: int = 6
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.d_model < 1 or self.d_ff < 1 or self.n_heads < 1:
            raise ValueError("d_model, d_ff and n_heads must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal position matrix [seq_len, d_model].

    Column pair 2i holds sin(pos / 10000^(2i/d_model)), column 2i+1 the
    cosine of the same angle. Deterministic and input-independent; every
    entry lies in [-1, 1].
    """
    if d_model % 2 != 0:
        raise ValueError(f"positional encoding needs an even d_model, got {d_model}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((seq_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when no rng is supplied (evaluation)."""
    if rng is None or rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return ad.mul_const(x, keep / (1.0 - rate))


def _init_attention(params: ModelParams, prefix: str, d_model: int, rng) -> None:
    for name in _ATTN_PARAMS:
        if name.startswith("w"):
            params.add(f"{prefix}.{name}", uniform_init(rng, (d_model, d_model), d_model))
        else:
            params.add(f"{prefix}.{name}", Tensor(np.zeros(d_model)))


def _init_norm(params: ModelParams, prefix: str, d_model: int) -> None:
    params.add(f"{prefix}.gamma", Tensor(np.ones(d_model)))
    params.add(f"{prefix}.beta", Tensor(np.zeros(d_model)))


def _init_ff(params: ModelParams, prefix: str, d_model: int, d_ff: int, rng) -> None:
    params.add(f"{prefix}.w1", uniform_init(rng, (d_model, d_ff), d_model))
    params.add(f"{prefix}.b1", Tensor(np.zeros(d_ff)))
    params.add(f"{prefix}.w2", uniform_init(rng, (d_ff, d_model), d_ff))
    params.add(f"{prefix}.b2", Tensor(np.zeros(d_model)))


def init_transformer_params(spec: TransformerSpec, rng: np.random.Generator) -> ModelParams:
    """Build all parameters in a fixed path order (fixes the RNG draw order)."""
    d = spec.d_model
    params = ModelParams()
    params.add("in_proj.w", uniform_init(rng, (1, d), 1))
    params.add("in_proj.b", Tensor(np.zeros(d)))
    for i in range(spec.n_layers):
        _init_attention(params, f"encoder.{i}.attn", d, rng)
        _init_norm(params, f"encoder.{i}.norm1", d)
        _init_ff(params, f"encoder.{i}.ff", d, spec.d_ff, rng)
        _init_norm(params, f"encoder.{i}.norm2", d)
    for i in range(spec.n_layers):
        _init_attention(params, f"decoder.{i}.self_attn", d, rng)
        _init_norm(params, f"decoder.{i}.norm1", d)
        _init_attention(params, f"decoder.{i}.cross_attn", d, rng)
        _init_norm(params, f"decoder.{i}.norm2", d)
        _init_ff(params, f"decoder.{i}.ff", d, spec.d_ff, rng)
        _init_norm(params, f"decoder.{i}.norm3", d)
    params.add("head.w", uniform_init(rng, (d, 1), d))
    params.add("head.b", Tensor(np.zeros(1)))
    return params.freeze()


def transformer_param_count(spec: TransformerSpec) -> int:
    """Closed-form parameter count for a spec.

    in_proj: 2d; head: d+1; per attention block: 4(d^2+d); per norm: 2d;
    per feed-forward: 2*d*f + f + d. Encoder layer = attn + ff + 2 norms;
    decoder layer = 2 attn + ff + 3 norms.
    """
    d, f = spec.d_model, spec.d_ff
    attn = 4 * (d * d + d)
    norm = 2 * d
    ff = 2 * d * f + f + d
    enc_layer = attn + ff + 2 * norm
    dec_layer = 2 * attn + ff + 3 * norm
    return 2 * d + spec.n_layers * (enc_layer + dec_layer) + (d + 1)


def _feed_forward(x: Tensor, p: dict, *, dropout_rate: float, rng) -> Tensor:
    hidden = ad.relu(ad.add_bias(ad.matmul(x, p["w1"]), p["b1"]))
    out = ad.add_bias(ad.matmul(hidden, p["w2"]), p["b2"])
    return _dropout(out, dropout_rate, rng)


def _residual_norm(x: Tensor, sub_out: Tensor, p: dict) -> Tensor:
    return ad.layer_norm(ad.add(x, sub_out), p["gamma"], p["beta"], LAYER_NORM_EPS)


def encoder_forward(
    x: Tensor,
    spec: TransformerSpec,
    params: ModelParams,
    *,
    dropout_rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Run the encoder stack over x ([L, d_model] or [B, L, d_model])."""
    h = x
    for i in range(spec.n_layers):
        attn = multi_head_attention(h, h, params.subset(f"encoder.{i}.attn."), spec.n_heads)
        attn = _dropout(attn, spec.dropout_rate, dropout_rng)
        h = _residual_norm(h, attn, params.subset(f"encoder.{i}.norm1."))
        ff = _feed_forward(
            h, params.subset(f"encoder.{i}.ff."), dropout_rate=spec.dropout_rate, rng=dropout_rng
        )
        h = _residual_norm(h, ff, params.subset(f"encoder.{i}.norm2."))
    return h


def decoder_forward(
    tgt: Tensor,
    memory: Tensor,
    spec: TransformerSpec,
    params: ModelParams,
    *,
    dropout_rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Run the decoder stack: causally masked self-attention over ``tgt``,
    cross-attention into ``memory``, then feed-forward, per layer."""
    mask = causal_mask(tgt.shape[-2])
    h = tgt
    for i in range(spec.n_layers):
        self_attn = multi_head_attention(
            h, h, params.subset(f"decoder.{i}.self_attn."), spec.n_heads, mask=mask
        )
        self_attn = _dropout(self_attn, spec.dropout_rate, dropout_rng)
        h = _residual_norm(h, self_attn, params.subset(f"decoder.{i}.norm1."))
        cross = multi_head_attention(
            h, memory, params.subset(f"decoder.{i}.cross_attn."), spec.n_heads
        )
        cross = _dropout(cross, spec.dropout_rate, dropout_rng)
        h = _residual_norm(h, cross, params.subset(f"decoder.{i}.norm2."))
        ff = _feed_forward(
            h, params.subset(f"decoder.{i}.ff."), dropout_rate=spec.dropout_rate, rng=dropout_rng
        )
        h = _residual_norm(h, ff, params.subset(f"decoder.{i}.norm3."))
    return h


class TransformerForecaster:
    """Maps a window of n scaled readings to the next-interval forecast."""

    kind = "transformer"

    def __init__(self, spec: TransformerSpec, rng: np.random.Generator):
        self.spec = spec
        self.params = init_transformer_params(spec, rng)

    def forward(
        self,
        windows: np.ndarray,
        *,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Forecast a batch of windows [B, n] -> Tensor [B].

        The decoder target sequence is the single last observed reading of
        each window. Pass ``dropout_rng`` during training only.
        """
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 2 or windows.shape[1] < 1:
            raise EmptyInputError(f"forecaster needs windows of shape [B, n>=1], got {windows.shape}")
        batch, n = windows.shape
        d = self.spec.d_model

        src = ad.add_bias(
            ad.matmul(Tensor(windows.reshape(batch * n, 1)), self.params["in_proj.w"]),
            self.params["in_proj.b"],
        )
        src = ad.reshape(src, (batch, n, d))
        src = ad.add_const(src, positional_encoding(n, d))
        src = _dropout(src, self.spec.dropout_rate, dropout_rng)
        memory = encoder_forward(src, self.spec, self.params, dropout_rng=dropout_rng)

        tgt = ad.add_bias(
            ad.matmul(Tensor(windows[:, -1:]), self.params["in_proj.w"]),
            self.params["in_proj.b"],
        )
        tgt = ad.reshape(tgt, (batch, 1, d))
        tgt = ad.add_const(tgt, positional_encoding(1, d))
        tgt = _dropout(tgt, self.spec.dropout_rate, dropout_rng)
        decoded = decoder_forward(tgt, memory, self.spec, self.params, dropout_rng=dropout_rng)

        out = ad.add_bias(ad.matmul(decoded, self.params["head.w"]), self.params["head.b"])
        return ad.reshape(out, (batch,))

    def predict(self, window) -> float:
        """Forecast one window (sequence of n scaled readings) eagerly."""
        return float(self.predict_batch(np.asarray(window, dtype=np.float64)[None, :])[0])

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(windows).data

    def param_count(self) -> int:
        return self.params.total_count()
