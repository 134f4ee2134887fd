"""Recurrent baselines: LSTM and vanilla RNN, unrolled over the window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import EmptyInputError
from .params import ModelParams, uniform_init

__all__ = [
    "RecurrentSpec",
    "LSTMForecaster",
    "RNNForecaster",
    "lstm_param_count",
    "rnn_param_count",
]


@dataclass(frozen=True)
class RecurrentSpec:
    """Hyperparameters shared by both recurrent baselines."""

    hidden_size: int = 64

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError(f"hidden_size must be >= 1, got {self.hidden_size}")


def lstm_param_count(hidden_size: int) -> int:
    """4 gates x (input weight H + recurrent weight H^2 + bias H) + head H+1."""
    h = hidden_size
    return 4 * (h + h * h + h) + h + 1


def rnn_param_count(hidden_size: int) -> int:
    """w_x H + w_h H^2 + bias H + head H+1."""
    h = hidden_size
    return h + h * h + h + h + 1


def _affine(x_t: Tensor, h: Tensor, p: ModelParams, wx: str, wh: str, b: str) -> Tensor:
    return ad.add_bias(ad.add(ad.matmul(x_t, p[wx]), ad.matmul(h, p[wh])), p[b])


class LSTMForecaster:
    """Standard LSTM cell (sigmoid gates, tanh candidate) over the n readings,
    with a linear head on the final hidden state."""

    kind = "lstm"

    def __init__(self, spec: RecurrentSpec, rng: np.random.Generator):
        self.spec = spec
        h = spec.hidden_size
        params = ModelParams()
        for gate in ("i", "f", "g", "o"):
            params.add(f"lstm.w_x{gate}", uniform_init(rng, (1, h), 1))
            params.add(f"lstm.w_h{gate}", uniform_init(rng, (h, h), h))
            params.add(f"lstm.b_{gate}", Tensor(np.zeros(h)))
        params.add("head.w", uniform_init(rng, (h, 1), h))
        params.add("head.b", Tensor(np.zeros(1)))
        self.params = params.freeze()

    def forward(self, windows: np.ndarray, *, dropout_rng=None) -> Tensor:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 2 or windows.shape[1] < 1:
            raise EmptyInputError(f"forecaster needs windows of shape [B, n>=1], got {windows.shape}")
        batch, n = windows.shape
        p = self.params
        hidden = Tensor(np.zeros((batch, self.spec.hidden_size)))
        cell = Tensor(np.zeros((batch, self.spec.hidden_size)))
        for t in range(n):
            x_t = Tensor(windows[:, t:t + 1])
            i = ad.sigmoid(_affine(x_t, hidden, p, "lstm.w_xi", "lstm.w_hi", "lstm.b_i"))
            f = ad.sigmoid(_affine(x_t, hidden, p, "lstm.w_xf", "lstm.w_hf", "lstm.b_f"))
            g = ad.tanh(_affine(x_t, hidden, p, "lstm.w_xg", "lstm.w_hg", "lstm.b_g"))
            o = ad.sigmoid(_affine(x_t, hidden, p, "lstm.w_xo", "lstm.w_ho", "lstm.b_o"))
            cell = ad.add(ad.mul(f, cell), ad.mul(i, g))
            hidden = ad.mul(o, ad.tanh(cell))
        out = ad.add_bias(ad.matmul(hidden, p["head.w"]), p["head.b"])
        return ad.reshape(out, (batch,))

    def predict(self, window) -> float:
        return float(self.predict_batch(np.asarray(window, dtype=np.float64)[None, :])[0])

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(windows).data

    def param_count(self) -> int:
        return self.params.total_count()


class RNNForecaster:
    """Vanilla RNN: h_t = tanh(W_x x_t + W_h h_{t-1} + b), head on h_n."""

    kind = "rnn"

    def __init__(self, spec: RecurrentSpec, rng: np.random.Generator):
        self.spec = spec
        h = spec.hidden_size
        params = ModelParams()
        params.add("rnn.w_x", uniform_init(rng, (1, h), 1))
        params.add("rnn.w_h", uniform_init(rng, (h, h), h))
        params.add("rnn.b", Tensor(np.zeros(h)))
        params.add("head.w", uniform_init(rng, (h, 1), h))
        params.add("head.b", Tensor(np.zeros(1)))
        self.params = params.freeze()

    def forward(self, windows: np.ndarray, *, dropout_rng=None) -> Tensor:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 2 or windows.shape[1] < 1:
            raise EmptyInputError(f"forecaster needs windows of shape [B, n>=1], got {windows.shape}")
        batch, n = windows.shape
        p = self.params
        hidden = Tensor(np.zeros((batch, self.spec.hidden_size)))
        for t in range(n):
            x_t = Tensor(windows[:, t:t + 1])
            hidden = ad.tanh(_affine(x_t, hidden, p, "rnn.w_x", "rnn.w_h", "rnn.b"))
        out = ad.add_bias(ad.matmul(hidden, p["head.w"]), p["head.b"])
        return ad.reshape(out, (batch,))

    def predict(self, window) -> float:
        return float(self.predict_batch(np.asarray(window, dtype=np.float64)[None, :])[0])

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        return self.forward(windows).data

    def param_count(self) -> int:
        return self.params.total_count()
