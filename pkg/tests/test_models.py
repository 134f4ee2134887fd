"""Architecture tests: attention semantics, stack behavior, parameter
plumbing, and the recurrent baselines against eager numpy references."""

import numpy as np
import pytest

from loadcast import autodiff as ad
from loadcast.autodiff import Tensor
from loadcast.errors import (
    CheckpointError,
    DegenerateAttentionError,
    EmptyInputError,
    ShapeError,
)
from loadcast.models import (
    LSTMForecaster,
    ModelParams,
    RecurrentSpec,
    RNNForecaster,
    TransformerForecaster,
    TransformerSpec,
    build_forecaster,
    causal_mask,
    decoder_forward,
    encoder_forward,
    lstm_param_count,
    multi_head_attention,
    positional_encoding,
    rnn_param_count,
    scaled_dot_attention,
    transformer_param_count,
)
from loadcast.models.params import load_checkpoint, save_checkpoint
from loadcast.models.transformer import init_transformer_params
from loadcast.rng import make_rng


# --- positional encoding ----------------------------------------------------

def test_pe_row_zero():
    pe = positional_encoding(4, 6)
    np.testing.assert_array_equal(pe[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])


def test_pe_closed_form():
    pe = positional_encoding(2, 4)
    assert pe[1, 0] == pytest.approx(np.sin(1.0), abs=1e-12)
    assert pe[1, 1] == pytest.approx(np.cos(1.0), abs=1e-12)
    assert pe[1, 2] == pytest.approx(np.sin(1.0 / 10000.0 ** 0.5), abs=1e-12)


def test_pe_range():
    pe = positional_encoding(16, 8)
    assert np.all(pe >= -1.0) and np.all(pe <= 1.0)


def test_pe_rejects_odd_d_model():
    with pytest.raises(ValueError):
        positional_encoding(4, 5)


# --- scaled dot-product attention -------------------------------------------

def test_attention_single_key(rng):
    q = Tensor(rng.normal(size=(3, 4)))
    k = Tensor(rng.normal(size=(1, 4)))
    v = Tensor(rng.normal(size=(1, 4)))
    out, weights = scaled_dot_attention(q, k, v)
    np.testing.assert_array_equal(weights.data, np.ones((3, 1)))
    np.testing.assert_array_equal(out.data, np.broadcast_to(v.data, (3, 4)))


def test_attention_zero_query_uniform(rng):
    q = Tensor(np.zeros((2, 4)))
    k = Tensor(rng.normal(size=(5, 4)))
    v = Tensor(rng.normal(size=(5, 4)))
    _, weights = scaled_dot_attention(q, k, v)
    np.testing.assert_allclose(weights.data, np.full((2, 5), 0.2), atol=1e-15)


def test_attention_closed_form_dk1():
    # dk=1 so the 1/sqrt(dk) scale is 1: scores row 0 = [1, 0]
    q = Tensor([[1.0], [0.0]])
    k = Tensor([[1.0], [0.0]])
    v = Tensor([[2.0], [4.0]])
    _, weights = scaled_dot_attention(q, k, v)
    e = np.e
    np.testing.assert_allclose(weights.data[0], [e / (e + 1.0), 1.0 / (e + 1.0)], atol=1e-12)
    np.testing.assert_allclose(weights.data[1], [0.5, 0.5], atol=1e-15)


def test_attention_rows_sum_to_one_masked(rng):
    for _ in range(50):
        length = int(rng.integers(2, 7))
        dk = int(rng.integers(1, 5))
        q = Tensor(rng.uniform(-2, 2, (length, dk)))
        k = Tensor(rng.uniform(-2, 2, (length, dk)))
        v = Tensor(rng.uniform(-2, 2, (length, dk)))
        mask = causal_mask(length)
        _, weights = scaled_dot_attention(q, k, v, mask=mask)
        assert np.abs(weights.data.sum(axis=-1) - 1.0).max() < 1e-12
        assert np.all(weights.data[~mask] == 0.0)


def test_attention_fully_masked_row():
    mask = np.zeros((2, 2), dtype=bool)
    mask[0, :] = True
    q = Tensor(np.zeros((2, 3)))
    with pytest.raises(DegenerateAttentionError):
        scaled_dot_attention(q, q, q, mask=mask)


def test_attention_shape_errors():
    with pytest.raises(ShapeError):
        scaled_dot_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))),
                             Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError):
        scaled_dot_attention(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3))),
                             Tensor(np.zeros((5, 3))))


# --- multi-head attention ---------------------------------------------------

def _identity_attn_params(d):
    eye = lambda: Tensor(np.eye(d))
    zero = lambda: Tensor(np.zeros(d))
    return {"w_q": eye(), "b_q": zero(), "w_k": eye(), "b_k": zero(),
            "w_v": eye(), "b_v": zero(), "w_o": eye(), "b_o": zero()}


def test_multi_head_one_head_identity_reduces(rng):
    x = Tensor(rng.uniform(-2, 2, (5, 4)))
    out = multi_head_attention(x, x, _identity_attn_params(4), n_heads=1)
    ref, _ = scaled_dot_attention(x, x, x)
    np.testing.assert_allclose(out.data, ref.data, atol=1e-12)


def test_multi_head_output_shape(rng):
    for d_model, n_heads in ((8, 2), (6, 3), (4, 4)):
        r = make_rng(3, "mha", d_model)
        params = {}
        for w in ("w_q", "w_k", "w_v", "w_o"):
            params[w] = Tensor(r.normal(size=(d_model, d_model)))
        for b in ("b_q", "b_k", "b_v", "b_o"):
            params[b] = Tensor(r.normal(size=d_model))
        out = multi_head_attention(Tensor(rng.normal(size=(7, d_model))),
                                  Tensor(rng.normal(size=(5, d_model))),
                                  params, n_heads)
        assert out.shape == (7, d_model)


def test_multi_head_causal_perturbation(rng):
    """With a causal mask, output row t ignores inputs at positions > t."""
    d, L = 8, 5
    r = make_rng(4, "causal")
    params = {w: Tensor(r.normal(size=(d, d)) * 0.3) for w in ("w_q", "w_k", "w_v", "w_o")}
    params.update({b: Tensor(r.normal(size=d) * 0.3) for b in ("b_q", "b_k", "b_v", "b_o")})
    x = rng.uniform(-1, 1, (L, d))
    base = multi_head_attention(Tensor(x), Tensor(x), params, 2, mask=causal_mask(L)).data
    for t in range(L - 1):
        bumped = x.copy()
        bumped[t + 1:] += rng.uniform(0.5, 1.5, bumped[t + 1:].shape)
        out = multi_head_attention(Tensor(bumped), Tensor(bumped), params, 2,
                                   mask=causal_mask(L)).data
        assert np.abs(out[: t + 1] - base[: t + 1]).max() < 1e-12


def test_multi_head_single_position_mask_is_noop(rng):
    d = 6
    r = make_rng(5, "lt1")
    params = {w: Tensor(r.normal(size=(d, d))) for w in ("w_q", "w_k", "w_v", "w_o")}
    params.update({b: Tensor(r.normal(size=d)) for b in ("b_q", "b_k", "b_v", "b_o")})
    x = Tensor(rng.normal(size=(1, d)))
    masked = multi_head_attention(x, x, params, 2, mask=causal_mask(1)).data
    unmasked = multi_head_attention(x, x, params, 2).data
    np.testing.assert_allclose(masked, unmasked, atol=1e-12)


# --- encoder / decoder stacks -----------------------------------------------

def test_encoder_preserves_shape(tiny_transformer_spec):
    params = init_transformer_params(tiny_transformer_spec, make_rng(0, "enc"))
    x = Tensor(make_rng(1).normal(size=(5, tiny_transformer_spec.d_model)))
    out = encoder_forward(x, tiny_transformer_spec, params)
    assert out.shape == x.shape


def test_encoder_zero_layers_is_identity():
    spec = TransformerSpec(n_layers=0, d_model=8, n_heads=2, d_ff=16, dropout_rate=0.0)
    params = init_transformer_params(spec, make_rng(0))
    x = Tensor(make_rng(2).normal(size=(4, 8)))
    out = encoder_forward(x, spec, params)
    np.testing.assert_array_equal(out.data, x.data)


def test_encoder_permutation_equivariance(tiny_transformer_spec, rng):
    """Without positional encoding the encoder treats rows as a set."""
    spec = tiny_transformer_spec
    params = init_transformer_params(spec, make_rng(0, "perm"))
    x = rng.uniform(-1, 1, (6, spec.d_model))
    perm = rng.permutation(6)
    out = encoder_forward(Tensor(x), spec, params).data
    out_permuted = encoder_forward(Tensor(x[perm]), spec, params).data
    np.testing.assert_allclose(out_permuted, out[perm], atol=1e-10)

    # Positional encoding breaks the symmetry detectably.
    pe = positional_encoding(6, spec.d_model)
    with_pe = encoder_forward(Tensor(x + pe), spec, params).data
    with_pe_perm = encoder_forward(Tensor(x[perm] + pe), spec, params).data
    assert np.abs(with_pe_perm - with_pe[perm]).max() > 1e-6


@pytest.mark.parametrize("n_layers", [1, 2, 3])
def test_decoder_causality(n_layers, rng):
    spec = TransformerSpec(n_layers=n_layers, d_model=8, n_heads=2, d_ff=16, dropout_rate=0.0)
    params = init_transformer_params(spec, make_rng(0, "dec", n_layers))
    memory = Tensor(rng.uniform(-1, 1, (4, 8)))
    tgt = rng.uniform(-1, 1, (5, 8))
    base = decoder_forward(Tensor(tgt), memory, spec, params).data
    for t in range(4):
        bumped = tgt.copy()
        bumped[t + 1] += 2.0
        out = decoder_forward(Tensor(bumped), memory, spec, params).data
        assert np.abs(out[: t + 1] - base[: t + 1]).max() < 1e-12
        assert out.shape == (5, 8)


# --- forecasters ------------------------------------------------------------

def test_transformer_forecast_deterministic(tiny_transformer_spec):
    model = TransformerForecaster(tiny_transformer_spec, make_rng(0, "det"))
    window = make_rng(1).uniform(0, 1, 5)
    a = model.predict(window)
    b = model.predict(window)
    assert a == b  # bit-identical


def test_transformer_zero_head_outputs_zero(tiny_transformer_spec):
    model = TransformerForecaster(tiny_transformer_spec, make_rng(0, "zero"))
    model.params["head.w"].data[:] = 0.0
    model.params["head.b"].data[:] = 0.0
    assert model.predict(make_rng(1).uniform(0, 1, 4)) == 0.0


def test_forecasters_reject_empty_window(tiny_transformer_spec, tiny_recurrent_spec):
    models = [
        TransformerForecaster(tiny_transformer_spec, make_rng(0)),
        LSTMForecaster(tiny_recurrent_spec, make_rng(0)),
        RNNForecaster(tiny_recurrent_spec, make_rng(0)),
    ]
    for model in models:
        with pytest.raises(EmptyInputError):
            model.forward(np.zeros((2, 0)))
        with pytest.raises(EmptyInputError):
            model.forward(np.zeros(3))


def test_transformer_dropout_train_vs_eval():
    spec = TransformerSpec(n_layers=1, d_model=8, n_heads=2, d_ff=16, dropout_rate=0.5)
    model = TransformerForecaster(spec, make_rng(0, "drop"))
    windows = make_rng(1).uniform(0, 1, (3, 4))
    eval_out = model.forward(windows).data
    train_out = model.forward(windows, dropout_rng=make_rng(2)).data
    assert np.abs(eval_out - train_out).max() > 0.0
    # Evaluation stays deterministic.
    np.testing.assert_array_equal(eval_out, model.forward(windows).data)


def _reference_lstm(model, windows):
    """Eager numpy re-implementation used as an independent oracle."""
    def sig(z):
        return 1.0 / (1.0 + np.exp(-z))
    p = {path: t.data for path, t in model.params.items()}
    batch, n = windows.shape
    H = model.spec.hidden_size
    h = np.zeros((batch, H))
    c = np.zeros((batch, H))
    for t in range(n):
        x = windows[:, t:t + 1]
        i = sig(x @ p["lstm.w_xi"] + h @ p["lstm.w_hi"] + p["lstm.b_i"])
        f = sig(x @ p["lstm.w_xf"] + h @ p["lstm.w_hf"] + p["lstm.b_f"])
        g = np.tanh(x @ p["lstm.w_xg"] + h @ p["lstm.w_hg"] + p["lstm.b_g"])
        o = sig(x @ p["lstm.w_xo"] + h @ p["lstm.w_ho"] + p["lstm.b_o"])
        c = f * c + i * g
        h = o * np.tanh(c)
        assert np.all(np.abs(h) < 1.0)  # o in (0,1), tanh in (-1,1)
    return (h @ p["head.w"] + p["head.b"]).reshape(-1), h


def test_lstm_matches_reference(tiny_recurrent_spec, rng):
    model = LSTMForecaster(tiny_recurrent_spec, make_rng(0, "lstm-ref"))
    windows = rng.uniform(-2, 2, (6, 5))
    expected, _ = _reference_lstm(model, windows)
    np.testing.assert_allclose(model.predict_batch(windows), expected, atol=1e-12)


def test_lstm_zero_params_zero_forecast(tiny_recurrent_spec):
    model = LSTMForecaster(tiny_recurrent_spec, make_rng(0))
    model.params.load_values({p: np.zeros_like(t.data) for p, t in model.params.items()})
    assert model.predict(np.zeros(4)) == 0.0


def _reference_rnn(model, windows):
    p = {path: t.data for path, t in model.params.items()}
    batch, n = windows.shape
    h = np.zeros((batch, model.spec.hidden_size))
    for t in range(n):
        h = np.tanh(windows[:, t:t + 1] @ p["rnn.w_x"] + h @ p["rnn.w_h"] + p["rnn.b"])
        assert np.all(np.abs(h) < 1.0)
    return (h @ p["head.w"] + p["head.b"]).reshape(-1)


def test_rnn_matches_reference(tiny_recurrent_spec, rng):
    model = RNNForecaster(tiny_recurrent_spec, make_rng(0, "rnn-ref"))
    windows = rng.uniform(-2, 2, (6, 5))
    np.testing.assert_allclose(model.predict_batch(windows), _reference_rnn(model, windows),
                               atol=1e-12)


def test_rnn_single_step_closed_form(tiny_recurrent_spec):
    model = RNNForecaster(tiny_recurrent_spec, make_rng(0, "rnn-1"))
    p = {path: t.data for path, t in model.params.items()}
    x = 0.37
    h = np.tanh(np.array([[x]]) @ p["rnn.w_x"] + p["rnn.b"])
    expected = float((h @ p["head.w"] + p["head.b"])[0, 0])
    assert model.predict([x]) == pytest.approx(expected, abs=1e-14)


def test_batched_forward_matches_per_sample(tiny_transformer_spec, tiny_recurrent_spec, rng):
    """One batched graph must equal sample-at-a-time evaluation."""
    windows = rng.uniform(0, 1, (5, 4))
    for kind in ("transformer", "lstm", "rnn"):
        model = build_forecaster(kind, make_rng(0, "batch", kind),
                                 transformer_spec=tiny_transformer_spec,
                                 recurrent_spec=tiny_recurrent_spec)
        batched = model.predict_batch(windows)
        singles = np.array([model.predict(w) for w in windows])
        np.testing.assert_allclose(batched, singles, atol=1e-12)


# --- parameter plumbing -----------------------------------------------------

def test_param_counts_match_closed_forms():
    for spec in (TransformerSpec(n_layers=1, d_model=8, n_heads=2, d_ff=16),
                 TransformerSpec(n_layers=3, d_model=12, n_heads=4, d_ff=24),
                 TransformerSpec()):
        model = TransformerForecaster(spec, make_rng(0, "count"))
        assert model.param_count() == transformer_param_count(spec)
    for h in (1, 8, 64):
        spec = RecurrentSpec(hidden_size=h)
        assert LSTMForecaster(spec, make_rng(0)).param_count() == lstm_param_count(h)
        assert RNNForecaster(spec, make_rng(0)).param_count() == rnn_param_count(h)


def test_param_order_deterministic(tiny_transformer_spec):
    a = init_transformer_params(tiny_transformer_spec, make_rng(0, "order"))
    b = init_transformer_params(tiny_transformer_spec, make_rng(0, "order"))
    assert a.paths() == b.paths()
    for path in a.paths():
        np.testing.assert_array_equal(a[path].data, b[path].data)


def test_params_frozen_after_build(tiny_recurrent_spec):
    model = RNNForecaster(tiny_recurrent_spec, make_rng(0))
    with pytest.raises(ValueError):
        model.params.add("extra", Tensor(np.zeros(1)))


def test_params_duplicate_path_rejected():
    params = ModelParams()
    params.add("w", Tensor(np.zeros(2)))
    with pytest.raises(ValueError):
        params.add("w", Tensor(np.zeros(2)))


def test_checkpoint_roundtrip_bit_exact(tmp_path, tiny_transformer_spec):
    model = TransformerForecaster(tiny_transformer_spec, make_rng(0, "ckpt"))
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.params, {"kind": "transformer", "note": "round trip"})
    arrays, meta = load_checkpoint(path)
    assert meta == {"kind": "transformer", "note": "round trip"}
    assert set(arrays) == set(model.params.paths())
    for ppath, tensor in model.params.items():
        assert arrays[ppath].shape == tensor.data.shape
        assert np.array_equal(arrays[ppath], tensor.data)  # no tolerance


def test_checkpoint_bad_header(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path, tiny_recurrent_spec):
    model = RNNForecaster(tiny_recurrent_spec, make_rng(0))
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.params, {})
    clipped = path.read_text().splitlines()[:-1]
    path.write_text("\n".join(clipped))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_build_forecaster_rejects_unknown_kind():
    with pytest.raises(ValueError):
        build_forecaster("gru", make_rng(0))


def test_spec_validation():
    with pytest.raises(ValueError):
        TransformerSpec(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        TransformerSpec(dropout_rate=1.0)
    with pytest.raises(ValueError):
        TransformerSpec(n_layers=-1)
    with pytest.raises(ValueError):
        RecurrentSpec(hidden_size=0)
