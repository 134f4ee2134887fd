"""Kernel tests: op semantics, graph mechanics, and finite-difference oracles."""

import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loadcast import autodiff as ad
from loadcast.autodiff import Graph, Tensor
from loadcast.errors import DegenerateAttentionError, ShapeError
from loadcast.gradcheck import check_gradients


# --- values -----------------------------------------------------------------

def test_matmul_identity():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(Tensor(np.eye(2)), m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_hand_case():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_zero_annihilates(rng):
    out = ad.matmul(Tensor(np.zeros((3, 4))), Tensor(rng.normal(size=(4, 2))))
    assert out.shape == (3, 2)
    np.testing.assert_array_equal(out.data, np.zeros((3, 2)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associativity(seed):
    r = np.random.default_rng(seed)
    a, b, c = (r.uniform(-2, 2, (4, 4)) for _ in range(3))
    left = ad.matmul(ad.matmul(Tensor(a), Tensor(b)), Tensor(c)).data
    right = ad.matmul(Tensor(a), ad.matmul(Tensor(b), Tensor(c))).data
    np.testing.assert_allclose(left, right, rtol=0, atol=1e-9)


def test_softmax_symmetry():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_large_inputs_no_overflow():
    out = ad.softmax(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])


def test_softmax_closed_form():
    out = ad.softmax(Tensor([0.0, np.log(3.0)])).data
    np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-15)


def test_softmax_invalid_axis():
    with pytest.raises(ShapeError):
        ad.softmax(Tensor([[1.0, 2.0]]), axis=2)


def test_softmax_rows_sum_to_one(rng):
    x = rng.uniform(-50, 50, (20, 9))
    out = ad.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-500, 500))
def test_softmax_shift_invariance(seed, shift):
    x = np.random.default_rng(seed).uniform(-5, 5, (4, 6))
    a = ad.softmax(Tensor(x)).data
    b = ad.softmax(Tensor(x + shift)).data
    assert np.abs(a - b).max() < 1e-12


def test_layer_norm_constant_slice():
    out = ad.layer_norm(Tensor([5.0, 5.0, 5.0, 5.0]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_allclose(out.data, np.zeros(4), atol=1e-6)


def test_layer_norm_two_point_slice():
    # mean 2, population stdev 1; eps pulls the result just inside (-1, 1)
    out = ad.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-6)


def test_layer_norm_zero_gamma():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    out = ad.layer_norm(x, Tensor(np.zeros(3)), Tensor(np.full(3, 7.0)))
    np.testing.assert_array_equal(out.data, np.full((2, 3), 7.0))


def test_layer_norm_standardizes(rng):
    x = rng.uniform(-3, 3, (10, 16)) * 5.0
    out = ad.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)


def test_layer_norm_shape_error():
    with pytest.raises(ShapeError):
        ad.layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(4)))


def test_masked_softmax_masked_entries_exactly_zero(rng):
    x = rng.uniform(-4, 4, (5, 5))
    mask = np.tril(np.ones((5, 5), dtype=bool))
    out = ad.masked_softmax(Tensor(x), mask).data
    assert np.all(out[~mask] == 0.0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


def test_masked_softmax_fully_masked_row_rejected():
    mask = np.array([[True, True], [False, False]])
    with pytest.raises(DegenerateAttentionError):
        ad.masked_softmax(Tensor(np.zeros((2, 2))), mask)


def test_sigmoid_extremes_finite():
    out = ad.sigmoid(Tensor([-1000.0, 0.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-12)


def test_elementwise_shape_mismatch():
    for op in (ad.add, ad.sub, ad.mul):
        with pytest.raises(ShapeError):
            op(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_reshape_bad_size():
    with pytest.raises(ShapeError):
        ad.reshape(Tensor(np.zeros(5)), (2, 3))


def test_slice_concat_roundtrip(rng):
    x = Tensor(rng.normal(size=(3, 8)))
    parts = [ad.slice_last(x, i * 2, i * 2 + 2) for i in range(4)]
    np.testing.assert_array_equal(ad.concat_last(parts).data, x.data)


# --- graph mechanics --------------------------------------------------------

def test_backward_sum_is_ones():
    w = Tensor(np.arange(6.0).reshape(2, 3))
    with Graph() as g:
        loss = ad.sum_all(w)
    g.backward(loss)
    np.testing.assert_array_equal(w.grad, np.ones((2, 3)))


def test_backward_quadratic():
    w = Tensor([1.0, -2.0])
    with Graph() as g:
        loss = ad.sum_all(ad.mul(w, w))
    g.backward(loss)
    np.testing.assert_allclose(w.grad, [2.0, -4.0])


def test_backward_rejects_non_scalar():
    w = Tensor([1.0, 2.0])
    with Graph() as g:
        out = ad.mul(w, w)
    with pytest.raises(ShapeError):
        g.backward(out)


def test_backward_rejects_foreign_loss():
    w = Tensor([1.0])
    with Graph():
        loss = ad.sum_all(w)
    with pytest.raises(ValueError):
        Graph().backward(loss)


def test_unreachable_tensor_gets_zero_grad():
    w = Tensor([1.0, 2.0])
    orphan = Tensor([3.0, 4.0])
    with Graph() as g:
        loss = ad.sum_all(w)
        _ = ad.mul(orphan, orphan)  # recorded but not feeding the loss
    g.backward(loss)
    np.testing.assert_array_equal(orphan.grad, np.zeros(2))


def test_backward_is_idempotent(rng):
    """Repeated backward without re-recording must give identical grads."""
    w = Tensor(rng.normal(size=(4, 3)))
    b = Tensor(rng.normal(size=3))
    with Graph() as g:
        loss = ad.mean_all(ad.tanh(ad.add_bias(ad.mul(w, w), b)))
    g.backward(loss)
    first_w, first_b = w.grad.copy(), b.grad.copy()
    g.backward(loss)
    np.testing.assert_array_equal(w.grad, first_w)
    np.testing.assert_array_equal(b.grad, first_b)


def test_reused_input_accumulates():
    w = Tensor([3.0])
    with Graph() as g:
        loss = ad.sum_all(ad.mul(w, w))  # w appears twice as an input
    g.backward(loss)
    np.testing.assert_allclose(w.grad, [6.0])


def test_eager_mode_records_nothing():
    w = Tensor([1.0, 2.0])
    out = ad.mul(w, w)
    assert out.graph is None and out.node_id is None
    np.testing.assert_array_equal(out.data, [1.0, 4.0])


def test_graphs_are_thread_independent(rng):
    """Separate threads each drive their own graph without interference."""
    xs = [rng.normal(size=(5, 4)) for _ in range(4)]
    expected = []
    for x in xs:
        w = Tensor(x)
        with Graph() as g:
            loss = ad.mean_all(ad.mul(w, w))
        g.backward(loss)
        expected.append(w.grad.copy())

    got = [None] * len(xs)

    def work(i):
        w = Tensor(xs[i])
        with Graph() as g:
            loss = ad.mean_all(ad.mul(w, w))
        g.backward(loss)
        got[i] = w.grad.copy()

    threads = [threading.Thread(target=work, args=(i,)) for i in range(len(xs))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for e, g_ in zip(expected, got):
        np.testing.assert_array_equal(e, g_)


# --- finite-difference oracles over every differentiable op -----------------

def _fd_case(name, make_loss, arrays):
    tensors = [Tensor(a) for a in arrays]
    report = check_gradients(lambda: make_loss(*tensors),
                             [(f"{name}.{i}", t) for i, t in enumerate(tensors)])
    assert report.max_rel_err < 1e-4, (
        f"{name}: rel err {report.max_rel_err:.2e} at {report.worst_path}{report.worst_index}"
    )


def _away_from_zero(a, margin=0.2):
    return np.where(np.abs(a) < margin, margin * np.sign(a) + (a == 0) * margin, a)


def test_fd_all_ops(rng):
    u = lambda *s: rng.uniform(-2.0, 2.0, s)
    mask = np.tril(np.ones((3, 3), dtype=bool))
    const = u(3, 2)

    cases = [
        ("matmul22", lambda a, b: ad.mean_all(ad.matmul(a, b)), [u(3, 4), u(4, 2)]),
        ("matmul32", lambda a, b: ad.mean_all(ad.matmul(a, b)), [u(2, 3, 4), u(4, 2)]),
        ("matmul33", lambda a, b: ad.mean_all(ad.matmul(a, b)), [u(2, 3, 4), u(2, 4, 2)]),
        ("add", lambda a, b: ad.mean_all(ad.mul(ad.add(a, b), ad.add(a, b))), [u(3, 3), u(3, 3)]),
        ("sub", lambda a, b: ad.mean_all(ad.mul(ad.sub(a, b), ad.sub(a, b))), [u(3, 3), u(3, 3)]),
        ("mul", lambda a, b: ad.mean_all(ad.mul(a, b)), [u(4,), u(4,)]),
        ("neg", lambda a: ad.mean_all(ad.mul(ad.neg(a), ad.neg(a))), [u(5,)]),
        ("add_bias", lambda x, b: ad.mean_all(ad.tanh(ad.add_bias(x, b))), [u(2, 3, 4), u(4,)]),
        ("add_const", lambda x: ad.mean_all(ad.mul(ad.add_const(x, 1.5), ad.add_const(x, 1.5))),
         [u(3, 2)]),
        ("mul_const", lambda x: ad.mean_all(ad.mul_const(x, const)), [u(3, 2)]),
        ("relu", lambda x: ad.mean_all(ad.relu(x)), [_away_from_zero(u(4, 4))]),
        ("tanh", lambda x: ad.mean_all(ad.tanh(x)), [u(3, 5)]),
        ("sigmoid", lambda x: ad.mean_all(ad.sigmoid(x)), [u(3, 5)]),
        ("softmax", lambda x: ad.mean_all(ad.mul(ad.softmax(x, axis=-1), x)), [u(3, 4)]),
        ("softmax_axis0", lambda x: ad.mean_all(ad.mul(ad.softmax(x, axis=0), x)), [u(3, 4)]),
        ("masked_softmax",
         lambda x: ad.mean_all(ad.mul(ad.masked_softmax(x, mask), x)), [u(3, 3)]),
        ("layer_norm", lambda x, g_, b: ad.mean_all(ad.mul(ad.layer_norm(x, g_, b), x)),
         [u(2, 3, 6), u(6,), u(6,)]),
        ("reshape", lambda x: ad.mean_all(ad.mul(ad.reshape(x, (6, 2)), ad.reshape(x, (6, 2)))),
         [u(3, 4)]),
        ("transpose_last", lambda x: ad.mean_all(ad.matmul(ad.transpose_last(x), x)), [u(3, 4)]),
        ("slice_last", lambda x: ad.mean_all(ad.mul(ad.slice_last(x, 1, 3),
                                                    ad.slice_last(x, 1, 3))), [u(2, 5)]),
        ("concat_last", lambda a, b: ad.mean_all(ad.tanh(ad.concat_last([a, b]))),
         [u(2, 3), u(2, 2)]),
        ("sum_all", lambda x: ad.mul(ad.sum_all(x), ad.sum_all(x)), [u(3, 3)]),
        ("mean_all", lambda x: ad.mul(ad.mean_all(x), ad.mean_all(x)), [u(3, 3)]),
    ]
    for name, make_loss, arrays in cases:
        _fd_case(name, make_loss, arrays)


def test_outputs_finite_on_finite_inputs(rng):
    x = rng.uniform(-2, 2, (4, 6))
    outs = [
        ad.softmax(Tensor(x)).data,
        ad.sigmoid(Tensor(100 * x)).data,
        ad.tanh(Tensor(100 * x)).data,
        ad.layer_norm(Tensor(x), Tensor(np.ones(6)), Tensor(np.zeros(6))).data,
    ]
    for out in outs:
        assert np.all(np.isfinite(out))
