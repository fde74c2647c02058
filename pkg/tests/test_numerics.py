import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tripleqa.numerics as nx
from tripleqa.numerics import Parameter, Tensor
from tripleqa.gradsuite import CASES, TOLERANCE, run_gradient_suite
from tripleqa.numerics.functional import ShapeError


def naive_conv2d(x, w, b, stride, padding):
    """Six nested loops over output channel, position, input channel and kernel."""
    C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.zeros((C, H + 2 * padding, W + 2 * padding))
    xp[:, padding : padding + H, padding : padding + W] = x
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                acc = b[o]
                for c in range(C):
                    for di in range(k):
                        for dj in range(k):
                            acc += w[o, c, di, dj] * xp[c, i * stride + di, j * stride + dj]
                out[o, i, j] = acc
    return out


# -- tensor engine ---------------------------------------------------------------
def test_backward_through_broadcast_and_reuse():
    a = Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Parameter(np.array([10.0, 20.0]))
    y = (a * b + a).sum()
    y.backward()
    np.testing.assert_allclose(a.grad, [[11.0, 21.0], [11.0, 21.0]])
    np.testing.assert_allclose(b.grad, [4.0, 6.0])


def test_default_dtype_is_float32_and_switchable():
    assert Tensor([1, 2]).dtype == np.float32
    with nx.default_dtype(np.float64):
        assert Tensor([1, 2]).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


def test_no_grad_builds_no_graph():
    p = Parameter(np.ones(3))
    with nx.no_grad():
        y = (p * 2).sum()
    assert not y.requires_grad


def test_python_scalars_keep_tensor_dtype():
    p = Parameter(np.ones(3, dtype=np.float32))
    assert (p * 0.5 + 1.0).dtype == np.float32


# -- conv2d ----------------------------------------------------------------------
def test_conv2d_first_walnet_layer_shape():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 128, 128)).astype(np.float32)
    w = rng.standard_normal((16, 1, 3, 3)).astype(np.float32)
    assert nx.conv2d(x, w, np.zeros(16, np.float32), stride=1, padding=1).shape == (16, 128, 128)


def test_conv2d_identity_kernel():
    x = np.random.default_rng(1).standard_normal((3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(nx.conv2d(x, w, np.zeros(3)).data, x)


def test_conv2d_matches_loop_oracle_3x8x8():
    rng = np.random.default_rng(2)
    x, w, b = rng.standard_normal((3, 8, 8)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    got = nx.conv2d(x.astype(np.float32), w.astype(np.float32), b.astype(np.float32), 1, 1).data
    assert np.abs(got - naive_conv2d(x, w, b, 1, 1)).max() < 1e-5


@settings(max_examples=40, deadline=None)
@given(
    C=st.integers(1, 8), H=st.integers(1, 8), W=st.integers(1, 8), O=st.integers(1, 4),
    k=st.integers(1, 8), stride=st.integers(1, 3), padding=st.integers(0, 2), seed=st.integers(0, 2**31),
)
def test_conv2d_oracle_property(C, H, W, O, k, stride, padding, seed):
    if k > H + 2 * padding or k > W + 2 * padding:
        return
    rng = np.random.default_rng(seed)
    x, w, b = rng.standard_normal((C, H, W)), rng.standard_normal((O, C, k, k)), rng.standard_normal(O)
    got = nx.conv2d(x.astype(np.float32), w.astype(np.float32), b.astype(np.float32), stride, padding).data
    assert np.abs(got - naive_conv2d(x, w, b, stride, padding)).max() < 1e-4 * max(1, C * k * k / 16)


def test_conv2d_channel_mismatch_rejected():
    with pytest.raises(ShapeError, match="channels"):
        nx.conv2d(np.zeros((2, 4, 4)), np.zeros((3, 3, 3, 3)))


def test_conv2d_kernel_too_large_rejected():
    with pytest.raises(ShapeError):
        nx.conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)))


# -- maxpool -----------------------------------------------------------------------
def test_maxpool_shapes_and_values():
    assert nx.maxpool2d(np.zeros((16, 128, 128)), 2).shape == (16, 64, 64)
    np.testing.assert_array_equal(nx.maxpool2d(np.array([[[1.0, 2.0], [3.0, 4.0]]])).data, [[[4.0]]])
    np.testing.assert_array_equal(nx.maxpool2d(np.full((2, 4, 6), 7.0)).data, np.full((2, 2, 3), 7.0))


def test_maxpool_tie_goes_to_first_in_row_major_order():
    x = Parameter(np.full((1, 2, 2), 5.0))
    nx.maxpool2d(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])


def test_maxpool_too_small():
    with pytest.raises(ShapeError):
        nx.maxpool2d(np.zeros((1, 1, 4)))


# -- batch norm --------------------------------------------------------------------
def test_batchnorm_training_statistics():
    rng = np.random.default_rng(3)
    x = rng.normal(4.0, 3.0, size=(8, 3, 5, 5))
    rm, rv = np.zeros(3), np.ones(3)
    out = nx.batchnorm2d(x, np.ones(3), np.zeros(3), rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)
    # running stats moved towards the batch statistics by momentum 0.1
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))

    out = nx.batchnorm2d(x, 2 * np.ones(3), 3 * np.ones(3), rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 3, atol=1e-4)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 2, atol=1e-3)


def test_batchnorm_eval_uses_running_stats():
    x = np.random.default_rng(4).standard_normal((2, 2, 3, 3))
    out = nx.batchnorm2d(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), training=False).data
    np.testing.assert_allclose(out, x / math.sqrt(1 + 1e-5), rtol=1e-12)


def test_batchnorm_needs_two_values():
    with pytest.raises(ValueError, match="variance"):
        nx.batchnorm2d(np.zeros((1, 2, 1, 1)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), training=True)


# -- softmax and losses ------------------------------------------------------------
@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12))
def test_softmax_sums_to_one(vals):
    p = nx.softmax(np.array(vals, dtype=np.float32)).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-6


def test_masked_softmax_zeroes_masked_positions():
    mask = np.array([[True, False, True]])
    p = nx.softmax(np.array([[1.0, 50.0, 2.0]]), axis=1, mask=mask).data
    assert p[0, 1] == 0.0
    assert abs(p.sum() - 1) < 1e-12


def test_cross_entropy_uniform_and_stable():
    loss, probs = nx.softmax_cross_entropy(np.zeros((1, 5)), np.array([2]))
    assert abs(float(loss.data) - math.log(5)) < 1e-6
    np.testing.assert_allclose(probs, 0.2, atol=1e-7)
    loss, _ = nx.softmax_cross_entropy(np.array([[1000.0, 0, 0, 0, 0]]), np.array([0]))
    assert np.isfinite(loss.data) and float(loss.data) < 1e-6


def test_cross_entropy_target_range():
    with pytest.raises(IndexError):
        nx.softmax_cross_entropy(np.zeros((1, 5)), np.array([5]))


# -- dropout -----------------------------------------------------------------------
def test_dropout_identity_cases():
    x = np.arange(6.0)
    np.testing.assert_array_equal(nx.dropout(x, 0.0, True, np.random.default_rng(0)).data, x)
    np.testing.assert_array_equal(nx.dropout(x, 0.7, False).data, x)


def test_dropout_mean_preserved():
    out = nx.dropout(np.ones(100_000), 0.5, True, np.random.default_rng(5)).data
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_dropout_rejects_bad_p():
    for p in (-0.1, 1.0):
        with pytest.raises(ValueError):
            nx.dropout(np.ones(3), p, True, np.random.default_rng(0))


def test_dropout_reproducible_from_seed():
    a = nx.dropout(np.ones(50), 0.5, True, np.random.default_rng(9)).data
    b = nx.dropout(np.ones(50), 0.5, True, np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)


# -- LSTM ----------------------------------------------------------------------------
def _naive_lstm(x, w_ih, w_hh, b):
    H = w_hh.shape[0]
    h, c = np.zeros(H), np.zeros(H)
    outs = []
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    for t in range(len(x)):
        z = x[t] @ w_ih + h @ w_hh + b
        i, f, g, o = sig(z[:H]), sig(z[H : 2 * H]), np.tanh(z[2 * H : 3 * H]), sig(z[3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        outs.append(h)
    return np.array(outs)


def test_lstm_matches_step_loop():
    rng = np.random.default_rng(6)
    lstm = nx.LSTM(3, 4, rng, bidirectional=True)
    for p in lstm.parameters():
        p.data = rng.standard_normal(p.shape)
    x = rng.standard_normal((1, 5, 3))
    out, final = lstm(x)
    f, b = lstm.fwd, lstm.bwd
    fwd = _naive_lstm(x[0], f.w_ih.data, f.w_hh.data, f.b.data)
    bwd = _naive_lstm(x[0, ::-1], b.w_ih.data, b.w_hh.data, b.b.data)[::-1]
    np.testing.assert_allclose(out.data[0], np.concatenate([fwd, bwd], axis=1), rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(final.data[0], np.concatenate([fwd[-1], bwd[0]]), rtol=1e-5, atol=1e-6)


def test_lstm_masked_sequence_ignores_padding():
    rng = np.random.default_rng(7)
    lstm = nx.LSTM(2, 3, rng, bidirectional=True)
    x = rng.standard_normal((1, 4, 2))
    padded = np.concatenate([x, rng.standard_normal((1, 2, 2))], axis=1)
    mask = np.array([[1, 1, 1, 1, 0, 0]], dtype=bool)
    out_a, fin_a = lstm(x)
    out_b, fin_b = lstm(padded, mask=mask)
    np.testing.assert_allclose(out_b.data[:, :4], out_a.data, atol=1e-6)
    np.testing.assert_allclose(fin_b.data, fin_a.data, atol=1e-6)


def test_lstm_zero_everything_gives_zero():
    lstm = nx.LSTM(3, 4, np.random.default_rng(0))
    for p in lstm.parameters():
        p.data[...] = 0
    out, _ = lstm(np.zeros((2, 3, 3)))
    assert not out.data.any()


def test_lstm_length_one_bidirectional_forward_half():
    rng = np.random.default_rng(8)
    bi = nx.LSTM(3, 4, rng, bidirectional=True)
    uni = nx.LSTM(3, 4, rng)
    for src, dst in zip(bi.fwd.parameters(), uni.parameters()):
        dst.data = src.data.copy()
    x = rng.standard_normal((1, 1, 3))
    out, _ = bi(x)
    assert out.shape == (1, 1, 8)
    np.testing.assert_array_equal(out.data[..., :4], uni(x)[0].data)


def test_lstm_empty_sequence():
    with pytest.raises(ValueError):
        nx.LSTM(3, 4, np.random.default_rng(0))(np.zeros((1, 0, 3)))


# -- embedding -------------------------------------------------------------------------
def test_embedding_rows_and_range():
    emb = nx.Embedding(10, 4, np.random.default_rng(0))
    out = emb(np.array([5, 5]))
    np.testing.assert_array_equal(out.data[0], out.data[1])
    assert np.abs(emb.table.data).max() <= 0.08
    with pytest.raises(IndexError):
        emb(np.array([10]))


# -- initialisation ----------------------------------------------------------------------
def test_glorot_bounds_and_zero_bias():
    layer = nx.Linear(30, 20, np.random.default_rng(0))
    assert np.abs(layer.weight.data).max() <= math.sqrt(6 / 50)
    assert not layer.bias.data.any()


# -- Adam -------------------------------------------------------------------------------
def test_adam_zero_gradient_keeps_parameter():
    p = Parameter(np.array([1.0, -2.0]), name="w")
    p.grad = np.zeros(2)
    state = nx.AdamState()
    nx.adam_step([p], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_moves_by_lr_against_sign():
    p = Parameter(np.array([0.0, 0.0, 0.0]), name="w")
    p.grad = np.array([3.0, -0.5, 1e-3])
    nx.adam_step([p], nx.AdamState(lr=0.01))
    np.testing.assert_allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_constant_gradient_update_tends_to_lr():
    p = Parameter(np.array([0.0]), name="w")
    state = nx.AdamState(lr=1e-3)
    prev = 0.0
    for _ in range(2000):
        p.grad = np.array([0.3])
        nx.adam_step([p], state)
        step, prev = prev - float(p.data[0]), float(p.data[0])
    assert abs(step - 1e-3) < 1e-7


def test_adam_matches_closed_form_two_steps():
    g1, g2, lr, b1, b2, eps = 0.4, -1.2, 0.05, 0.9, 0.999, 1e-8
    with nx.default_dtype(np.float64):
        p = Parameter([1.0], name="w")
    state = nx.AdamState(lr=lr)
    for g in (g1, g2):
        p.grad = np.array([g])
        nx.adam_step([p], state)
    m = (1 - b1) * (b1 * g1 + g2)
    v = (1 - b2) * (b2 * g1**2 + g2**2)
    first = 1.0 - lr * g1 / (abs(g1) + eps)
    expected = first - lr * (m / (1 - b1**2)) / (math.sqrt(v / (1 - b2**2)) + eps)
    assert abs(float(p.data[0]) - expected) < 1e-12


def test_adam_nan_gradient_names_parameter():
    good, bad = Parameter(np.ones(2), name="enc.w"), Parameter(np.ones(2), name="dec.b")
    good.grad, bad.grad = np.ones(2), np.array([1.0, np.nan])
    with pytest.raises(nx.NonFiniteGradientError, match="dec.b"):
        nx.adam_step([good, bad], nx.AdamState())
    np.testing.assert_array_equal(good.data, [1.0, 1.0])


def test_adam_requires_unique_names():
    with pytest.raises(ValueError):
        nx.Adam([Parameter(np.ones(1), name="a"), Parameter(np.ones(1), name="a")])


# -- modules ----------------------------------------------------------------------------
def test_module_names_and_state_dict_round_trip():
    class Net(nx.Module):
        def __init__(self):
            rng = np.random.default_rng(0)
            self.first = nx.Linear(3, 4, rng)
            self.blocks = [nx.Linear(4, 4, rng), nx.Linear(4, 2, rng)]
            self.assign_names()

    net = Net()
    names = [n for n, _ in net.named_parameters()]
    assert names == sorted(set(names), key=names.index)
    assert "blocks.1.weight" in names
    state = net.state_dict()
    other = Net()
    for p in other.parameters():
        p.data = p.data + 1
    other.load_state_dict(state)
    for (_, a), (_, b) in zip(net.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    with pytest.raises(KeyError):
        other.load_state_dict({k: v for k, v in state.items() if k != "first.bias"})


# -- gradient checking ------------------------------------------------------------------
def test_gradient_check_linear_is_exact():
    with nx.default_dtype(np.float64):
        w = Parameter(np.random.default_rng(0).standard_normal(4))
        x = np.random.default_rng(1).standard_normal(4)
        assert nx.gradient_check(lambda: (w * x).sum(), [w]) < 1e-8


def test_gradient_check_flags_doubled_gradient():
    from tripleqa.numerics.tensor import make_result

    def doubled_square(t):
        return make_result(t.data**2, [t], lambda g: t.accumulate(2 * (2 * t.data * g)))

    with nx.default_dtype(np.float64):
        w = Parameter(np.random.default_rng(2).uniform(0.5, 1.5, 6))
        err = nx.gradient_check(lambda: doubled_square(w).sum(), [w])
    # |2g - g| / max(|2g|, |g|)
    assert abs(err - 0.5) < 1e-6


def test_gradient_check_needs_scalar():
    with nx.default_dtype(np.float64):
        w = Parameter(np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            nx.gradient_check(lambda: w * 2.0, [w])


def test_gradient_check_restores_parameters():
    with nx.default_dtype(np.float64):
        w = Parameter(np.arange(3.0))
        nx.gradient_check(lambda: (w * w).sum(), [w], analytic_dtype=np.float32)
    np.testing.assert_array_equal(w.data, [0.0, 1.0, 2.0])
    assert w.dtype == np.float64


@pytest.mark.parametrize("dtype", [np.float64, np.float32], ids=["64bit", "32bit"])
@pytest.mark.parametrize("case", sorted(CASES))
def test_gradient_suite(case, dtype):
    err = run_gradient_suite(seed=0, dtype=dtype, cases=[case])[case]
    assert err < TOLERANCE[dtype], f"{case}: {err:.3e}"
