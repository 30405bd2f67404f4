import numpy as np
import pytest

from app.autograd import ops
from app.autograd.tensor import Tensor
from app.utils.exceptions import DimensionError, LabelError
from tests import oracles


def _random_shape(rng):
    return tuple(int(rng.integers(1, hi + 1)) for hi in (2, 8, 4, 6, 6))


def test_convolutions_match_loop_oracles_on_random_shapes(rng):
    for _ in range(50):
        shape = _random_shape(rng)
        C = shape[1]
        x = rng.normal(size=shape)
        w, b = rng.normal(size=(3, C)), rng.normal(size=3)
        ks, kt = rng.normal(size=(C, 3, 3)), rng.normal(size=(C, 3))
        got = ops.conv_pointwise(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, oracles.conv_pointwise(x, w, b), atol=1e-6)
        got = ops.conv_channelwise_spatial(Tensor(x), Tensor(ks)).data
        np.testing.assert_allclose(got, oracles.conv_channelwise_spatial(x, ks), atol=1e-6)
        got = ops.conv_channelwise_temporal(Tensor(x), Tensor(kt)).data
        np.testing.assert_allclose(got, oracles.conv_channelwise_temporal(x, kt), atol=1e-6)


def test_shifted_subtract_zeroes_first_frame(rng):
    cur, pre = rng.normal(size=(1, 2, 4, 3, 3)), rng.normal(size=(1, 2, 4, 3, 3))
    out = ops.shifted_subtract(Tensor(cur), Tensor(pre)).data
    assert not out[:, :, 0].any()
    np.testing.assert_array_equal(out[:, :, 2], cur[:, :, 2] - pre[:, :, 1])


def test_shifted_subtract_rejects_mismatched_shapes():
    with pytest.raises(DimensionError):
        ops.shifted_subtract(Tensor(np.zeros((1, 2, 3, 2, 2))), Tensor(np.zeros((1, 2, 4, 2, 2))))


def test_mean_pool_drops_odd_trailing_row():
    x = np.arange(1 * 1 * 1 * 3 * 4, dtype=np.float64).reshape(1, 1, 1, 3, 4)
    out = ops.mean_pool2x2(Tensor(x)).data
    assert out.shape == (1, 1, 1, 1, 2)
    np.testing.assert_allclose(out[0, 0, 0, 0], [(0 + 1 + 4 + 5) / 4, (2 + 3 + 6 + 7) / 4])


def test_mean_pool_needs_two_pixels():
    with pytest.raises(DimensionError):
        ops.mean_pool2x2(Tensor(np.zeros((1, 1, 1, 1, 4))))


def test_global_avg_pool():
    x = np.arange(2 * 3 * 2 * 2 * 2, dtype=np.float64).reshape(2, 3, 2, 2, 2)
    np.testing.assert_allclose(ops.global_avg_pool(Tensor(x)).data, x.mean(axis=(2, 3, 4)))


def test_softmax_cross_entropy_value():
    logits = np.array([[0.0, 0.0], [2.0, 0.0]])
    loss = ops.softmax_cross_entropy(Tensor(logits), [0, 1]).item()
    expected = (np.log(2) + (np.log(np.exp(2) + 1) - 0.0)) / 2
    assert loss == pytest.approx(expected)


def test_softmax_cross_entropy_is_stable_for_large_logits():
    loss = ops.softmax_cross_entropy(Tensor(np.array([[1000.0, 0.0]])), [0]).item()
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("labels", [[0, 2], [0.5, 1], [0]])
def test_softmax_cross_entropy_rejects_bad_labels(labels):
    with pytest.raises(LabelError):
        ops.softmax_cross_entropy(Tensor(np.zeros((2, 2))), labels)


def test_l1_mean_averages_selected_norms():
    x = np.zeros((4, 1, 1, 1, 2))
    x[0, 0, 0, 0] = [1.0, -2.0]
    x[1, 0, 0, 0] = [-5.0, 0.0]
    x[2:] = 100.0
    out = ops.l1_mean(Tensor(x), select=np.array([True, True, False, False]))
    assert out.item() == 4.0


def test_l1_mean_empty_selection_is_zero():
    out = ops.l1_mean(Tensor(np.ones((2, 1, 1, 1, 1))), select=np.array([False, False]))
    assert out.item() == 0.0


def test_linear_shapes_checked():
    with pytest.raises(DimensionError):
        ops.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))


def test_rank_checked():
    with pytest.raises(DimensionError):
        ops.conv_channelwise_temporal(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 3))))


def _conv_ops(rng, C):
    w, b = rng.normal(size=(3, C)), np.zeros(3)
    ks, kt = rng.normal(size=(C, 3, 3)), rng.normal(size=(C, 3))
    return {
        "pointwise": lambda x: ops.conv_pointwise(Tensor(x), Tensor(w), Tensor(b)).data,
        "spatial": lambda x: ops.conv_channelwise_spatial(Tensor(x), Tensor(ks)).data,
        "temporal": lambda x: ops.conv_channelwise_temporal(Tensor(x), Tensor(kt)).data,
    }


@pytest.mark.parametrize("name", ["pointwise", "spatial", "temporal"])
def test_convolutions_are_linear_in_the_input(rng, name):
    x, y = rng.normal(size=(2, 3, 4, 5, 5)), rng.normal(size=(2, 3, 4, 5, 5))
    alpha, beta = 1.7, -0.3
    op = _conv_ops(rng, 3)[name]
    np.testing.assert_allclose(op(alpha * x + beta * y), alpha * op(x) + beta * op(y), atol=1e-5)


@pytest.mark.parametrize("name", ["pointwise", "spatial", "temporal"])
def test_convolutions_are_bit_identical_across_calls(rng, name):
    x = rng.normal(size=(2, 3, 4, 5, 5)).astype(np.float32)
    op = _conv_ops(rng, 3)[name]
    first, second = op(x), op(x.copy())
    assert first.tobytes() == second.tobytes()
