"""Forward-value checks for the autodiff primitives against naive oracles."""

import numpy as np
import pytest

from sigver.ndgrad import (
    Tensor,
    concat,
    conv2d,
    maxpool2d,
    batchnorm2d,
    gap,
    linear,
    elementwise_mul,
    l2_normalize,
    sq_euclidean,
    log1p_sum_exp,
    DegenerateVectorError,
    no_grad,
)

from helpers import conv2d_oracle

# ---------------------------------------------------------------------------
# oracles: straightforward loop implementations, no shared code with ndgrad
# ---------------------------------------------------------------------------


def maxpool_oracle(x, k):
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    out = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    out[ni, ci, oi, oj] = x[ni, ci, oi * k:(oi + 1) * k, oj * k:(oj + 1) * k].max()
    return out


def batchnorm_oracle(x, gamma, beta, mean, var, eps):
    xhat = (x - mean[None, :, None, None]) / np.sqrt(var[None, :, None, None] + eps)
    return gamma[None, :, None, None] * xhat + beta[None, :, None, None]


def linear_oracle(x, w, b):
    out = np.zeros((x.shape[0], w.shape[0]))
    for i in range(x.shape[0]):
        for j in range(w.shape[0]):
            out[i, j] = (x[i] * w[j]).sum() + b[j]
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("stride,padding", [((1, 1), (0, 0)), ((1, 1), (1, 1)),
                                            ((2, 2), (1, 1)), ((2, 1), (0, 2)),
                                            ((1, 2), (2, 1))])
def test_conv2d_matches_loop_oracle(stride, padding):
    rng = np.random.default_rng(7)
    for _ in range(3):
        x = rng.standard_normal((2, 3, 7, 9))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        want = conv2d_oracle(x, w, b, stride, padding)
        assert got.shape == want.shape
        np.testing.assert_allclose(got.data, want, rtol=1e-12, atol=1e-12)


def test_conv2d_without_bias_and_3d_input():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((3, 8, 10))
    w = rng.standard_normal((5, 3, 3, 3))
    got = conv2d(Tensor(x), Tensor(w), stride=1, padding=1)
    want = conv2d_oracle(x[None], w, None, (1, 1), (1, 1))[0]
    assert got.shape == (5, 8, 10)
    np.testing.assert_allclose(got.data, want, rtol=1e-12, atol=1e-12)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 3, 5, 5)))
    w = Tensor(np.zeros((4, 2, 3, 3)))
    with pytest.raises(ValueError, match="channels"):
        conv2d(x, w)
    with pytest.raises(ValueError, match="does not fit"):
        conv2d(Tensor(np.zeros((1, 2, 2, 2))), w)
    with pytest.raises(ValueError, match="stride"):
        conv2d(Tensor(np.zeros((1, 2, 5, 5))), w, stride=0)
    with pytest.raises(ValueError, match="bias"):
        conv2d(Tensor(np.zeros((1, 2, 5, 5))), w, Tensor(np.zeros(3)), padding=1)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def test_maxpool_matches_oracle_including_ragged_edges():
    rng = np.random.default_rng(9)
    for h, w in [(8, 8), (7, 9), (5, 5)]:
        x = rng.standard_normal((2, 3, h, w))
        got = maxpool2d(Tensor(x), kernel=2)
        np.testing.assert_array_equal(got.data, maxpool_oracle(x, 2))


def test_maxpool_tie_routes_gradient_to_first_element():
    x = Tensor(np.full((1, 1, 2, 2), 3.0), requires_grad=True)
    out = maxpool2d(x, kernel=2)
    out.sum().backward()
    want = np.zeros((1, 1, 2, 2))
    want[0, 0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, want)


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------


def test_batchnorm_train_uses_batch_stats_biased_variance():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((4, 3, 5, 6))
    gamma = rng.standard_normal(3)
    beta = rng.standard_normal(3)
    rm, rv = np.zeros(3), np.ones(3)
    out = batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta), rm, rv, training=True)
    mean = x.mean(axis=(0, 2, 3))
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out.data, batchnorm_oracle(x, gamma, beta, mean, var, 1e-5),
                               rtol=1e-12, atol=1e-12)
    # Running buffers moved toward the batch statistics.
    np.testing.assert_allclose(rm, 0.1 * mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * var, rtol=1e-12, atol=1e-12)


def test_batchnorm_train_output_independent_of_buffer_contents():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((3, 2, 4, 4))
    gamma, beta = np.ones(2), np.zeros(2)
    a = batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta),
                    np.zeros(2), np.ones(2), training=True)
    b = batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta),
                    np.full(2, 5.0), np.full(2, 9.0), training=True)
    np.testing.assert_array_equal(a.data, b.data)


def test_batchnorm_eval_uses_running_buffers():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 3, 4, 4))
    gamma = rng.standard_normal(3)
    beta = rng.standard_normal(3)
    rm = rng.standard_normal(3)
    rv = rng.random(3) + 0.5
    out = batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta), rm.copy(), rv.copy(),
                      training=False)
    np.testing.assert_allclose(out.data, batchnorm_oracle(x, gamma, beta, rm, rv, 1e-5),
                               rtol=1e-12, atol=1e-12)


def test_batchnorm_shape_errors():
    x = Tensor(np.zeros((2, 3, 4, 4)))
    with pytest.raises(ValueError, match="channels"):
        batchnorm2d(x, Tensor(np.ones(2)), Tensor(np.zeros(3)),
                    np.zeros(3), np.ones(3), training=True)
    with pytest.raises(ValueError, match="4-D"):
        batchnorm2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                    np.zeros(3), np.ones(3), training=True)


# ---------------------------------------------------------------------------
# gap / linear / elementwise
# ---------------------------------------------------------------------------


def test_gap_single_and_batched():
    rng = np.random.default_rng(13)
    x3 = rng.standard_normal((4, 5, 6))
    x4 = rng.standard_normal((2, 4, 5, 6))
    np.testing.assert_allclose(gap(Tensor(x3)).data, x3.mean(axis=(1, 2)),
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(gap(Tensor(x4)).data, x4.mean(axis=(2, 3)),
                               rtol=1e-12, atol=1e-12)


def test_linear_matches_loop_oracle():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((5, 7))
    w = rng.standard_normal((3, 7))
    b = rng.standard_normal(3)
    np.testing.assert_allclose(linear(Tensor(x), Tensor(w), Tensor(b)).data,
                               linear_oracle(x, w, b), rtol=1e-12, atol=1e-12)
    v = rng.standard_normal(7)
    np.testing.assert_allclose(linear(Tensor(v), Tensor(w), Tensor(b)).data,
                               linear_oracle(v[None], w, b)[0], rtol=1e-12, atol=1e-12)


def test_linear_shape_errors():
    with pytest.raises(ValueError, match="width"):
        linear(Tensor(np.zeros(5)), Tensor(np.zeros((3, 7))), Tensor(np.zeros(3)))
    with pytest.raises(ValueError, match="bias"):
        linear(Tensor(np.zeros(7)), Tensor(np.zeros((3, 7))), Tensor(np.zeros(4)))


def test_elementwise_mul_channel_scale_and_mismatch():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 3, 4, 5))
    s = rng.standard_normal((2, 3, 1, 1))
    np.testing.assert_array_equal(elementwise_mul(Tensor(x), Tensor(s)).data, x * s)
    with pytest.raises(ValueError, match="mismatch"):
        elementwise_mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


# ---------------------------------------------------------------------------
# normalization / distances / stabilized log-sum
# ---------------------------------------------------------------------------


def test_l2_normalize_unit_norm_rows_and_degenerate_error():
    rng = np.random.default_rng(16)
    v = rng.standard_normal(9)
    out = l2_normalize(Tensor(v))
    np.testing.assert_allclose(out.data, v / np.linalg.norm(v), rtol=1e-12, atol=1e-12)
    rows = rng.standard_normal((4, 6))
    out = l2_normalize(Tensor(rows))
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), np.ones(4),
                               rtol=1e-12, atol=1e-12)
    with pytest.raises(DegenerateVectorError):
        l2_normalize(Tensor(np.zeros(5)))
    with pytest.raises(DegenerateVectorError):
        l2_normalize(Tensor(np.array([[1.0, 0.0], [0.0, 0.0]])))


def test_sq_euclidean_matches_numpy():
    rng = np.random.default_rng(17)
    u = rng.standard_normal(11)
    v = rng.standard_normal(11)
    got = sq_euclidean(Tensor(u), Tensor(v)).item()
    assert abs(got - ((u - v) ** 2).sum()) < 1e-12
    with pytest.raises(ValueError, match="mismatch"):
        sq_euclidean(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_log1p_sum_exp_small_matches_naive():
    rng = np.random.default_rng(18)
    for _ in range(20):
        t = rng.standard_normal(rng.integers(1, 8))
        got = log1p_sum_exp(Tensor(t)).item()
        want = np.log1p(np.exp(t).sum())
        assert abs(got - want) < 1e-12


def test_log1p_sum_exp_empty_is_exactly_zero():
    assert log1p_sum_exp(Tensor(np.zeros(0))).item() == 0.0


def test_log1p_sum_exp_huge_terms_do_not_overflow():
    t = np.array([900.0, 1200.0, -500.0])
    got = log1p_sum_exp(Tensor(t)).item()
    assert np.isfinite(got)
    assert abs(got - 1200.0) < 1e-9  # dominated by the largest term


def test_log1p_sum_exp_very_negative_terms_approach_zero():
    got = log1p_sum_exp(Tensor(np.array([-800.0, -900.0]))).item()
    assert 0.0 <= got < 1e-300 or got == 0.0


# ---------------------------------------------------------------------------
# structural ops and graph mechanics
# ---------------------------------------------------------------------------


def test_broadcast_add_sums_gradient_down():
    a = Tensor(np.zeros((3, 4)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_array_equal(a.grad, np.ones((3, 4)))
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_getitem_fancy_duplicate_rows_accumulate():
    m = Tensor(np.arange(6, dtype=float).reshape(3, 2), requires_grad=True)
    rows = m[np.array([0, 0, 2])]
    rows.sum().backward()
    np.testing.assert_array_equal(m.grad, np.array([[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]]))


def test_concat_backward_splits():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    out = concat([a, b])
    (out * Tensor(np.arange(5.0))).sum().backward()
    np.testing.assert_array_equal(a.grad, [0.0, 1.0])
    np.testing.assert_array_equal(b.grad, [2.0, 3.0, 4.0])


def test_max_min_ties_pick_first_flat_index():
    t = Tensor(np.array([2.0, 5.0, 5.0, 1.0]), requires_grad=True)
    t.max().backward()
    np.testing.assert_array_equal(t.grad, [0.0, 1.0, 0.0, 0.0])
    t2 = Tensor(np.array([3.0, 1.0, 1.0]), requires_grad=True)
    t2.min().backward()
    np.testing.assert_array_equal(t2.grad, [0.0, 1.0, 0.0])


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (t * 2).backward()


def test_no_grad_suppresses_graph():
    t = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (t * 2).sum()
    assert not out.requires_grad
    assert out._parents == ()


def test_detach_blocks_gradient_flow():
    t = Tensor(np.ones(3), requires_grad=True)
    (t.detach() * 2).sum()
    assert t.grad is None


def test_reused_node_accumulates_both_paths():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * 3
    z = (y + y).sum()
    z.backward()
    np.testing.assert_array_equal(x.grad, [6.0])
