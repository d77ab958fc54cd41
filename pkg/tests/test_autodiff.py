import numpy as np
import pytest
from scipy import stats

from gradcases import CASES
from redeeg import autodiff as ad
from redeeg.autodiff import Adam, Tensor, clip_global_norm


def test_sum_grad_is_ones():
    theta = Tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
    theta.sum().backward()
    np.testing.assert_array_equal(theta.grad, np.ones((3, 4)))


def test_sum_of_squares_grad():
    theta = Tensor([1.0, -2.0], requires_grad=True)
    (theta * theta).sum().backward()
    np.testing.assert_allclose(theta.grad, [2.0, -4.0])


def test_backward_rejects_non_scalar():
    theta = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (theta * 2).backward()


def test_shared_subexpression_accumulates():
    a = Tensor(3.0, requires_grad=True)
    b = a * a
    (b + b * a).backward()  # a^2 + a^3
    assert a.grad == pytest.approx(2 * 3 + 3 * 9)


@pytest.mark.parametrize("kind", sorted(CASES))
def test_gradient_check(kind):
    errs = [CASES[kind](seed) for seed in range(5)]
    assert max(errs) < 1e-3


def test_conv1d_identity_kernel():
    x = np.random.default_rng(1).standard_normal((2, 9, 1))
    w = np.zeros((3, 1, 1))
    w[1, 0, 0] = 1.0
    np.testing.assert_array_equal(ad.conv1d(Tensor(x), Tensor(w)).data, x)


def test_conv_shape_error_names_layer():
    with pytest.raises(ad.LayerShapeError, match="conv1d"):
        ad.conv1d(Tensor(np.zeros((1, 5, 2))), Tensor(np.zeros((3, 3, 4))))
    with pytest.raises(ad.LayerShapeError, match=r"conv2d.*\(1, 5, 2\)"):
        ad.conv2d(Tensor(np.zeros((1, 5, 2))), Tensor(np.zeros((3, 3, 1, 4))))


def test_avgpool_pairwise_means():
    x = Tensor(np.array([1.0, 3.0, 5.0, 7.0]).reshape(1, 4, 1))
    np.testing.assert_array_equal(ad.avg_pool(x, axis=1).data.ravel(), [2.0, 6.0])


def test_maxpool_halves_axis():
    x = Tensor(np.array([1.0, 3.0, 7.0, 5.0]).reshape(1, 4, 1))
    np.testing.assert_array_equal(ad.max_pool(x, axis=1).data.ravel(), [3.0, 7.0])


def test_lstm_zero_weights_zero_states():
    x = Tensor(np.random.default_rng(2).standard_normal((2, 10, 3)))
    out = ad.lstm(x, Tensor(np.zeros((3, 16))), Tensor(np.zeros((4, 16))), Tensor(np.zeros(16)))
    assert out.shape == (2, 10, 4)
    np.testing.assert_array_equal(out.data, 0.0)


def test_lstm_reverse_is_flipped_forward():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 6, 2))
    wx, wh, b = rng.standard_normal((2, 8)), rng.standard_normal((2, 8)), rng.standard_normal(8)
    fw = ad.lstm(Tensor(x[:, ::-1]), Tensor(wx), Tensor(wh), Tensor(b)).data
    bw = ad.lstm(Tensor(x), Tensor(wx), Tensor(wh), Tensor(b), reverse=True).data
    np.testing.assert_allclose(bw, fw[:, ::-1], atol=1e-14)


def test_softmax_rows_and_shift_invariance():
    rng = np.random.default_rng(4)
    z = rng.standard_normal((5, 7, 2)) * 10
    p = ad.softmax(Tensor(z)).data
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(ad.softmax(Tensor(z + 123.0)).data, p, atol=1e-12)


def test_batchnorm_training_normalizes():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((8, 50, 3)) * [1.0, 5.0, 0.2] + [3.0, -1.0, 0.0]
    state = {"mean": np.zeros((1, 1, 3)), "var": np.ones((1, 1, 3))}
    out = ad.batch_norm(Tensor(x), Tensor(np.ones((1, 1, 3))), Tensor(np.zeros((1, 1, 3))),
                        state, (0, 1), True, eps=0.0).data
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 1)), 1.0, atol=1e-6)


def test_batchnorm_running_stats_momentum():
    x = np.full((2, 4, 1), 2.0)
    x[0] = 0.0
    state = {"mean": np.zeros((1, 1, 1)), "var": np.ones((1, 1, 1))}
    ad.batch_norm(Tensor(x), Tensor(np.ones((1, 1, 1))), Tensor(np.zeros((1, 1, 1))),
                  state, (0, 1), True, momentum=0.99)
    assert state["mean"].item() == pytest.approx(0.01 * 1.0)
    assert state["var"].item() == pytest.approx(0.99 + 0.01 * 1.0)


def test_dropout_rate_binomial_and_identity_at_inference():
    rate = 0.3
    x = Tensor(np.ones(100_000))
    out = ad.dropout(x, rate, True, np.random.default_rng(6)).data
    zeros = int(np.sum(out == 0))
    p = stats.binomtest(zeros, x.size, rate).pvalue
    assert p > 0.01
    np.testing.assert_allclose(out[out != 0], 1 / (1 - rate))
    assert ad.dropout(x, rate, False, None) is x


def test_cross_entropy_values():
    labels = np.array([0, 1, 1, 0])
    onehot = np.eye(2)[labels]
    assert ad.cross_entropy(Tensor(onehot), labels).data == pytest.approx(0.0)
    half = np.full((4, 2), 0.5)
    assert ad.cross_entropy(Tensor(half), labels).data == pytest.approx(np.log(2), abs=1e-12)


def test_cross_entropy_matches_scalar_loop():
    rng = np.random.default_rng(7)
    p1 = rng.uniform(0.01, 0.99, size=(3, 11))
    probs = np.stack([1 - p1, p1], axis=-1)
    labels = rng.integers(0, 2, size=(3, 11))
    total = 0.0
    for i in range(3):
        for t in range(11):
            total += -np.log(probs[i, t, labels[i, t]])
    expected = total / 33
    assert abs(ad.cross_entropy(Tensor(probs), labels).data - expected) < 1e-12


def test_cross_entropy_zero_prob_is_finite():
    probs = Tensor(np.array([[1.0, 0.0]]), requires_grad=True)
    loss = ad.cross_entropy(probs, np.array([1]))
    assert np.isfinite(loss.data) and loss.data == pytest.approx(-np.log(1e-12))
    loss.backward()
    assert np.all(np.isfinite(probs.grad))


def test_clip_global_norm_examples():
    (g,), norm = clip_global_norm([np.array([3.0, 4.0])], 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(g, [0.6, 0.8])
    (g,), _ = clip_global_norm([np.array([0.1, 0.1])], 1.0)
    np.testing.assert_array_equal(g, [0.1, 0.1])


def test_clip_global_norm_bound_random():
    rng = np.random.default_rng(8)
    for _ in range(50):
        grads = [rng.standard_normal(rng.integers(1, 6, size=2)) * rng.uniform(0, 3)
                 for _ in range(3)]
        clipped, _ = clip_global_norm(grads, 1.0)
        assert ad.global_norm(clipped) <= 1.0 + 1e-12


def test_adam_zero_grad_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    opt.m[0][:] = 0.5
    opt.step([np.zeros(2)])
    np.testing.assert_allclose(opt.m[0], 0.45)
    p2 = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    Adam([p2], lr=0.1).step([np.zeros(2)])
    np.testing.assert_array_equal(p2.data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    for g in (2.5, -0.01):
        p = Tensor(np.array(1.0), requires_grad=True)
        Adam([p], lr=1e-3).step([np.array(g)])
        assert p.data == pytest.approx(1.0 - 1e-3 * np.sign(g), abs=1e-9)


def _reference_adam(theta, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * (theta - 3.0)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
    return theta


def test_adam_quadratic_matches_reference():
    p = Tensor(np.array(0.0), requires_grad=True)
    opt = Adam([p], lr=0.1)
    for _ in range(200):
        p.grad = None
        ((p - 3.0) ** 2).backward()
        opt.step()
    ref = _reference_adam(0.0, 200, 0.1)
    assert abs(float(p.data) - 3.0) < 0.1
    assert float(p.data) == pytest.approx(ref, abs=1e-12)


def test_checkpoint_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    arrays = {"a": rng.standard_normal((3, 4)), "b": np.array(1.2345678901234567),
              "c": rng.standard_normal(7) * 1e-300}
    ad.save_checkpoint(tmp_path / "ck", arrays, {"k": 1}, optimizer_step=17)
    back, meta, step = ad.load_checkpoint(tmp_path / "ck")
    assert step == 17 and meta == {"k": 1}
    for k in arrays:
        assert back[k].tobytes() == np.asarray(arrays[k], dtype="<f8").tobytes()
