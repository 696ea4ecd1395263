import numpy as np
import pytest

from textled import autodiff as ad
from textled.autodiff import Tensor
from textled.errors import DoubleBackward, NonScalarLoss, ShapeMismatch


def tensor(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# --- forward semantics ---

def test_identity_matmul():
    a = tensor(np.random.default_rng(0).normal(size=(4, 4)))
    out = ad.matmul(Tensor(np.eye(4)), a)
    assert np.allclose(out.data, a.data, atol=1e-15)


def test_matmul_transpose_identity():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    left = ad.transpose(ad.matmul(a, b)).data
    right = ad.matmul(ad.transpose(b), ad.transpose(a)).data
    assert np.max(np.abs(left - right)) <= 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_concat_then_slice_recovers_parts():
    rng = np.random.default_rng(2)
    parts = [Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(5, 3)))]
    joined = ad.concat_rows(parts)
    assert np.array_equal(ad.slice_rows(joined, 0, 2).data, parts[0].data)
    assert np.array_equal(ad.slice_rows(joined, 2, 7).data, parts[1].data)


def test_softmax_uniform_and_closed_form():
    assert np.allclose(ad.softmax(Tensor(np.array([0.0, 0.0]))).data, [0.5, 0.5])
    out = ad.softmax(Tensor(np.log(np.array([1.0, 3.0])))).data
    assert out == pytest.approx([0.25, 0.75], abs=1e-12)


def test_softmax_shift_invariance_and_rows():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 7))
    a = ad.softmax(Tensor(x), axis=-1).data
    b = ad.softmax(Tensor(x + 123.0), axis=-1).data
    assert np.max(np.abs(a - b)) <= 1e-12
    assert np.max(np.abs(a.sum(axis=-1) - 1.0)) <= 1e-12


def test_layer_norm_constant_row_gives_bias():
    gain = tensor(np.full(6, 2.0))
    bias = tensor(np.full(6, 0.25))
    out = ad.layer_norm(Tensor(np.full((2, 6), 3.7)), gain, bias)
    assert np.allclose(out.data, 0.25, atol=1e-6)


def test_layer_norm_standardizes():
    rng = np.random.default_rng(4)
    x = rng.normal(2.0, 3.0, size=(5, 32))
    out = ad.layer_norm(Tensor(x), tensor(np.ones(32)), tensor(np.zeros(32))).data
    assert np.max(np.abs(out.mean(axis=-1))) <= 1e-12
    assert out.var(axis=-1) == pytest.approx(np.ones(5), rel=1e-3)


def test_layer_norm_idempotent_up_to_affine():
    rng = np.random.default_rng(5)
    gain, bias = tensor(np.ones(16)), tensor(np.zeros(16))
    x = Tensor(rng.normal(size=(3, 16)))
    once = ad.layer_norm(x, gain, bias)
    twice = ad.layer_norm(once, gain, bias)
    # the eps=1e-5 inside the square root rescales by about sqrt(1 + eps)
    assert np.max(np.abs(once.data - twice.data)) <= 1e-4


def test_cross_entropy_uniform_two_class():
    probs = Tensor(np.full((8, 2), 0.5))
    one_hot = np.eye(2)[np.zeros(8, dtype=int)]
    assert ad.cross_entropy(probs, one_hot).item() == pytest.approx(np.log(2), abs=1e-12)


def test_cross_entropy_perfect_prediction():
    one_hot = np.eye(3)[np.array([0, 1, 2])]
    probs = Tensor(one_hot.astype(np.float64))
    assert ad.cross_entropy(probs, one_hot).item() <= 1e-10


def test_cross_entropy_closed_form():
    probs = Tensor(np.array([[0.25, 0.75]]))
    one_hot = np.array([[0.0, 1.0]])
    assert ad.cross_entropy(probs, one_hot).item() == pytest.approx(
        -np.log(0.75), abs=1e-12
    )
    assert -np.log(0.75) == pytest.approx(0.287682, abs=1e-6)


def test_cross_entropy_nonnegative():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(10, 5))
    probs = ad.softmax(Tensor(logits), axis=-1)
    one_hot = np.eye(5)[rng.integers(0, 5, size=10)]
    assert ad.cross_entropy(probs, one_hot).item() >= 0.0


def test_log_clamp_counts_events():
    ad.reset_clamp_events()
    probs = Tensor(np.array([[1.0, 0.0]]))
    one_hot = np.array([[0.0, 1.0]])
    loss = ad.cross_entropy(probs, one_hot)
    assert loss.item() == pytest.approx(-np.log(1e-12))
    assert ad.clamp_event_count() >= 1
    ad.reset_clamp_events()
    assert ad.clamp_event_count() == 0


# --- backward semantics ---

def test_scalar_product_gradient():
    x, y = tensor(3.0), tensor(5.0)
    ad.backward(ad.mul(x, y))
    assert x.grad == pytest.approx(5.0)
    assert y.grad == pytest.approx(3.0)


def test_sum_gradient_is_ones():
    x = tensor(np.arange(12.0).reshape(3, 4))
    ad.backward(ad.tensor_sum(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_nonscalar_loss_rejected():
    x = tensor(np.ones(3))
    with pytest.raises(NonScalarLoss):
        ad.backward(x)


def test_double_backward_rejected():
    x = tensor(2.0)
    loss = ad.mul(x, x)
    ad.backward(loss)
    with pytest.raises(DoubleBackward):
        ad.backward(loss)


def test_broadcast_add_gradient():
    x = tensor(np.ones((4, 3)))
    b = tensor(np.zeros(3))
    ad.backward(ad.tensor_sum(ad.add(x, b)))
    assert np.array_equal(b.grad, np.full(3, 4.0))


def test_batched_matmul_gradients_match_loops():
    rng = np.random.default_rng(7)
    a = tensor(rng.normal(size=(2, 3, 4)))
    w = tensor(rng.normal(size=(4, 5)))
    out = ad.matmul(a, w)
    ad.backward(ad.tensor_sum(out))
    ga = np.zeros_like(a.data)
    gw = np.zeros_like(w.data)
    g = np.ones((2, 3, 5))
    for i in range(2):
        ga[i] = g[i] @ w.data.T
        gw += a.data[i].T @ g[i]
    assert np.allclose(a.grad, ga, atol=1e-12)
    assert np.allclose(w.grad, gw, atol=1e-12)


def test_embedding_gradient_scatter():
    table = tensor(np.zeros((5, 3)))
    ids = np.array([[1, 1, 4]])
    ad.backward(ad.tensor_sum(ad.embedding(table, ids)))
    expected = np.zeros((5, 3))
    expected[1] = 2.0
    expected[4] = 1.0
    assert np.array_equal(table.grad, expected)


# --- finite-difference verification ---

def test_grad_check_quadratic_form():
    rng = np.random.default_rng(8)
    a = Tensor(rng.normal(size=(6, 6)))
    x = tensor(rng.normal(size=(6, 1)))

    def f():
        return ad.tensor_sum(ad.mul(ad.matmul(a, x), x))

    worst = ad.grad_check(f, {"x": x}, eps=1e-5)
    assert worst <= 1e-9
    # analytic cross-check: gradient is (A + A^T) x
    loss = f()
    ad.backward(loss)
    assert np.allclose(x.grad, (a.data + a.data.T) @ x.data, atol=1e-10)


def test_grad_check_softmax_cross_entropy():
    rng = np.random.default_rng(9)
    logits = tensor(rng.normal(size=(4, 6)))
    one_hot = np.eye(6)[rng.integers(0, 6, size=4)]

    def f():
        return ad.cross_entropy(ad.softmax(logits, axis=-1), one_hot)

    assert ad.grad_check(f, {"logits": logits}, eps=1e-5) <= 1e-7


def test_grad_check_largest_skips_structurally_zero_gradients():
    # a softmax is invariant to a uniform logit shift, so the shift's
    # gradient is zero up to float noise; "largest" mode must not compare
    # that noise against finite differences
    rng = np.random.default_rng(11)
    logits = tensor(rng.normal(size=(4, 6)))
    shift = tensor(np.full((4, 1), 0.3))
    one_hot = np.eye(6)[rng.integers(0, 6, size=4)]

    def f():
        shifted = ad.add(logits, ad.matmul(shift, Tensor(np.ones((1, 6)))))
        return ad.cross_entropy(ad.softmax(shifted, axis=-1), one_hot)

    worst = ad.grad_check(f, {"logits": logits, "shift": shift},
                          eps=1e-5, sample=2, select="largest")
    assert worst <= 1e-7
    loss = f()
    ad.backward(loss)
    assert np.all(np.abs(shift.grad) <= 1e-12)


def test_grad_check_layer_norm_gelu():
    rng = np.random.default_rng(10)
    x = tensor(rng.normal(size=(3, 8)))
    gain = tensor(rng.normal(1.0, 0.1, size=8))
    bias = tensor(rng.normal(0.0, 0.1, size=8))

    def f():
        return ad.tensor_sum(ad.gelu(ad.layer_norm(x, gain, bias)))

    worst = ad.grad_check(f, {"x": x, "gain": gain, "bias": bias}, eps=1e-5)
    assert worst <= 1e-6
