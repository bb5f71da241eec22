import math

import numpy as np
import pytest

from vllm_lab import autodiff as ad
from vllm_lab.autodiff import (
    GradTape, GradError, NonFiniteError, ShapeError, Tensor,
    adamw_step, backward, cross_entropy, finite_diff_check, init_optimizer,
)
from vllm_lab.rng import Prng


def rand_tensor(rng, *shape, requires_grad=False, scale=1.0):
    flat = rng.normals(int(np.prod(shape))) * scale
    return Tensor.from_flat(flat, shape, requires_grad=requires_grad)


# ----------------------------------------------------------------- matmul

def test_matmul_identity():
    rng = Prng(1)
    m = rand_tensor(rng, 3, 3)
    eye = Tensor(np.eye(3))
    out = ad.matmul(eye, m)
    assert np.array_equal(out.view(), m.view())


def test_matmul_annihilator():
    rng = Prng(2)
    z = Tensor(np.zeros((2, 3)))
    r = rand_tensor(rng, 3, 4)
    out = ad.matmul(z, r)
    assert out.shape == (2, 4)
    assert np.all(out.view() == 0.0)


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for l in range(k):
                s += a[i, l] * b[l, j]
            out[i, j] = s
    return out


def test_matmul_matches_triple_loop_oracle():
    rng = Prng(3)
    a = rand_tensor(rng, 3, 3)
    b = rand_tensor(rng, 3, 3)
    expected = triple_loop_matmul(a.view(), b.view())
    assert np.max(np.abs(ad.matmul(a, b).view() - expected)) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    a = Tensor(np.zeros((2, 3)))
    b = Tensor(np.zeros((4, 2)))
    with pytest.raises(ShapeError) as exc:
        ad.matmul(a, b)
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


def test_matmul_batched_agrees_with_per_slice():
    rng = Prng(4)
    a = rand_tensor(rng, 5, 4, 3)
    b = rand_tensor(rng, 3, 2)
    out = ad.matmul(a, b).view()
    for i in range(5):
        assert np.allclose(out[i], a.view()[i] @ b.view(), atol=1e-14)


# ---------------------------------------------------------------- softmax

def test_softmax_uniform_input():
    out = ad.softmax_lastdim(Tensor([0.0, 0.0, 0.0]))
    assert np.max(np.abs(out.view() - 1.0 / 3.0)) < 1e-12


def test_softmax_shift_invariance():
    rng = Prng(5)
    x = rand_tensor(rng, 4, 6)
    c = 3.7
    a = ad.softmax_lastdim(x).view()
    b = ad.softmax_lastdim(Tensor(x.view() + c)).view()
    assert np.max(np.abs(a - b)) < 1e-12


def test_softmax_direct_formula_oracle():
    x = np.array([1.0, 2.0, 3.0])
    expected = np.exp(x) / np.exp(x).sum()
    out = ad.softmax_lastdim(Tensor(x)).view()
    assert np.max(np.abs(out - expected)) < 1e-12


def test_softmax_rows_sum_to_one():
    rng = Prng(6)
    x = rand_tensor(rng, 8, 5, scale=4.0)
    out = ad.softmax_lastdim(x).view()
    assert np.all(out >= 0.0)
    assert np.max(np.abs(out.sum(axis=-1) - 1.0)) < 1e-12


# ---------------------------------------------------------- cross entropy

def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((3, 4)))
    loss = cross_entropy(logits, [0, 1, 3])
    assert abs(loss.item() - math.log(4)) < 1e-12


def test_cross_entropy_large_margin_goes_to_zero():
    logits = np.zeros((2, 5))
    logits[0, 2] = 50.0
    logits[1, 0] = 50.0
    loss = cross_entropy(Tensor(logits), [2, 0])
    assert loss.item() < 1e-12


def test_cross_entropy_log_sum_exp_oracle():
    rng = Prng(7)
    x = rand_tensor(rng, 2, 5, scale=2.0)
    targets = [3, 1]
    rows = x.view()
    expected = 0.0
    for i, t in enumerate(targets):
        expected += math.log(np.exp(rows[i]).sum()) - rows[i][t]
    expected /= 2
    assert abs(cross_entropy(x, targets).item() - expected) < 1e-12


def test_cross_entropy_rejects_out_of_range_target():
    with pytest.raises(IndexError):
        cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])


# ----------------------------------------------------------------- backward

def test_backward_sum_gives_ones():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with GradTape() as tape:
        loss = ad.sum_all(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones(3))


def test_backward_quadratic():
    x = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    with GradTape() as tape:
        loss = ad.sum_all(ad.mul(x, x))
    backward(loss, tape)
    assert np.allclose(x.grad, 2 * x.data, atol=1e-14)


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        y = ad.mul(x, x)
    with pytest.raises(GradError):
        backward(y, tape)


def test_tape_consumed_once():
    x = Tensor([1.0], requires_grad=True)
    with GradTape() as tape:
        loss = ad.sum_all(x)
    backward(loss, tape)
    with pytest.raises(ad.TapeError):
        backward(loss, tape)


def test_composite_graph_matches_finite_differences():
    rng = Prng(8)
    w = rand_tensor(rng, 4, 5, requires_grad=True, scale=0.5)
    x = Tensor(rng.normals(12).reshape(3, 4))

    def f(wt):
        h = ad.matmul(x, wt)
        p = ad.softmax_lastdim(h)
        return cross_entropy(ad.reshape(p, (3, 5)), [0, 2, 4])

    res = finite_diff_check(f, w)
    assert res.max_rel_error < 1e-4


# --------------------------------------------------------- finite differences

def test_finite_diff_on_sum():
    x = Tensor([0.3, -1.2, 4.0])
    res = finite_diff_check(ad.sum_all, x)
    assert res.max_rel_error < 1e-10
    assert np.allclose(res.analytic, 1.0)
    assert np.allclose(res.numeric, 1.0, atol=1e-10)


def test_finite_diff_half_norm_squared():
    x = Tensor([3.0, 4.0])
    res = finite_diff_check(lambda t: ad.scale(ad.sum_all(ad.mul(t, t)), 0.5), x)
    assert np.allclose(res.numeric, [3.0, 4.0], atol=1e-6)


def test_finite_diff_two_layer_net():
    rng = Prng(9)
    w1 = rand_tensor(rng, 6, 8, scale=0.4)
    w2 = rand_tensor(rng, 8, 3, scale=0.4)
    x = Tensor(rng.normals(12).reshape(2, 6))

    def f(w):
        h = ad.gelu(ad.matmul(x, w))
        out = ad.matmul(h, w2)
        return cross_entropy(out, [1, 2])

    assert finite_diff_check(f, w1).max_rel_error < 1e-4


@pytest.mark.parametrize("op", [
    ad.tanh,
    ad.gelu,
    lambda t: ad.sum_all(ad.mul(ad.softmax_lastdim(t), ad.softmax_lastdim(t))),
    lambda t: ad.sum_all(ad.permute(ad.reshape(t, (2, 2, 3)), (2, 0, 1))),
    lambda t: ad.mean_axis(ad.reshape(ad.mul(t, t), (3, 4)), 0),
])
def test_elementwise_ops_gradcheck(op):
    rng = Prng(10)
    x = Tensor(rng.normals(12))

    def f(t):
        out = op(t)
        return out if out.data.size == 1 else ad.sum_all(ad.mul(out, out))

    assert finite_diff_check(f, x).max_rel_error < 1e-4


def test_layer_norm_gradcheck():
    rng = Prng(11)
    x = rand_tensor(rng, 3, 6)
    gain = Tensor(1.0 + 0.1 * rng.normals(6))
    bias = Tensor(0.1 * rng.normals(6))

    def wrt_x(t):
        return ad.sum_all(ad.mul(ad.layer_norm(t, gain, bias),
                                 Tensor(rng_probe)))

    rng_probe = Prng(12).normals(18).reshape(3, 6)
    assert finite_diff_check(wrt_x, x).max_rel_error < 1e-4

    def wrt_gain(gt):
        out = ad.layer_norm(x, gt, bias)
        return ad.sum_all(ad.mul(out, Tensor(rng_probe)))

    assert finite_diff_check(wrt_gain, gain).max_rel_error < 1e-4


def test_gather_and_concat_gradcheck():
    rng = Prng(13)
    table = rand_tensor(rng, 5, 4)
    ids = [0, 3, 3, 1]

    def f(t):
        rows = ad.gather_rows(t, ids)
        both = ad.concat_lastdim(rows, rows)
        return ad.sum_all(ad.mul(both, both))

    assert finite_diff_check(f, table).max_rel_error < 1e-4


def test_conv2d_gradcheck():
    rng = Prng(14)
    x = rand_tensor(rng, 2, 6, 6, scale=0.5)
    w = rand_tensor(rng, 3, 2, 3, 3, scale=0.3)
    b = rand_tensor(rng, 3, scale=0.1)

    def wrt_x(t):
        out = ad.conv2d(t, w, b, stride=2, pad=1)
        return ad.sum_all(ad.mul(out, out))

    assert finite_diff_check(wrt_x, x).max_rel_error < 1e-4

    def wrt_w(wt):
        out = ad.conv2d(x, wt, b, stride=2, pad=1)
        return ad.sum_all(ad.mul(out, out))

    assert finite_diff_check(wrt_w, w).max_rel_error < 1e-4


# ---------------------------------------------------------------- optimizer

def test_adamw_zero_grad_no_decay_is_identity():
    p = Tensor([1.0, -2.0], requires_grad=True)
    p.grad = np.zeros(2)
    state = init_optimizer([p], weight_decay=0.0)
    before = p.data.copy()
    adamw_step([p], state)
    assert np.array_equal(p.data, before)
    assert state.step == 1


def test_adamw_lr_zero_is_identity():
    p = Tensor([1.0, -2.0], requires_grad=True)
    p.grad = np.array([0.5, -0.3])
    state = init_optimizer([p], learning_rate=0.0)
    before = p.data.copy()
    adamw_step([p], state)
    assert np.array_equal(p.data, before)


def test_adamw_constant_grad_converges_to_sign_step():
    p = Tensor([0.0, 0.0], requires_grad=True)
    state = init_optimizer([p], learning_rate=1e-3, weight_decay=0.0)
    g = np.array([0.25, -3.0])
    prev = p.data.copy()
    for _ in range(500):
        p.grad = g.copy()
        prev = p.data.copy()
        adamw_step([p], state)
    update = p.data - prev
    assert np.allclose(update, -1e-3 * np.sign(g), rtol=0.01)


def test_adamw_single_step_matches_hand_formula():
    lr, b1, b2, eps, wd = 1e-3, 0.9, 0.999, 1e-8, 0.01
    p0 = np.array([0.7, -1.1])
    g = np.array([0.2, 0.4])
    p = Tensor(p0, requires_grad=True)
    p.grad = g.copy()
    state = init_optimizer([p], learning_rate=lr, beta1=b1, beta2=b2,
                           epsilon=eps, weight_decay=wd)
    adamw_step([p], state)
    decayed = p0 - lr * wd * p0
    m_hat = ((1 - b1) * g) / (1 - b1)
    v_hat = ((1 - b2) * g * g) / (1 - b2)
    expected = decayed - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert np.max(np.abs(p.data - expected)) < 1e-12
    assert p.grad is None


def test_adamw_missing_grad_raises():
    p = Tensor([1.0], requires_grad=True)
    state = init_optimizer([p])
    with pytest.raises(GradError):
        adamw_step([p], state)


# ------------------------------------------------------------- error policy

def test_non_finite_values_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, float("nan")])
    with pytest.raises(NonFiniteError):
        Tensor([float("inf")])


def test_determinism_bitwise():
    rng1 = Prng(15)
    rng2 = Prng(15)
    a1 = rand_tensor(rng1, 8, 8)
    a2 = rand_tensor(rng2, 8, 8)
    out1 = ad.softmax_lastdim(ad.matmul(a1, a1)).view()
    out2 = ad.softmax_lastdim(ad.matmul(a2, a2)).view()
    assert np.array_equal(out1, out2)
