"""Gradient and semantics checks for the reverse-mode engine.

Every differentiable op is compared against central finite differences on
random inputs in [-2, 2]; relu comparisons skip coordinates within 1e-4 of
its kink, where the subgradient convention and the difference quotient
legitimately disagree.
"""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import numerical_gradient, rel_error
from kdlab import autodiff as ad
from kdlab.autodiff import Tensor

TRIALS = 100


def scalar_through(op_fn, *inputs):
    """Reduce an op's output to a scalar so a single backward covers it."""
    out = op_fn(*inputs)
    return ad.sum(out) if out.data.ndim else out


def check_op_gradient(rng, op_fn, shapes, tol=1e-4, mask_fn=None):
    for _ in range(TRIALS):
        tensors = [Tensor(rng.uniform(-2, 2, size=s), requires_grad=True) for s in shapes]
        loss = scalar_through(op_fn, *tensors)
        loss.backward()
        for t in tensors:
            def f(v, t=t):
                old = t.data
                t.data = v
                val = float(scalar_through(op_fn, *tensors).data)
                t.data = old
                return val
            num = numerical_gradient(f, t.data.copy())
            grad = t.grad
            if mask_fn is not None:
                keep = mask_fn(t.data)
                grad, num = grad * keep, num * keep
            assert rel_error(grad, num) < tol


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
        npt.assert_array_equal(out.data, a)

    def test_row_times_column(self):
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        npt.assert_array_equal(out.data, [[11.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradcheck_3x4_4x2(self):
        rng = np.random.default_rng(0)
        check_op_gradient(rng, ad.matmul, [(3, 4), (4, 2)], tol=1e-6)


class TestElementwiseOps:
    def test_relu_values(self):
        npt.assert_array_equal(ad.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_relu_gradient_zero_at_tie(self):
        x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
        ad.sum(ad.relu(x)).backward()
        npt.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_square_values(self):
        npt.assert_array_equal(ad.square(Tensor([1.0, -2.0, 3.0])).data, [1.0, 4.0, 9.0])

    def test_add_shape_error(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    @pytest.mark.parametrize("op,arity", [
        (ad.add, 2), (ad.sub, 2), (ad.mul, 2), (ad.square, 1),
        (ad.sum, 1), (ad.mean, 1),
    ])
    def test_gradcheck(self, op, arity):
        rng = np.random.default_rng(hash(op.__name__) % 2**32)
        check_op_gradient(rng, op, [(4, 3)] * arity)

    def test_gradcheck_scale(self):
        rng = np.random.default_rng(7)
        check_op_gradient(rng, lambda t: ad.scale(t, 1.7), [(4, 3)])

    def test_gradcheck_relu_away_from_kink(self):
        rng = np.random.default_rng(8)
        check_op_gradient(rng, ad.relu, [(4, 3)],
                          mask_fn=lambda x: (np.abs(x) > 1e-4).astype(float))

    def test_gradcheck_bias_add(self):
        rng = np.random.default_rng(9)
        check_op_gradient(rng, ad.add, [(4, 3), (3,)])

    def test_gradcheck_row_normalize(self):
        rng = np.random.default_rng(10)
        check_op_gradient(rng, ad.row_normalize, [(4, 3)])

    def test_gradcheck_log_softmax(self):
        rng = np.random.default_rng(11)
        check_op_gradient(rng, ad.log_softmax, [(4, 3)])


class TestSoftmaxCrossEntropy:
    def test_uniform_two_way(self):
        loss = ad.softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([0]))
        assert abs(loss.item() - np.log(2.0)) < 1e-12

    def test_saturated_no_overflow(self):
        loss = ad.softmax_cross_entropy(Tensor([[100.0, 0.0]]), np.array([0]))
        assert 0.0 <= loss.item() < 1e-10

    def test_gradient_closed_form(self):
        rng = np.random.default_rng(12)
        logits = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        labels = rng.integers(0, 5, size=4)
        ad.softmax_cross_entropy(logits, labels).backward()
        p = ad.softmax(logits.data)
        expected = p.copy()
        expected[np.arange(4), labels] -= 1.0
        npt.assert_allclose(logits.grad, expected / 4.0, atol=1e-10)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            ad.softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([2]))


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        ad.sum(x).backward()
        npt.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sum_of_squares_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ad.sum(ad.square(x)).backward()
        npt.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(ad.square(x))

    def test_shared_subexpression_sums_cotangents(self):
        x = Tensor([3.0], requires_grad=True)
        ad.sum(ad.add(x, x)).backward()
        npt.assert_array_equal(x.grad, [2.0])

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = ad.sum(x)
        loss.backward()
        # fresh graph, same leaf: grads add up until zeroed
        ad.sum(x).backward()
        npt.assert_array_equal(x.grad, [2.0, 2.0])

    def test_two_layer_mlp_full_gradcheck(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(-1, 1, size=(6, 4))
        labels = rng.integers(0, 3, size=6)
        w1 = Tensor(rng.normal(size=(4, 5)) * 0.5, requires_grad=True)
        b1 = Tensor(rng.normal(size=5) * 0.1, requires_grad=True)
        w2 = Tensor(rng.normal(size=(5, 3)) * 0.5, requires_grad=True)
        b2 = Tensor(rng.normal(size=3) * 0.1, requires_grad=True)

        def forward():
            h = ad.relu(ad.add(ad.matmul(Tensor(x), w1), b1))
            return ad.softmax_cross_entropy(ad.add(ad.matmul(h, w2), b2), labels)

        forward().backward()
        for p in (w1, b1, w2, b2):
            def f(v, p=p):
                old = p.data
                p.data = v
                val = forward().item()
                p.data = old
                return val
            assert rel_error(p.grad, numerical_gradient(f, p.data.copy())) < 1e-5


class TestDetach:
    def test_value_equal_no_grad_flow(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        d = ad.detach(x)
        npt.assert_array_equal(d.data, x.data)
        ad.sum(ad.mul(d, d)).backward()
        assert x.grad is None

    def test_detach_idempotent(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        d1 = ad.detach(x)
        d2 = ad.detach(d1)
        npt.assert_array_equal(d1.data, d2.data)
        assert not d1.requires_grad and not d2.requires_grad

    def test_detached_teacher_gets_no_gradient(self):
        rng = np.random.default_rng(14)
        teacher = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        student = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        diff = ad.sub(student, ad.detach(teacher))
        ad.sum(ad.square(diff)).backward()
        assert teacher.grad is None
        assert student.grad is not None


def test_determinism_bit_identical():
    def build(seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        loss = ad.mean(ad.square(ad.relu(ad.matmul(x, w))))
        loss.backward()
        return loss.item(), x.grad.tobytes(), w.grad.tobytes()

    assert build(123) == build(123)
