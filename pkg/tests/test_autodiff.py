import numpy as np
import pytest

from helpers import finite_difference_check
from voxloop import autodiff as ad
from voxloop.errors import GraphConsumed, NotScalar, ShapeError


class TestForwardSemantics:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(ad.Tensor(0.0)).item() == pytest.approx(0.5)

    def test_einsum_ones(self):
        a = ad.Tensor(np.ones((1, 2, 3)))
        s = ad.einsum_3d(a, a)
        np.testing.assert_allclose(s.data, 3.0 * np.ones((1, 2, 2)))

    def test_einsum_matches_triple_loop(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal((2, 5, 4))
        s = ad.einsum_3d(ad.Tensor(a), ad.Tensor(b)).data
        manual = np.zeros((2, 3, 5))
        for v in range(2):
            for m in range(3):
                for n in range(5):
                    manual[v, m, n] = (a[v, m] * b[v, n]).sum()
        np.testing.assert_allclose(s, manual, atol=1e-14)

    def test_logsumexp_single_element(self):
        assert ad.logsumexp(ad.Tensor([0.0])).item() == pytest.approx(0.0)

    def test_logsumexp_overflow_safe(self):
        out = ad.logsumexp(ad.Tensor([1000.0, 1000.0]))
        assert out.item() == pytest.approx(1000.0 + np.log(2.0), abs=1e-12)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        y = ad.softmax(ad.Tensor(rng.standard_normal((4, 7)))).data
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)

    def test_l2_normalize_unit_rows(self):
        rng = np.random.default_rng(2)
        y = ad.l2_normalize(ad.Tensor(rng.standard_normal((5, 6)))).data
        np.testing.assert_allclose(np.linalg.norm(y, axis=-1), 1.0, atol=1e-9)

    def test_l2_normalize_zero_row_maps_to_zero(self):
        x = np.zeros((2, 3))
        x[1] = [3.0, 0.0, 4.0]
        y = ad.l2_normalize(ad.Tensor(x)).data
        np.testing.assert_allclose(y[0], 0.0)
        np.testing.assert_allclose(np.linalg.norm(y[1]), 1.0)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.mse(ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros(4)))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 2))))


class TestBackward:
    def test_square_gradient(self):
        x = ad.Tensor(3.0, requires_grad=True)
        ad.backward(ad.mul(x, x))
        assert x.grad == pytest.approx(6.0)

    def test_non_scalar_rejected(self):
        x = ad.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(NotScalar):
            ad.backward(ad.mul(x, x))

    def test_second_backward_rejected(self):
        x = ad.Tensor(2.0, requires_grad=True)
        loss = ad.mul(x, x)
        ad.backward(loss)
        with pytest.raises(GraphConsumed):
            ad.backward(loss)

    def test_gradient_accumulates_on_reuse(self):
        x = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = ad.tsum(ad.add(ad.mul(x, x), x))  # x^2 + x per element
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, 2.0 * x.data + 1.0)

    def test_mse_of_sigmoid_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        w = ad.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        x = rng.standard_normal((6, 4))
        y = rng.uniform(0, 1, (6, 3))

        def loss():
            return ad.mse(ad.sigmoid(ad.matmul(ad.Tensor(x), w)), ad.Tensor(y))

        finite_difference_check(loss, {"w": w}, rtol=1e-4)

    @pytest.mark.parametrize("op_name", [
        "relu", "sigmoid", "softmax", "l2_normalize", "sqrt_abs",
        "logsumexp", "power", "div", "transpose_reshape", "einsum",
        "gather", "take", "index_rows",
    ])
    def test_each_op_gradient(self, op_name):
        rng = np.random.default_rng(hash(op_name) % 2**32)
        x = ad.Tensor(rng.uniform(0.3, 2.0, (3, 4)), requires_grad=True)
        mix34 = ad.Tensor(rng.standard_normal((3, 4)))
        mix26 = ad.Tensor(rng.standard_normal((2, 6)))

        builders = {
            "relu": lambda: ad.tsum(ad.relu(ad.sub(x, 1.0))),
            "sigmoid": lambda: ad.tsum(ad.sigmoid(x)),
            "softmax": lambda: ad.tsum(ad.mul(ad.softmax(x), mix34)),
            "l2_normalize": lambda: ad.tsum(ad.mul(ad.l2_normalize(x), mix34)),
            "sqrt_abs": lambda: ad.tsum(ad.sqrt(x)),
            "logsumexp": lambda: ad.logsumexp(x) + ad.tsum(ad.logsumexp(x, axis=-1)),
            "power": lambda: ad.tsum(ad.power(x, 2.5)),
            "div": lambda: ad.tsum(ad.div(1.0, x)),
            "transpose_reshape": lambda: ad.tsum(ad.mul(
                ad.reshape(ad.transpose(x, (1, 0)), (2, 6)), mix26)),
            "einsum": lambda: ad.tsum(ad.einsum_3d(
                ad.reshape(x, (1, 3, 4)), ad.reshape(x, (1, 3, 4)))),
            "gather": lambda: ad.tsum(ad.gather_last(
                x, np.array([1, 0, 3], dtype=np.int64))),
            "take": lambda: ad.tsum(ad.take(x, np.array([0, 5, 5, 11]))),
            "index_rows": lambda: ad.tsum(ad.index_rows(
                x, np.array([0, 2, 2, 1]))),
        }
        finite_difference_check(builders[op_name], {"x": x}, rtol=1e-4)

    def test_svd_rotation_gradient(self):
        rng = np.random.default_rng(12)
        h = ad.Tensor(rng.standard_normal((3, 3)), requires_grad=True)
        target = rng.standard_normal((3, 3))

        def loss():
            return ad.tsum(ad.mul(ad.svd_rotation(h), ad.Tensor(target)))

        finite_difference_check(loss, {"h": h}, rtol=1e-3)


class TestGraphIsolation:
    def test_disjoint_graphs_do_not_interact(self):
        x = ad.Tensor(1.5, requires_grad=True)
        first = ad.mul(x, x)
        second = ad.mul(x, ad.Tensor(4.0))
        ad.backward(first)
        g_first = float(x.grad)
        x.zero_grad()
        ad.backward(second)
        assert g_first == pytest.approx(3.0)
        assert float(x.grad) == pytest.approx(4.0)
