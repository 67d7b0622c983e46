"""Autodiff core: forward semantics and gradients vs central differences."""

import numpy as np
import pytest

from moodcap import tensor as T
from moodcap.errors import ConfigError, DomainError, NumericsError, ShapeError


def scalar_fd(build):
    """Run an op-level gradient check on a single unnamed input.

    build(x_tensor) -> scalar tensor. Returns worst relative error for a
    given input array via the package finite-difference oracle.
    """

    def checker(x0, eps=1e-5):
        params = {"x": x0.copy()}

        def loss(p):
            tape = T.Tape()
            x = tape.leaf(p["x"], name="x")
            return build(x)

        return T.finite_diff_check(loss, params, eps=eps)

    return checker


class TestForwardSemantics:
    def test_matmul_identity(self):
        a = T.Tensor(np.eye(2)) @ T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(a.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_matmul_hand_case(self):
        out = T.Tensor([[1.0, 2.0]]) @ T.Tensor([[3.0], [4.0]])
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(1, 2\).*\(3, 1\)"):
            T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[1.0], [2.0], [3.0]]))

    def test_softmax_symmetry(self):
        out = T.softmax(T.Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_softmax_large_magnitude_is_finite(self):
        out = T.softmax(T.Tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-300)

    def test_softmax_simplex_for_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = rng.normal(scale=1e3, size=(3, 7))
            y = T.softmax(T.Tensor(x), axis=-1).data
            assert np.all(y >= 0)
            np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)

    def test_sigmoid_and_tanh_at_zero(self):
        assert T.sigmoid(T.Tensor([0.0])).data[0] == 0.5
        assert T.tanh(T.Tensor([0.0])).data[0] == 0.0

    def test_sigmoid_saturation_is_exact(self):
        y = T.sigmoid(T.Tensor([1e6, -1e6])).data
        assert y[0] == 1.0 and y[1] == 0.0

    def test_log_rejects_non_positive(self):
        with pytest.raises(DomainError):
            T.log(T.Tensor([1.0, 0.0]))

    def test_nan_input_surfaces_immediately(self):
        with pytest.raises(NumericsError):
            T.add(T.Tensor([np.nan]), T.Tensor([1.0]))

    def test_embedding_lookup_row(self):
        row = T.embedding_lookup(T.Tensor(np.eye(3)), 1)
        np.testing.assert_array_equal(row.data.ravel(), [0.0, 1.0, 0.0])

    def test_embedding_lookup_out_of_range(self):
        with pytest.raises(IndexError):
            T.embedding_lookup(T.Tensor(np.eye(3)), 3)

    def test_concat_and_transpose(self):
        a = T.Tensor([[1.0, 2.0]])
        b = T.Tensor([[3.0, 4.0]])
        c = T.concat([a, b], axis=0)
        np.testing.assert_array_equal(c.data, [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.transpose(c).data, [[1.0, 3.0], [2.0, 4.0]])


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = T.Tensor([1.0, 2.0])
        rng = np.random.default_rng(0)
        assert T.dropout(x, 0.0, training=True, rng=rng) is x

    def test_eval_mode_is_identity_bitwise(self):
        x = T.Tensor(np.random.default_rng(1).normal(size=8))
        out = T.dropout(x, 0.7, training=False)
        assert out is x

    def test_invalid_rate(self):
        with pytest.raises(ConfigError):
            T.dropout(T.Tensor([1.0]), 1.0, training=True, rng=np.random.default_rng(0))

    def test_monte_carlo_mean_is_preserved(self):
        rng = np.random.default_rng(42)
        x = T.Tensor(np.ones(100_000))
        out = T.dropout(x, 0.4, training=True, rng=rng)
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_gradient_uses_same_mask(self):
        rng = np.random.default_rng(7)
        tape = T.Tape()
        x = tape.leaf(np.ones(50), name="x")
        y = T.dropout(x, 0.5, training=True, rng=rng)
        grads = tape.backward(T.reduce_sum(y))
        mask = (y.data != 0.0).astype(float)
        np.testing.assert_array_equal(grads["x"], mask * 2.0)


class TestBackward:
    def test_grad_of_sum_is_ones(self):
        tape = T.Tape()
        x = tape.leaf([1.0, 2.0, 3.0], name="x")
        grads = tape.backward(T.reduce_sum(x))
        np.testing.assert_array_equal(grads["x"], [1.0, 1.0, 1.0])

    def test_unreachable_leaf_gets_zeros_not_absence(self):
        tape = T.Tape()
        x = tape.leaf([1.0, 2.0], name="x")
        unused = tape.leaf([[5.0]], name="unused")
        grads = tape.backward(T.reduce_sum(T.mul(x, x)))
        assert "unused" in grads
        np.testing.assert_array_equal(grads["unused"], [[0.0]])
        assert unused.grad is not None

    def test_double_backward_is_an_error(self):
        tape = T.Tape()
        x = tape.leaf([1.0], name="x")
        loss = T.reduce_sum(x)
        tape.backward(loss)
        with pytest.raises(ConfigError):
            tape.backward(loss)

    def test_non_scalar_loss_is_shape_error(self):
        tape = T.Tape()
        x = tape.leaf([1.0, 2.0], name="x")
        with pytest.raises(ShapeError):
            tape.backward(T.mul(x, x))

    def test_shared_node_accumulates(self):
        # the same row looked up twice doubles the row gradient
        tape = T.Tape()
        table = tape.leaf(np.eye(3), name="t")
        a = T.embedding_lookup(table, 1)
        b = T.embedding_lookup(table, 1)
        grads = tape.backward(T.reduce_sum(a + b))
        np.testing.assert_array_equal(grads["t"][1], [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(grads["t"][0], [0.0, 0.0, 0.0])

    def test_records_are_topologically_ordered(self):
        tape = T.Tape()
        x = tape.leaf([1.0, 2.0], name="x")
        y = T.mul(x, x)
        _ = T.reduce_sum(T.add(y, x))
        seen = set(t.node_id for _, t in tape._leaves)
        for out_id, pulls in tape.records:
            for in_id, _ in pulls:
                assert in_id in seen or in_id < out_id
            seen.add(out_id)

    def test_construction_order_independence(self):
        # same graph, two different interleavings of branch construction
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(2, 2))

        def version_a():
            tape = T.Tape()
            x = tape.leaf(x0, name="x")
            left = T.tanh(x)
            right = T.sigmoid(x)
            loss = T.reduce_sum(T.mul(left, right))
            return tape.backward(loss)["x"]

        def version_b():
            tape = T.Tape()
            x = tape.leaf(x0, name="x")
            right = T.sigmoid(x)
            left = T.tanh(x)
            loss = T.reduce_sum(T.mul(left, right))
            return tape.backward(loss)["x"]

        np.testing.assert_array_equal(version_a(), version_b())

    def test_off_tape_ops_are_not_recorded(self):
        out = T.softmax(T.Tensor([1.0, 2.0]))
        assert out.tape is None and out.node_id is None


class TestGradientsVsFiniteDifferences:
    """Every differentiable op agrees with central differences (rel err < 1e-6)."""

    CASES = {
        "matmul": lambda x: T.reduce_sum(T.matmul(x, T.Tensor(np.arange(12.0).reshape(4, 3) / 7.0))),
        "matmul_rhs": lambda x: T.reduce_sum(T.matmul(T.Tensor(np.arange(8.0).reshape(4, 2) / 5.0), x)),
        "softmax": lambda x: T.reduce_sum(T.mul(T.softmax(x, axis=-1), T.Tensor(np.arange(x.data.size, dtype=float).reshape(x.shape)))),
        "log_softmax": lambda x: T.reduce_sum(T.mul(T.log_softmax(x, axis=-1), T.Tensor(np.arange(x.data.size, dtype=float).reshape(x.shape) / 3.0))),
        "sigmoid": lambda x: T.reduce_sum(T.sigmoid(x)),
        "tanh": lambda x: T.reduce_sum(T.mul(T.tanh(x), T.tanh(x))),
        "exp": lambda x: T.reduce_sum(T.exp(x)),
        "mul_broadcast": lambda x: T.reduce_sum(T.mul(x, T.Tensor(np.linspace(0.5, 1.5, x.data.shape[-1])))),
        "add_broadcast": lambda x: T.reduce_sum(T.mul(T.add(x, T.Tensor(np.linspace(-1, 1, x.data.shape[-1]))), x)),
        "sub": lambda x: T.reduce_sum(T.mul(T.sub(1.0, x), T.sub(1.0, x))),
        "reduce_mean": lambda x: T.reduce_sum(T.mul(T.reduce_mean(x, axis=0, keepdims=True), T.Tensor(np.arange(x.data.shape[1], dtype=float)))),
        "reduce_sum_axis": lambda x: T.reduce_sum(T.mul(T.reduce_sum(x, axis=1), T.reduce_sum(x, axis=1))),
        "concat": lambda x: T.reduce_sum(T.mul(T.concat([x, x], axis=0), T.Tensor(np.arange(2 * x.data.size, dtype=float).reshape((2 * x.data.shape[0],) + x.data.shape[1:])))),
        "transpose": lambda x: T.reduce_sum(T.mul(T.transpose(x), T.Tensor(np.arange(x.data.size, dtype=float).reshape(x.data.shape[::-1])))),
        "pick": lambda x: T.pick(T.mul(x, x), (1, 2)),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_op_gradient(self, name):
        build = self.CASES[name]
        rng = np.random.default_rng(hash(name) % 2**32)
        check = scalar_fd(build)
        worst = max(check(rng.normal(size=(2, 4))) for _ in range(5))
        assert worst < 1e-6, f"{name}: rel err {worst}"

    def test_softmax_1x5_case(self):
        check = scalar_fd(self.CASES["softmax"])
        assert check(np.random.default_rng(9).normal(size=(1, 5))) < 1e-6

    def test_matmul_grad_structure(self):
        # d sum(a @ b) / da = column-broadcast of b's row sums
        rng = np.random.default_rng(11)
        b0 = rng.normal(size=(4, 3))
        tape = T.Tape()
        a = tape.leaf(rng.normal(size=(2, 4)), name="a")
        grads = tape.backward(T.reduce_sum(T.matmul(a, T.Tensor(b0))))
        np.testing.assert_allclose(grads["a"], np.tile(b0.sum(axis=1), (2, 1)), rtol=1e-12)

    def test_embedding_gradient_is_one_hot_row_mask(self):
        def build(p):
            tape = T.Tape()
            table = tape.leaf(p["table"], name="table")
            return T.reduce_sum(T.embedding_lookup(table, 2))

        params = {"table": np.random.default_rng(5).normal(size=(4, 3))}
        assert T.finite_diff_check(build, params) < 1e-6

    def test_hundred_random_trials_across_ops(self):
        rng = np.random.default_rng(123)
        names = sorted(self.CASES)
        trials = 0
        while trials < 100:
            name = names[trials % len(names)]
            check = scalar_fd(self.CASES[name])
            assert check(rng.normal(size=(2, 4))) < 1e-6, name
            trials += 1


class TestFiniteDiffOracle:
    def test_quadratic_exactness(self):
        def build(p):
            tape = T.Tape()
            x = tape.leaf(p["theta"], name="theta")
            return T.pick(T.mul(x, x), (0,))

        params = {"theta": np.array([3.0])}
        # analytic and numeric both equal 6 to ~1e-8
        rel = T.finite_diff_check(build, params)
        assert rel < 1e-8

    def test_constant_function_scores_zero(self):
        def build(p):
            tape = T.Tape()
            tape.leaf(p["theta"], name="theta")
            return T.Tensor(0.0) + tape.leaf(np.zeros(1), name="zero") * 0.0

        # gradient of a constant is zero on both sides -> rel err exactly 0
        params = {"theta": np.array([1.0, -2.0])}

        def build2(p):
            tape = T.Tape()
            x = tape.leaf(p["theta"], name="theta")
            return T.reduce_sum(T.mul(x, T.Tensor(np.zeros_like(p["theta"]))))

        assert T.finite_diff_check(build2, params) == 0.0

    def test_restores_parameters_in_place(self):
        params = {"theta": np.array([3.0])}
        before = params["theta"].copy()

        def build(p):
            tape = T.Tape()
            x = tape.leaf(p["theta"], name="theta")
            return T.pick(T.mul(x, x), (0,))

        T.finite_diff_check(build, params)
        np.testing.assert_array_equal(params["theta"], before)
