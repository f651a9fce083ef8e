import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from msntucf import ops
from msntucf.autodiff import Node, Parameter, Tape
from msntucf.errors import ConfigError

RNG = np.random.default_rng(12345)


def check_node_grad(build, x0, tol=1e-6):
    """Gradient of sum(w ⊙ op(x)) w.r.t. the node input x, vs. central FD."""
    x0 = np.asarray(x0, dtype=np.float64)
    probe = None

    def forward(tape):
        nonlocal probe
        x = Node(x0)
        out = build(tape, x)
        if probe is None:
            probe = RNG.standard_normal(out.value.shape)
        return x, ops.dot(tape, out, Node(probe))

    tape = Tape()
    x, loss = forward(tape)
    tape.backward(loss)
    numeric = numeric_grad(lambda: float(forward(None)[1].value), x0)
    err = rel_error(x.grad, numeric)
    assert err < tol, f"node grad rel error {err}"


def check_param_grad(build, p: Parameter, tol=1e-6):
    """Gradient of sum(w ⊙ op(p, ...)) w.r.t. a Parameter, vs. central FD."""
    probe = None

    def forward(tape):
        nonlocal probe
        out = build(tape)
        if probe is None:
            probe = RNG.standard_normal(out.value.shape)
        return ops.dot(tape, out, Node(probe))

    tape = Tape()
    loss = forward(tape)
    p.zero_grad()  # earlier checks may have back-propagated into p
    tape.backward(loss)
    numeric = numeric_grad(lambda: float(forward(None).value), p.value)
    err = rel_error(p.grad, numeric)
    assert err < tol, f"param grad rel error {err}"


class TestEmbeddingLookup:
    def test_selects_row(self):
        table = Parameter(np.eye(3))
        out = ops.embedding_lookup(None, table, 1)
        assert np.array_equal(out.value, np.array([0.0, 1.0, 0.0]))

    def test_scatter_rule(self):
        table = Parameter(RNG.standard_normal((4, 3)))
        tape = Tape()
        out = ops.embedding_lookup(tape, table, 2)
        tape.backward(ops.sum_all(tape, out))
        expect = np.zeros((4, 3))
        expect[2] = 1.0
        assert np.array_equal(table.grad, expect)

    def test_fd(self):
        table = Parameter(RNG.standard_normal((4, 3)))
        check_param_grad(lambda tape: ops.embedding_lookup(tape, table, 1), table)

    def test_out_of_range(self):
        table = Parameter(np.zeros((4, 3)))
        with pytest.raises(IndexError):
            ops.embedding_lookup(None, table, 4)
        with pytest.raises(IndexError):
            ops.embedding_lookup(None, table, -1)


def outer3_loop_oracle(a, b, c):
    out = np.empty((len(a), len(b), len(c)))
    for p in range(len(a)):
        for q in range(len(b)):
            for r in range(len(c)):
                out[p, q, r] = (a[p] * b[q]) * c[r]
    return out


class TestOuter3:
    def test_basis_vectors(self):
        a, b, c = np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0])
        out = ops.outer3(None, Node(a), Node(b), Node(c)).value
        expect = np.zeros((2, 2, 2))
        expect[0, 1, 0] = 1.0
        assert np.array_equal(out, expect)

    def test_zero_factor(self):
        out = ops.outer3(None, Node(np.zeros(3)), Node(RNG.standard_normal(2)),
                         Node(RNG.standard_normal(4))).value
        assert np.all(out == 0)

    def test_matches_loop_exactly(self):
        a, b, c = RNG.standard_normal(3), RNG.standard_normal(2), RNG.standard_normal(4)
        out = ops.outer3(None, Node(a), Node(b), Node(c)).value
        assert np.array_equal(out, outer3_loop_oracle(a, b, c))

    def test_rejects_non_1d(self):
        with pytest.raises(ValueError):
            ops.outer3(None, Node(np.zeros((2, 2))), Node(np.zeros(2)), Node(np.zeros(2)))

    def test_fd_each_input(self):
        a, b, c = RNG.standard_normal(3), RNG.standard_normal(2), RNG.standard_normal(4)
        check_node_grad(lambda tape, x: ops.outer3(tape, x, Node(b), Node(c)), a)
        check_node_grad(lambda tape, x: ops.outer3(tape, Node(a), x, Node(c)), b)
        check_node_grad(lambda tape, x: ops.outer3(tape, Node(a), Node(b), x), c)


class TestFlatten:
    def test_row_major_order(self):
        t = np.empty((2, 2, 2))
        for p in range(2):
            for q in range(2):
                for r in range(2):
                    t[p, q, r] = 4 * p + 2 * q + r
        out = ops.flatten(None, Node(t)).value
        assert np.array_equal(out, np.arange(8.0))

    def test_flatten_reshape_roundtrip(self):
        t = RNG.standard_normal((3, 4, 5))
        flat = ops.flatten(None, Node(t)).value
        assert np.array_equal(flat.reshape(3, 4, 5), t)

    def test_slice_positions_for_5x5x5(self):
        t = RNG.standard_normal((5, 5, 5))
        flat = ops.flatten(None, Node(t)).value
        for p in range(5):
            assert np.array_equal(flat[25 * p:25 * p + 25], t[p].reshape(-1))

    def test_rejects_non_3d(self):
        with pytest.raises(ValueError):
            ops.flatten(None, Node(np.zeros((2, 2))))

    def test_fd(self):
        t = RNG.standard_normal((2, 3, 2))
        check_node_grad(lambda tape, x: ops.flatten(tape, x), t)


class TestLinearNobias:
    def test_identity(self):
        W = Parameter(np.eye(4))
        x = RNG.standard_normal(4)
        assert np.array_equal(ops.linear_nobias(None, W, Node(x)).value, x)

    def test_zero(self):
        W = Parameter(np.zeros((3, 4)))
        out = ops.linear_nobias(None, W, Node(RNG.standard_normal(4))).value
        assert np.all(out == 0)

    def test_fd_5x7(self):
        W = Parameter(RNG.standard_normal((5, 7)))
        xv = RNG.standard_normal(7)
        check_param_grad(lambda tape: ops.linear_nobias(tape, W, Node(xv)), W)
        check_node_grad(lambda tape, x: ops.linear_nobias(tape, W, x), xv)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ops.linear_nobias(None, Parameter(np.zeros((3, 4))), Node(np.zeros(5)))


class TestOuter2:
    def test_all_ones(self):
        one = Node(np.ones(3))
        assert np.array_equal(ops.outer2(None, one, Node(np.ones(3))).value, np.ones((3, 3)))

    def test_basis(self):
        out = ops.outer2(None, Node(np.array([1.0, 0.0])), Node(np.array([0.0, 1.0]))).value
        expect = np.zeros((2, 2))
        expect[0, 1] = 1.0
        assert np.array_equal(out, expect)

    def test_fd_len4(self):
        a, b = RNG.standard_normal(4), RNG.standard_normal(4)
        check_node_grad(lambda tape, x: ops.outer2(tape, x, Node(b)), a)
        check_node_grad(lambda tape, x: ops.outer2(tape, Node(a), x), b)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ops.outer2(None, Node(np.zeros(3)), Node(np.zeros(4)))


class TestSoftmaxRows:
    def test_constant_row(self):
        out = ops.softmax_rows(None, Node(np.full((1, 3), 4.2))).value
        assert np.allclose(out, 1.0 / 3.0, rtol=0, atol=1e-15)

    def test_large_values_stable(self):
        out = ops.softmax_rows(None, Node(np.array([[1000.0, 0.0]]))).value
        assert np.isfinite(out).all()
        assert out[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-12)

    def test_rows_sum_to_one(self):
        m = RNG.standard_normal((6, 6)) * 3
        out = ops.softmax_rows(None, Node(m)).value
        assert np.all(np.abs(out.sum(axis=1) - 1.0) < 1e-12)
        assert np.all(out > 0) and np.all(out < 1)

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            ops.softmax_rows(None, Node(np.zeros(3)))

    def test_fd(self):
        m = RNG.standard_normal((4, 4))
        check_node_grad(lambda tape, x: ops.softmax_rows(tape, x), m)


class TestLayerNorm:
    def test_constant_input_gives_zeros(self):
        # eps keeps the division finite; output is zero up to mean roundoff
        n = 6
        gain = Parameter(np.ones(n))
        bias = Parameter(np.zeros(n))
        out = ops.layer_norm(None, Node(np.full(n, 3.3)), gain, bias, 1e-5).value
        assert np.isfinite(out).all()
        assert np.allclose(out, 0.0, atol=1e-9)

    def test_output_moments(self):
        # inputs spread wide enough that eps barely dents the unit variance
        x = RNG.normal(0.0, 5.0, size=8)
        gain = Parameter(np.ones(8))
        bias = Parameter(np.zeros(8))
        out = ops.layer_norm(None, Node(x), gain, bias, 1e-5).value
        assert abs(out.mean()) < 1e-12
        assert abs(out.var() - 1.0) < 1e-6

    def test_fd_x_gain_bias(self):
        x = RNG.standard_normal(5)
        gain = Parameter(RNG.standard_normal(5))
        bias = Parameter(RNG.standard_normal(5))
        check_node_grad(lambda tape, n: ops.layer_norm(tape, n, gain, bias, 1e-5), x, tol=1e-5)
        check_param_grad(lambda tape: ops.layer_norm(tape, Node(x), gain, bias, 1e-5),
                         gain, tol=1e-5)
        check_param_grad(lambda tape: ops.layer_norm(tape, Node(x), gain, bias, 1e-5),
                         bias, tol=1e-5)

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            ops.layer_norm(None, Node(np.zeros(4)), Parameter(np.ones(3)),
                           Parameter(np.zeros(4)), 1e-5)


class TestSigmoid:
    def test_zero(self):
        assert ops.sigmoid(None, Node(np.array([0.0]))).value[0] == 0.5

    def test_symmetry(self):
        x = RNG.standard_normal(100) * 10
        s_pos = ops.sigmoid(None, Node(x)).value
        s_neg = ops.sigmoid(None, Node(-x)).value
        assert np.all(np.abs(s_neg - (1.0 - s_pos)) < 1e-15)

    def test_extremes_stable(self):
        out = ops.sigmoid(None, Node(np.array([-1000.0, 1000.0]))).value
        assert np.array_equal(out, np.array([0.0, 1.0]))

    def test_fd(self):
        check_node_grad(lambda tape, x: ops.sigmoid(tape, x), RNG.standard_normal(6), tol=1e-8)


class TestDropout:
    def test_rate_zero_identity(self):
        x = Node(RNG.standard_normal(10))
        rng = np.random.default_rng(0)
        assert ops.dropout(None, x, 0.0, True, rng) is x
        assert ops.dropout(None, x, 0.0, False, rng) is x

    def test_eval_identity(self):
        x = Node(RNG.standard_normal(10))
        assert ops.dropout(None, x, 0.7, False) is x

    def test_monte_carlo_fraction_and_mean(self):
        rng = np.random.default_rng(99)
        x = Node(np.random.default_rng(5).uniform(0.5, 1.5, 100_000))
        out = ops.dropout(None, x, 0.3, True, rng).value
        zero_frac = np.mean(out == 0.0)
        assert 0.29 <= zero_frac <= 0.31
        assert abs(out.mean() / x.value.mean() - 1.0) < 0.02

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigError):
            ops.dropout(None, Node(np.zeros(3)), 1.0, True, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            ops.dropout(None, Node(np.zeros(3)), -0.1, True, np.random.default_rng(0))

    def test_fd_with_frozen_mask(self):
        xv = RNG.standard_normal(12)

        def build(tape, x):
            return ops.dropout(tape, x, 0.4, True, np.random.default_rng(17))

        check_node_grad(build, xv)


class TestPlumbingOps:
    def test_add_and_scale_fd(self):
        a, b = RNG.standard_normal(5), RNG.standard_normal(5)
        check_node_grad(lambda tape, x: ops.add(tape, x, Node(b)), a)
        check_node_grad(lambda tape, x: ops.scale(tape, x, -2.5), a)

    def test_add_bias_fd(self):
        bias = Parameter(RNG.standard_normal(4))
        xv = RNG.standard_normal(4)
        check_param_grad(lambda tape: ops.add_bias(tape, Node(xv), bias), bias)

    def test_matvec_fd(self):
        m, v = RNG.standard_normal((4, 4)), RNG.standard_normal(4)
        check_node_grad(lambda tape, x: ops.matvec(tape, x, Node(v)), m)
        check_node_grad(lambda tape, x: ops.matvec(tape, Node(m), x), v)
        check_node_grad(lambda tape, x: ops.matvec(tape, x, Node(v), transpose=True), m)
        check_node_grad(lambda tape, x: ops.matvec(tape, Node(m), x, transpose=True), v)

    def test_matvec_transpose_value(self):
        m, v = RNG.standard_normal((3, 3)), RNG.standard_normal(3)
        assert np.array_equal(ops.matvec(None, Node(m), Node(v), transpose=True).value,
                              m.T @ v)

    def test_concat_fd(self):
        a, b = RNG.standard_normal(3), RNG.standard_normal(2)
        check_node_grad(lambda tape, x: ops.concat(tape, [x, Node(b)]), a)
        out = ops.concat(None, [Node(a), Node(b)]).value
        assert np.array_equal(out, np.concatenate([a, b]))

    def test_slice_segment_fd(self):
        xv = RNG.standard_normal(8)
        check_node_grad(lambda tape, x: ops.slice_segment(tape, x, 2, 6), xv)
        with pytest.raises(ValueError):
            ops.slice_segment(None, Node(xv), 5, 3)

    def test_dot_and_param_leaf_fd(self):
        p = Parameter(RNG.standard_normal((2, 3)))
        other = RNG.standard_normal((2, 3))
        check_param_grad(lambda tape: ops.dot(tape, ops.param_leaf(tape, p), Node(other)), p)

    def test_squared_error(self):
        tape = Tape()
        pred = Node(np.array([0.5]))
        loss = ops.squared_error(tape, pred, 1.0)
        assert float(loss.value) == pytest.approx(0.125, rel=0, abs=1e-16)
        tape.backward(loss)
        assert pred.grad[0] == pytest.approx(-0.5, rel=1e-15)  # d/dpred = pred - target

    def test_squared_error_fd(self):
        xv = np.array([0.3])

        def build(tape, x):
            return ops.squared_error(tape, x, 0.9)

        check_node_grad(build, xv, tol=1e-7)

    def test_add_n(self):
        tape = Tape()
        xs = [Node(np.asarray(float(v))) for v in (1.0, 2.0, 3.5)]
        total = ops.add_n(tape, xs)
        assert float(total.value) == 6.5
        tape.backward(total)
        for x in xs:
            assert float(x.grad) == 1.0
