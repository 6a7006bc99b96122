import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fftune.lifted import (
    BlockImpulseOperator,
    ShapeError,
    Signal,
    SignMatrix,
    adjoint_apply,
    apply,
    block_transpose,
    inner,
    kron_apply,
    time_reverse,
)
from oracles import dense_kron, dense_operator, dense_reversal, random_operator


def test_signal_is_channel_major():
    s = Signal.from_stacked([1, 2, 3, 4, 5, 6], n_channels=2)
    np.testing.assert_array_equal(s.channel(0), [1, 2, 3])
    np.testing.assert_array_equal(s.channel(1), [4, 5, 6])
    np.testing.assert_array_equal(s.values, [1, 2, 3, 4, 5, 6])
    assert (s.n_channels, s.n_samples) == (2, 3)


@pytest.mark.parametrize("values, channels", [([1, 2, 3], 2), ([], 1), ([1.0], 0)])
def test_signal_rejects_bad_lengths(values, channels):
    with pytest.raises(ShapeError):
        Signal.from_stacked(values, channels)


def test_signal_is_immutable():
    s = Signal(np.ones((2, 4)))
    with pytest.raises(ValueError):
        s.data[0, 0] = 3.0


def test_identity_operator():
    h = np.zeros((2, 2, 8))
    h[0, 0, 0] = h[1, 1, 0] = 1.0
    u = Signal(np.random.default_rng(0).standard_normal((2, 8)))
    np.testing.assert_array_equal(apply(BlockImpulseOperator(h), u).data, u.data)


def test_convolution_by_hand():
    op = BlockImpulseOperator(np.array([[[1.0, 1.0, 0.0, 0.0]]]))
    y = apply(op, Signal([1.0, 0.0, 0.0, 0.0]))
    np.testing.assert_array_equal(y.data, [[1, 1, 0, 0]])


def test_apply_matches_dense():
    rng = np.random.default_rng(1)
    op = random_operator(rng, 2, 2, 32)
    u = Signal(rng.standard_normal((2, 32)))
    dense = dense_operator(op) @ u.values
    np.testing.assert_allclose(apply(op, u).values, dense, rtol=1e-12, atol=1e-12 * np.abs(dense).max())


def test_apply_shape_mismatch():
    op = random_operator(np.random.default_rng(2), 2, 3, 16)
    with pytest.raises(ShapeError):
        apply(op, Signal(np.zeros((2, 16))))
    with pytest.raises(ShapeError):
        apply(op, Signal(np.zeros((3, 15))))


def test_time_reverse_examples():
    np.testing.assert_array_equal(time_reverse(Signal([1.0, 2.0, 3.0])).data, [[3, 2, 1]])
    two = time_reverse(Signal([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(two.data, [[2, 1], [4, 3]])


def test_time_reverse_matches_dense_and_is_involutory():
    x = Signal(np.random.default_rng(3).standard_normal((3, 10)))
    np.testing.assert_array_equal(time_reverse(x).values, dense_reversal(3, 10) @ x.values)
    np.testing.assert_array_equal(time_reverse(time_reverse(x)).data, x.data)


def test_adjoint_identity_2x2():
    rng = np.random.default_rng(4)
    op = random_operator(rng, 2, 2, 64)
    f = Signal(rng.standard_normal((2, 64)))
    g = Signal(rng.standard_normal((2, 64)))
    lhs, rhs = inner(f, apply(op, g)), inner(adjoint_apply(op, f), g)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_siso_adjoint_is_reversed_convolution():
    rng = np.random.default_rng(5)
    op = random_operator(rng, 1, 1, 40)
    v = Signal(rng.standard_normal(40))
    np.testing.assert_array_equal(adjoint_apply(op, v).data, time_reverse(apply(op, time_reverse(v))).data)


def test_adjoint_matches_dense_transpose_3x2():
    rng = np.random.default_rng(6)
    op = random_operator(rng, 3, 2, 24)
    v = Signal(rng.standard_normal((3, 24)))
    dense = dense_operator(op).T @ v.values
    np.testing.assert_allclose(adjoint_apply(op, v).values, dense, rtol=1e-12, atol=1e-12 * np.abs(dense).max())


def test_block_transpose_examples():
    rng = np.random.default_rng(7)
    h = rng.standard_normal((2, 2, 8))
    h[1, 0] = h[0, 1]
    sym = BlockImpulseOperator(h)
    np.testing.assert_array_equal(block_transpose(sym).impulses, sym.impulses)
    one = random_operator(rng, 1, 1, 8)
    np.testing.assert_array_equal(block_transpose(one).impulses, one.impulses)
    op = random_operator(rng, 3, 2, 8)
    bt = block_transpose(op)
    assert (bt.n_outputs, bt.n_inputs) == (2, 3)
    np.testing.assert_array_equal(bt.block(1, 2), op.block(2, 1))
    np.testing.assert_array_equal(block_transpose(bt).impulses, op.impulses)


def test_kron_apply_examples():
    x = Signal([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(kron_apply(SignMatrix(np.array([[1.0, -1.0]])), x).data, [[-2, -2]])
    y = Signal([5.0, 6.0, 7.0])
    np.testing.assert_array_equal(kron_apply(SignMatrix(np.ones((1, 1))), y).data, y.data)
    with pytest.raises(ShapeError):
        kron_apply(SignMatrix(np.ones((2, 3))), x)


def test_kron_apply_matches_dense_kron():
    a = SignMatrix.draw(3, 2, seed=8)
    x = Signal(np.random.default_rng(8).standard_normal((2, 16)))
    np.testing.assert_array_equal(kron_apply(a, x).values, dense_kron(a.entries, 16) @ x.values)


def test_sign_matrix_draw_is_reproducible_and_balanced():
    a = SignMatrix.draw(2, 3, seed=11)
    b = SignMatrix.draw(2, 3, seed=11)
    np.testing.assert_array_equal(a.entries, b.entries)
    assert a.seed == 11
    big = SignMatrix.draw(200, 200, seed=12).entries
    assert set(np.unique(big)) == {-1.0, 1.0}
    assert abs(big.mean()) < 4 / 200  # 4 sigma of a fair +-1 mean over 40000 draws


def test_sign_matrix_rejects_other_values():
    with pytest.raises(ValueError):
        SignMatrix(np.array([[1.0, 0.0]]))


@st.composite
def triples(draw):
    n_i = draw(st.integers(1, 3))
    n_o = draw(st.integers(1, 3))
    n = draw(st.sampled_from([1, 5, 16]))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return random_operator(rng, n_o, n_i, n), Signal(rng.standard_normal((n_o, n))), Signal(rng.standard_normal((n_i, n)))


@settings(max_examples=200, deadline=None)
@given(triples())
def test_adjoint_identity_property(case):
    op, f, g = case
    jg = apply(op, g)
    assert abs(inner(f, jg) - inner(adjoint_apply(op, f), g)) <= 1e-10 * (f.norm() * jg.norm() + 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 15), st.integers(0, 2**32 - 1))
def test_causality(n_o, n_i, shift, seed):
    rng = np.random.default_rng(seed)
    op = random_operator(rng, n_o, n_i, 16)
    u = rng.standard_normal((n_i, 16))
    u[:, :shift] = 0.0
    y = apply(op, Signal(u))
    assert np.all(y.data[:, :shift] == 0.0)
