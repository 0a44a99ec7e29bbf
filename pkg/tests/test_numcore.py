import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from secdepth.numcore import (
    DomainError,
    NonFiniteError,
    ShapeError,
    TapeError,
    Tensor,
    backward,
    concat,
    conv2d,
    elementwise,
    gradcheck,
    no_grad,
    pad,
    reduce,
    sigmoid,
    upsample_nearest,
)


def test_add_componentwise():
    assert elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).data.tolist() == [4.0, 6.0]


def test_max_with_constant_is_hinge():
    out = elementwise("max", Tensor([-0.3, 0.2]), 0.0)
    assert out.data.tolist() == [0.0, 0.2]


def test_exp_identity_case():
    assert elementwise("exp", Tensor([0.0])).data.tolist() == [1.0]


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        elementwise("add", Tensor(np.ones(3)), Tensor(np.ones(2)))


def test_log_reports_offending_index():
    with pytest.raises(DomainError, match=r"\(1,\)"):
        elementwise("log", Tensor([1.0, -2.0, 3.0]))


def test_div_by_zero_reports_index():
    with pytest.raises(DomainError, match=r"\(0, 1\)"):
        elementwise("div", Tensor(np.ones((2, 2))), Tensor([[1.0, 0.0], [1.0, 1.0]]))


def test_non_finite_tensor_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


@pytest.mark.parametrize(
    "kind,data,axes,expected",
    [
        ("variance", [1.0, 1.0, 1.0], None, 0.0),
        ("variance", [0.0, 2.0], None, 1.0),
        ("sum", [[1.0, 2.0], [3.0, 4.0]], 0, [4.0, 6.0]),
        ("mean", [[1.0, 2.0], [3.0, 4.0]], 1, [1.5, 3.5]),
    ],
)
def test_reductions(kind, data, axes, expected):
    np.testing.assert_allclose(reduce(kind, Tensor(data), axes).data, expected)


def test_bad_axis():
    with pytest.raises(ShapeError):
        reduce("sum", Tensor(np.ones(3)), 2)


def test_conv_identity_kernel(rng):
    img = rng.uniform(0, 1, (5, 6, 1))
    k = np.zeros((3, 3, 1, 1))
    k[1, 1] = 1.0
    np.testing.assert_array_equal(conv2d(img, k, padding=1).data, img)


def test_conv_ones_kernel_direct_sum():
    out = conv2d(np.array([[1.0, 2.0], [3.0, 4.0]])[..., None], np.ones((2, 2, 1, 1)))
    assert out.data.reshape(-1).tolist() == [10.0]


def test_conv_zero_kernel(rng):
    out = conv2d(rng.uniform(0, 1, (4, 4, 2)), np.zeros((3, 3, 2, 3)), padding=1, mode="replicate")
    assert not out.data.any()


def test_conv_rejects_bad_stride():
    with pytest.raises(ValueError):
        conv2d(np.ones((4, 4, 1)), np.ones((3, 3, 1, 1)), stride=0)


def test_conv_against_loop_oracle(rng):
    x = rng.uniform(0, 1, (7, 6, 2))
    k = rng.uniform(-1, 1, (3, 3, 2, 3))
    out = conv2d(x, k, stride=2, padding=1).data
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            patch = xp[2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
            np.testing.assert_allclose(out[i, j], np.einsum("abc,abcd->d", patch, k))


def test_backward_sum_gives_ones():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    backward(reduce("sum", x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square_rule():
    x = Tensor([3.0], requires_grad=True)
    backward(reduce("sum", x * x))
    assert x.grad.tolist() == [6.0]


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_tape_consumed_once():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = reduce("sum", x * 2.0)
    backward(loss)
    with pytest.raises(TapeError):
        backward(loss)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_gradcheck_sum_of_squares():
    assert gradcheck(lambda t: reduce("sum", t * t), np.array([1.0, 2.0, 3.0])) < 1e-8


def test_gradcheck_constant():
    assert gradcheck(lambda t: Tensor(3.0), np.array([1.0, 2.0])) == 0.0


def test_gradcheck_non_finite():
    with pytest.raises(NonFiniteError):
        gradcheck(lambda t: Tensor(np.inf, check=False), np.ones(2))


PRIMITIVES = {
    "add": lambda t, c: reduce("sum", t + c),
    "sub": lambda t, c: reduce("sum", (c - t) * t),
    "mul": lambda t, c: reduce("sum", t * c * t),
    "div": lambda t, c: reduce("sum", c / t),
    "exp": lambda t, c: reduce("sum", elementwise("exp", t)),
    "log": lambda t, c: reduce("sum", elementwise("log", t) * c),
    "abs": lambda t, c: reduce("sum", elementwise("abs", t - 0.05) * c),
    "power": lambda t, c: reduce("sum", elementwise("power", t, 2.5)),
    "sigmoid": lambda t, c: reduce("sum", sigmoid(t) * c),
    "variance": lambda t, c: reduce("variance", t * c, (0, 1)).sum(),
    "mean": lambda t, c: reduce("mean", t * t, 1).sum(),
    "pad_rep": lambda t, c: reduce("sum", pad(t, 1, "replicate") ** 2),
    "pad_zero": lambda t, c: reduce("sum", pad(t, 2, "zero") ** 2),
    "upsample": lambda t, c: reduce("sum", upsample_nearest(t) ** 3),
    "concat": lambda t, c: reduce("sum", concat([t, t * c], -1) ** 2),
    "getitem": lambda t, c: reduce("sum", t[1:, ::2] ** 2),
    "conv": lambda t, c: reduce("sum", conv2d(t, np.ones((3, 3, 2, 2)) * 0.1, stride=2, padding=1, mode="replicate") ** 2),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    x = rng.uniform(0.1, 0.9, (4, 4, 2))
    c = rng.uniform(0.1, 0.9, (4, 4, 2))
    assert gradcheck(lambda t: PRIMITIVES[name](t, Tensor(c)), x) < 1e-6


def test_conv_kernel_gradient(rng):
    x = rng.uniform(0.1, 0.9, (6, 6, 2))
    k = rng.uniform(-0.5, 0.5, (3, 3, 2, 3))
    assert gradcheck(lambda kk: reduce("sum", conv2d(Tensor(x), kk, padding=1) ** 2), k) < 1e-6


unit = arrays(np.float64, (3, 4), elements=st.floats(-1, 1))


@given(unit, unit)
@settings(max_examples=50, deadline=None)
def test_sum_distributes_over_add(a, b):
    lhs = reduce("sum", Tensor(a) + Tensor(b)).data
    rhs = reduce("sum", Tensor(a)).data + reduce("sum", Tensor(b)).data
    assert abs(lhs - rhs) < 1e-12


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_seeded_forward_is_bit_identical(seed):
    def run():
        r = np.random.default_rng(seed)
        x = Tensor(r.uniform(0, 1, (6, 6, 2)))
        k = Tensor(r.uniform(-1, 1, (3, 3, 2, 2)))
        return sigmoid(conv2d(x, k, padding=1)).data

    assert np.array_equal(run(), run())
