import numpy as np
import pytest

from gpi import autodiff as ad
from conftest import central_diff, rel_err


def test_half_squared_norm_gradient_is_identity(rng):
    x = rng.normal(size=7)
    val, (g,) = ad.value_and_grad(lambda v: ad.square(v).sum() * 0.5, [x])
    assert val == pytest.approx(0.5 * x @ x)
    np.testing.assert_array_equal(g, x)


def test_clip_outside_range_has_zero_gradient():
    _, (g,) = ad.value_and_grad(lambda v: ad.clip(v, 0.8, 1.2).sum(), [np.array([1.5, 0.5, 1.0])])
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_minimum_picks_active_branch():
    a = np.array([1.0, 3.0])
    b = np.array([2.0, 2.0])
    _, (ga, gb) = ad.value_and_grad(lambda x, y: ad.minimum(x, y).sum(), [a, b])
    np.testing.assert_array_equal(ga, [1.0, 0.0])
    np.testing.assert_array_equal(gb, [0.0, 1.0])


def test_mixed_ops_match_finite_differences(rng):
    x = rng.normal(size=(5, 3))
    W = rng.normal(size=(3, 4))
    b = rng.normal(size=4)
    c = rng.uniform(0.5, 1.5, size=(5, 4))

    def loss(x_, W_, b_):
        h = ad.tanh(ad.affine(x_, W_, b_))
        r = ad.exp(h * 0.5 - 0.1)
        return (ad.minimum(r * c, ad.clip(r, 0.9, 1.1) * c) + ad.log(ad.square(h) + 1.0)).mean()

    def numeric(arr_index):
        def f(v):
            args = [x, W, b]
            args[arr_index] = v
            return ad.value_and_grad(loss, args)[0]
        return f

    _, grads = ad.value_and_grad(loss, [x, W, b])
    for i, arr in enumerate([x, W, b]):
        assert rel_err(grads[i], central_diff(numeric(i), arr)) <= 1e-4


def test_broadcast_against_batch(rng):
    x = rng.normal(size=(6, 2))
    s = rng.normal(size=2)
    _, (g,) = ad.value_and_grad(lambda v: (ad.as_var(x) * v).sum(), [s])
    np.testing.assert_allclose(g, x.sum(axis=0))


@pytest.mark.parametrize("build", [
    lambda v: np.sin(v),
    lambda v: 1.0 / v,
    lambda v: v ** 3,
    lambda v: v @ np.ones(3),
    lambda v: np.asarray(v),
])
def test_unsupported_primitives_fail_at_construction(build):
    v = ad.Var(np.ones(3))
    with pytest.raises(ad.UnsupportedOperation):
        build(v)


def test_ndarray_on_the_left_dispatches_to_engine(rng):
    x = rng.normal(size=4)
    a = rng.normal(size=4)
    _, (g,) = ad.value_and_grad(lambda v: (a * v + a - v).sum(), [x])
    np.testing.assert_allclose(g, a - 1.0)
