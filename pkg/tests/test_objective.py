import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from styloforge.errors import DegenerateBatch
from styloforge.model import ModelParams, init_params, project
from styloforge.objective import batch_loss, param_gradients, supcon_loss_and_grad
from styloforge.tokenizer import TokenSeq


def unit(rng, *shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def reference_loss(z, tau, include_positive=False):
    """Literal double loop over anchors."""
    n = z.shape[0]
    total = 0.0
    for i in range(n):
        for k in range(2):
            a = z[i, k]
            pos = math.exp(a @ z[i, 1 - k] / tau)
            den = sum(math.exp(a @ z[j, l] / tau) for j in range(n) if j != i for l in range(2))
            if include_positive:
                den += pos
            total += -math.log(pos / den)
    return total / (2 * n)


def rel_err(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


class TestLossValues:
    def test_identical(self):
        z = np.tile(np.array([1.0, 0.0, 0.0]), (2, 2, 1))
        loss, _ = supcon_loss_and_grad(z, 0.1)
        assert abs(loss - math.log(2)) <= 1e-9

    def test_orthogonal_authors(self):
        z = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
        loss, _ = supcon_loss_and_grad(z, 0.1)
        assert abs(loss - (-(10 - math.log(2)))) <= 1e-9

    def test_identical_with_positive_in_denominator(self):
        z = np.tile(np.array([0.0, 1.0]), (2, 2, 1))
        assert abs(supcon_loss_and_grad(z, 0.1, include_positive=True)[0] - math.log(3)) <= 1e-12

    @pytest.mark.parametrize("n", [2, 3, 5])
    @pytest.mark.parametrize("include_positive", [False, True])
    def test_matches_double_loop(self, n, include_positive):
        rng = np.random.default_rng(n)
        z = unit(rng, n, 2, 4)
        assert supcon_loss_and_grad(z, 0.2, include_positive)[0] == pytest.approx(reference_loss(z, 0.2, include_positive), abs=1e-12)

    def test_stable_at_low_temperature(self):
        z = np.tile(np.array([1.0, 0.0]), (4, 2, 1))
        loss, dz = supcon_loss_and_grad(z, 0.01)
        assert np.isfinite(loss) and np.all(np.isfinite(dz))
        assert loss == pytest.approx(math.log(6), abs=1e-9)

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatch):
            supcon_loss_and_grad(np.ones((1, 2, 3)) / math.sqrt(3))

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            supcon_loss_and_grad(np.ones((2, 3, 3)))


def test_dz_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for trial in range(20):
        n, o = [2, 3, 4][trial % 3], [3, 8][trial % 2]
        z = unit(rng, n, 2, o)
        _, dz = supcon_loss_and_grad(z, 0.1)
        num = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            num[idx] = (supcon_loss_and_grad(zp, 0.1)[0] - supcon_loss_and_grad(zm, 0.1)[0]) / (2 * h)
        assert rel_err(dz, num) <= 1e-4


def random_batch(rng, V, n, max_len=6):
    return [
        tuple(TokenSeq(rng.integers(0, V, size=rng.integers(1, max_len + 1))) for _ in range(2)) for _ in range(n)
    ]


def numeric_param_grads(params, batch, tau, include_positive=False, h=1e-6):
    out = {}
    for name, arr in params.arrays().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = batch_loss(params, batch, tau, include_positive)
            arr[idx] = old - h
            lm = batch_loss(params, batch, tau, include_positive)
            arr[idx] = old
            g[idx] = (lp - lm) / (2 * h)
        out[name] = g
    return out


@pytest.mark.parametrize("include_positive", [False, True])
def test_param_gradients_finite_differences(include_positive):
    rng = np.random.default_rng(1)
    for trial in range(10):
        params = init_params(12, 4, 3, seed=trial)
        params.b[:] = rng.normal(scale=0.1, size=3)
        batch = random_batch(rng, 12, 2)
        loss, grads = param_gradients(params, batch, 0.1, include_positive)
        num = numeric_param_grads(params, batch, 0.1, include_positive)
        assert loss == batch_loss(params, batch, 0.1, include_positive)
        for name, g in grads.arrays().items():
            assert rel_err(g, num[name]) <= 1e-4, name


class TestParamGradients:
    def test_absent_rows_are_zero(self):
        params = init_params(30, 5, 4, 0)
        batch = [(TokenSeq(np.array([3, 4])), TokenSeq(np.array([5]))), (TokenSeq(np.array([6, 6, 7])), TokenSeq(np.array([3])))]
        _, g = param_gradients(params, batch, 0.1)
        absent = np.setdiff1d(np.arange(30), [3, 4, 5, 6, 7])
        assert np.all(g.dE[absent] == 0.0)
        assert np.any(g.dE[[3, 4, 5, 6, 7]] != 0.0)

    def test_duplicated_batch(self):
        rng = np.random.default_rng(3)
        params = init_params(15, 4, 3, 0)
        batch = random_batch(rng, 15, 3)
        loss, g = param_gradients(params, batch + batch, 0.1)
        assert np.isfinite(loss)
        for name, arr in g.arrays().items():
            assert arr.shape == params.arrays()[name].shape and np.all(np.isfinite(arr))

    def test_too_small(self):
        with pytest.raises(DegenerateBatch):
            param_gradients(init_params(5, 2, 2), [(TokenSeq(np.array([1])), TokenSeq(np.array([2])))])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**32 - 1), st.data())
def test_loss_symmetries(n, o, seed, data):
    rng = np.random.default_rng(seed)
    z = unit(rng, n, 2, o)
    base = supcon_loss_and_grad(z, 0.1)[0]

    perm = rng.permutation(n)
    assert abs(supcon_loss_and_grad(z[perm], 0.1)[0] - base) <= 1e-9 * max(1.0, abs(base))

    flip = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    swapped = z.copy()
    swapped[flip] = z[flip][:, ::-1]
    assert abs(supcon_loss_and_grad(swapped, 0.1)[0] - base) <= 1e-12 * max(1.0, abs(base))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-20, 20), st.floats(0.01, 100))
def test_scale_invariance_before_normalization(seed, power, c):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((6, 4))
    params = ModelParams(np.zeros((1, 4)), rng.standard_normal((3, 4)), rng.standard_normal(3))
    scaled = ModelParams(params.E, params.W * 2.0**power, params.b * 2.0**power)
    z, _ = project(params, h)
    zs, _ = project(scaled, h)
    # powers of two scale exactly
    assert supcon_loss_and_grad(z.reshape(3, 2, 3))[0] == supcon_loss_and_grad(zs.reshape(3, 2, 3))[0]
    zc, _ = project(ModelParams(params.E, params.W * c, params.b * c), h)
    assert supcon_loss_and_grad(zc.reshape(3, 2, 3))[0] == pytest.approx(supcon_loss_and_grad(z.reshape(3, 2, 3))[0], abs=1e-12)
