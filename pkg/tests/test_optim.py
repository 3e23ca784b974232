import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from styloforge.errors import NonFiniteGradient, ShapeMismatch, StepOutOfRange
from styloforge.model import ModelParams, init_params
from styloforge.objective import ParamGrads
from styloforge.optim import AdamHyper, OptState, WsdSchedule, adamw_step, wsd_lr


def scalar_params(theta):
    # a 1x2 / 1x2 / 1 model; tests watch E[0, 0]
    return ModelParams(np.array([[theta, theta]]), np.array([[theta, theta]]), np.array([theta]))


def scalar_grads(g):
    return ParamGrads(np.array([[g, g]]), np.array([[g, g]]), np.array([g]))


class TestWsd:
    sched = WsdSchedule(1000, 100, 100, 1e-4)

    @pytest.mark.parametrize("t,lr", [(0, 0.0), (50, 5e-5), (100, 1e-4), (500, 1e-4), (900, 1e-4), (950, 5e-5), (1000, 0.0)])
    def test_values(self, t, lr):
        assert wsd_lr(self.sched, t) == pytest.approx(lr, abs=1e-18)

    @pytest.mark.parametrize("t", [-1, 1001])
    def test_out_of_range(self, t):
        with pytest.raises(StepOutOfRange):
            wsd_lr(self.sched, t)

    def test_no_warmup(self):
        assert wsd_lr(WsdSchedule(10, 0, 0, 0.5), 0) == 0.5

    def test_invalid(self):
        with pytest.raises(ValueError):
            WsdSchedule(10, 6, 5, 1e-3)

    def test_from_fractions(self):
        s = WsdSchedule.from_fractions(200, 1e-3)
        assert (s.warmup_steps, s.decay_steps) == (6, 20)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 500), st.floats(0, 0.5), st.floats(0, 0.5))
    def test_bounded_and_piecewise_monotone(self, T, wf, df):
        s = WsdSchedule.from_fractions(T, 1.0, wf, df)
        lrs = np.array([wsd_lr(s, t) for t in range(T + 1)])
        assert np.all((lrs >= 0) & (lrs <= 1.0))
        assert np.all(np.diff(lrs[: s.warmup_steps + 1]) >= 0)
        assert np.all(np.diff(lrs[T - s.decay_steps :]) <= 0)


def reference_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain Adam, written out independently."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        out.append(theta)
    return np.array(out)


class TestAdamW:
    def test_hand_example(self):
        p = scalar_params(1.0)
        state = OptState.zeros_like(p, AdamHyper(0.9, 0.999, 1e-8, 0.01))
        adamw_step(state, p, scalar_grads(0.5), 0.1)
        assert abs(p.E[0, 0] - 0.899) <= 1e-7
        assert abs(p.W[0, 0] - 0.899) <= 1e-7
        # the bias is not decayed: 1 - 0.1 * 0.5 / (0.5 + 1e-8)
        assert abs(p.b[0] - 0.9) <= 1e-7
        assert state.t == 1

    def test_matches_plain_adam_without_decay(self):
        rng = np.random.default_rng(0)
        shape_E, shape_W, shape_b = (5, 3), (2, 3), (2,)
        p = ModelParams(rng.normal(size=shape_E), rng.normal(size=shape_W), rng.normal(size=shape_b))
        start = p.copy()
        gs = [ParamGrads(rng.normal(size=shape_E), rng.normal(size=shape_W), rng.normal(size=shape_b)) for _ in range(100)]
        state = OptState.zeros_like(p, AdamHyper(weight_decay=0.0))
        for g in gs:
            adamw_step(state, p, g, 1e-2)
        for name in ("E", "W", "b"):
            start_arr = start.arrays()[name]
            for idx in np.ndindex(start_arr.shape):
                ref = reference_adam(start_arr[idx], [g.arrays()[name][idx] for g in gs], 1e-2)[-1]
                assert abs(p.arrays()[name][idx] - ref) <= 1e-12

    def test_pure_decay(self):
        p = scalar_params(2.0)
        state = OptState.zeros_like(p, AdamHyper(weight_decay=0.01))
        expected = 2.0
        for _ in range(10):
            adamw_step(state, p, scalar_grads(0.0), 0.1)
            expected *= 1 - 0.1 * 0.01
            assert p.E[0, 0] == expected
        assert p.b[0] == 2.0

    def test_lr_zero_is_bitwise_noop(self):
        p = init_params(6, 3, 2, 0)
        before = p.to_bytes(), p.E.tobytes(), p.W.tobytes(), p.b.tobytes()
        state = OptState.zeros_like(p)
        rng = np.random.default_rng(1)
        for _ in range(5):
            adamw_step(state, p, ParamGrads(rng.normal(size=(6, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)), 0.0)
        assert (p.to_bytes(), p.E.tobytes(), p.W.tobytes(), p.b.tobytes()) == before

    def test_shape_mismatch(self):
        p = init_params(6, 3, 2, 0)
        with pytest.raises(ShapeMismatch):
            adamw_step(OptState.zeros_like(p), p, ParamGrads(np.zeros((5, 3)), np.zeros((2, 3)), np.zeros(2)), 0.1)

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite(self, bad):
        p = init_params(6, 3, 2, 0)
        g = ParamGrads(np.zeros((6, 3)), np.zeros((2, 3)), np.array([0.0, bad]))
        state = OptState.zeros_like(p)
        with pytest.raises(NonFiniteGradient):
            adamw_step(state, p, g, 0.1)
        assert state.t == 0

    def test_negative_lr(self):
        p = init_params(6, 3, 2, 0)
        with pytest.raises(ValueError):
            adamw_step(OptState.zeros_like(p), p, ParamGrads(np.zeros((6, 3)), np.zeros((2, 3)), np.zeros(2)), -1.0)

    @pytest.mark.parametrize("kw", [{"beta1": 1.0}, {"beta2": 0.0}, {"eps": 0.0}, {"weight_decay": -1.0}])
    def test_bad_hyper(self, kw):
        with pytest.raises(ValueError):
            AdamHyper(**kw)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.floats(0, 0.1))
def test_second_moment_nonnegative_and_deterministic(seed, steps, lr):
    rng = np.random.default_rng(seed)
    gs = [ParamGrads(rng.normal(size=(4, 2)) * 10.0 ** rng.integers(-8, 4), rng.normal(size=(2, 2)), rng.normal(size=2)) for _ in range(steps)]
    runs = []
    for _ in range(2):
        p = init_params(4, 2, 2, 7)
        state = OptState.zeros_like(p)
        for g in gs:
            adamw_step(state, p, g, lr)
            assert all(np.all(v >= 0) for v in state.v.values())
        runs.append(p.to_bytes() + state.to_bytes())
    assert runs[0] == runs[1]


class TestOptStateFile:
    def test_layout_and_round_trip(self, tmp_path):
        p = init_params(5, 3, 2, 0)
        state = OptState.zeros_like(p)
        rng = np.random.default_rng(0)
        for _ in range(3):
            adamw_step(state, p, ParamGrads(rng.normal(size=(5, 3)), rng.normal(size=(2, 3)), rng.normal(size=2)), 1e-3)
        state.save(tmp_path / "s.mopt")
        data = (tmp_path / "s.mopt").read_bytes()
        assert data[:4] == b"MOPT"
        assert struct.unpack("<IIIII", data[4:24]) == (1, 5, 3, 2, 3)
        n = 5 * 3 + 2 * 3 + 2
        assert len(data) == 24 + 4 * 2 * n
        back = OptState.from_bytes(data)
        assert back.t == 3
        for k in ("E", "W", "b"):
            assert np.array_equal(back.m[k], state.m[k].astype(np.float32))
            assert np.array_equal(back.v[k], state.v[k].astype(np.float32))

    def test_rejects_checkpoint_file(self):
        with pytest.raises(ValueError):
            OptState.from_bytes(init_params(3, 2, 2).to_bytes() + bytes(8))
