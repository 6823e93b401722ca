import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dockverify.dynamics import (
    DynParams,
    State,
    affine_transition,
    from_polar,
    step_closed_form,
    step_ode_oracle,
    to_polar,
)
from dockverify.netgraph import forward

TRAIN_LO = np.array([-25.0, -25.0, -1.6, -1.6])
TRAIN_HI = np.array([25.0, 25.0, 1.6, 1.6])


def coords(lo=-25.0, hi=25.0):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


class TestParams:
    def test_defaults(self):
        p = DynParams()
        assert p.mass == 12.0
        assert p.mean_motion == 0.001027
        assert p.timestep == 1.0

    @pytest.mark.parametrize(
        "kwargs", [{"mass": 0.0}, {"mass": -1.0}, {"mean_motion": 0.0}, {"timestep": -0.5}]
    )
    def test_rejects_nonpositive(self, kwargs):
        with pytest.raises(ValueError):
            DynParams(**kwargs)


class TestClosedForm:
    def test_origin_fixed_point(self, params):
        out = step_closed_form((0, 0, 0, 0), (0, 0), params)
        assert np.array_equal(out, np.zeros(4))

    def test_matches_ode_oracle_single(self, params):
        s = np.array([1.0, 0.0, 0.0, 0.0])
        u = np.zeros(2)
        got = step_closed_form(s, u, params)
        ref = step_ode_oracle(s, u, params, substeps=1000)
        assert np.all(np.abs(got - ref) <= 1e-6 * (1.0 + np.abs(ref)))

    def test_matches_ode_oracle_sampled(self, params, rng):
        s = rng.uniform(TRAIN_LO, TRAIN_HI, size=(500, 4))
        u = rng.uniform(-1.0, 1.0, size=(500, 2))
        got = step_closed_form(s, u, params)
        ref = step_ode_oracle(s, u, params, substeps=1000)
        assert np.all(np.abs(got - ref) <= 1e-6 * (1.0 + np.abs(ref)))

    def test_paper_counterexample_state(self, params, shipped):
        # the concrete start state quoted for the k-induction discussion
        s = np.array([
            0.5347935396499356,
            0.51,
            0.00038615766226848813,
            0.00038615766226848813,
        ])
        u = np.clip(forward(shipped, s), -1.0, 1.0)
        got = step_closed_form(s, u, params)
        ref = step_ode_oracle(s, u, params, substeps=1000)
        assert np.all(np.abs(got - ref) <= 1e-6 * (1.0 + np.abs(ref)))

    def test_rejects_non_finite(self, params):
        with pytest.raises(ValueError):
            step_closed_form((np.nan, 0, 0, 0), (0, 0), params)
        with pytest.raises(ValueError):
            step_closed_form((0, 0, 0, 0), (np.inf, 0), params)

    @given(a=coords(-5, 5), b=coords(-5, 5), scale=st.floats(-3, 3, allow_nan=False))
    def test_linearity_in_state_and_control(self, a, b, scale):
        p = DynParams()
        s = np.array([a, b, 0.1, -0.1])
        u = np.array([0.3, -0.2])
        lhs = step_closed_form(scale * s, scale * u, p)
        rhs = scale * step_closed_form(s, u, p)
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-9)


class TestOdeOracle:
    def test_origin_fixed_point(self, params):
        assert np.array_equal(step_ode_oracle((0, 0, 0, 0), (0, 0), params, 10), np.zeros(4))

    @pytest.mark.parametrize("substeps", [0, -3, 2.5])
    def test_rejects_bad_substeps(self, params, substeps):
        with pytest.raises(ValueError):
            step_ode_oracle((1, 0, 0, 0), (0, 0), params, substeps)

    def test_fourth_order_self_convergence(self):
        # halving the substep should shrink the error against a much finer
        # reference by roughly 2^4; a fast fictitious orbit keeps the error
        # above the float64 floor where the order is visible
        fast = DynParams(mass=2.0, mean_motion=0.3, timestep=5.0)
        s = np.array([3.0, -2.0, 0.5, 0.4])
        u = np.array([0.7, -0.3])
        ref = step_ode_oracle(s, u, fast, substeps=2560)
        err_coarse = np.max(np.abs(step_ode_oracle(s, u, fast, 4) - ref))
        err_fine = np.max(np.abs(step_ode_oracle(s, u, fast, 8) - ref))
        ratio = err_coarse / err_fine
        assert 8.0 < ratio < 32.0

    def test_richardson_agreement(self, params, rng):
        s = rng.uniform(TRAIN_LO, TRAIN_HI, size=4)
        u = np.array([0.3, -0.2])
        a = step_ode_oracle(s, u, params, substeps=1000)
        b = step_ode_oracle(s, u, params, substeps=10_000)
        assert np.max(np.abs(a - b)) <= 1e-10


class TestAffineTransition:
    def test_zero_maps_to_zero(self, transition):
        A, B = transition
        assert np.array_equal(A @ np.zeros(4) + B @ np.zeros(2), np.zeros(4))

    def test_bitwise_equality_with_step(self, params, transition, rng):
        A, B = transition
        s = rng.uniform(TRAIN_LO, TRAIN_HI, size=(10_000, 4))
        u = rng.uniform(-1.0, 1.0, size=(10_000, 2))
        assert np.array_equal(s @ A.T + u @ B.T, step_closed_form(s, u, params))

    def test_superposition(self, params, rng):
        s1, s2 = rng.uniform(-5, 5, size=(2, 4))
        u1, u2 = rng.uniform(-1, 1, size=(2, 2))
        lhs = step_closed_form(s1 + s2, u1 + u2, params)
        rhs = step_closed_form(s1, u1, params) + step_closed_form(s2, u2, params)
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)

    def test_shapes(self, transition):
        A, B = transition
        assert A.shape == (4, 4) and B.shape == (4, 2)


class TestPolar:
    def test_diagonal_point(self):
        ps = to_polar((1.0, 1.0, 0.0, 0.0))
        assert math.isclose(ps.r, math.sqrt(2.0))
        assert math.isclose(ps.theta, math.pi / 4)
        assert ps.rdot == 0.0 and ps.thetadot == 0.0

    def test_origin_is_degenerate(self):
        with pytest.raises(ValueError):
            to_polar((0.0, 0.0, 0.3, 0.1))

    def test_negative_radius_rejected(self):
        with pytest.raises(ValueError):
            from_polar((-1.0, 0.0, 0.0, 0.0))

    @given(
        x=coords(-10, 10), y=coords(-10, 10),
        vx=coords(-1.6, 1.6), vy=coords(-1.6, 1.6),
    )
    def test_round_trip(self, x, y, vx, vy):
        if math.hypot(x, y) <= 0.01:
            return
        s = State(x, y, vx, vy)
        back = from_polar(to_polar(s))
        assert np.allclose(np.asarray(back), np.asarray(s), rtol=0, atol=1e-12)
