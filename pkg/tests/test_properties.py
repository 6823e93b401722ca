import math
from types import SimpleNamespace

import numpy as np
import pytest

from dockverify.certificate import Witness, init_certificate, make_toy_setup
from dockverify.dynamics import DynParams, affine_transition
from dockverify.netgraph import GraphBuilder, forward, make_mlp
from dockverify.properties import (
    KIND_EPSILON,
    N_DIRECTIONS,
    RWA_CONDITIONS,
    DirectionSet,
    GoalSpec,
    SafetySpec,
    encode_goal,
    encode_kind_property,
    encode_norm_over,
    encode_norm_under,
    encode_rwa_condition,
    encode_sampling_region,
    encode_unsafe_overapprox,
)
from dockverify.simulation import exact_safety
from dockverify.verifier import Box, Budget, check

from oracles import clauses_hold


def norm_graph(d=DirectionSet()):
    """Graph mapping a 2-vector to (under, over) norm approximations."""
    bld = GraphBuilder()
    u = bld.input(2)
    off_under = bld.add_output(encode_norm_under(bld, u, d))
    off_over = bld.add_output(encode_norm_over(bld, u, d))
    return bld.build(), off_under, off_over


def identity4():
    bld = GraphBuilder()
    x = bld.input(4)
    bld.add_output(x)
    return bld.build()


def constant_value(c):
    """1-D network computing the constant c."""
    return make_mlp([(np.zeros((1, 1)), np.array([float(c)]), "identity")])


class TestDirectionSet:
    @pytest.mark.parametrize("n", [0, -4, 3, 6])
    def test_rejects_bad_counts(self, n):
        with pytest.raises(ValueError):
            DirectionSet(n)

    def test_quadrant_angles(self):
        d = DirectionSet(400)
        a = d.angles
        assert a.shape == (101,)
        assert a[0] == 0.0
        assert a[-1] == pytest.approx(math.pi / 2, abs=1e-15)
        assert np.allclose(np.diff(a), 2 * math.pi / 400)

    def test_smallest_set(self):
        d = DirectionSet(4)
        assert d.angles.shape == (2,)
        assert d.cos[0] == 1.0
        assert d.sin[-1] == 1.0

    def test_over_factor_barely_above_secant(self):
        d = DirectionSet(400)
        exact = 1.0 / math.cos(math.pi / 400)
        assert d.over_factor > exact
        assert d.over_factor - exact <= 5 * math.ulp(exact)


class TestSafetySpec:
    def test_defaults(self):
        s = SafetySpec()
        assert s.v0 == 0.2
        assert s.slope == pytest.approx(2 * 0.001027)

    @pytest.mark.parametrize("kw", [{"v0": 0.0}, {"v0": -1.0}, {"slope": 0.0}])
    def test_rejects_nonpositive(self, kw):
        with pytest.raises(ValueError):
            SafetySpec(**kw)


class TestNormSandwich:
    def test_axis_inputs_exact(self):
        g, off_u, off_o = norm_graph()
        out = g.eval(np.array([[3.0, 0.0], [0.0, -2.0], [-1.5, 0.0]]))
        assert np.array_equal(out[:, off_u], [3.0, 2.0, 1.5])
        # over = under * factor, a single multiply
        f = DirectionSet().over_factor
        assert np.array_equal(out[:, off_o], out[:, off_u] * f)

    def test_three_four_five(self):
        g, off_u, off_o = norm_graph()
        under, over = g.eval(np.array([3.0, 4.0]))
        assert 0.0 <= 5.0 - under <= 1.55e-4
        assert 0.0 <= over - 5.0 <= 1.6e-4

    def test_sandwich_on_random_vectors(self, rng):
        g, off_u, off_o = norm_graph()
        u = rng.uniform(-10, 10, size=(10_000, 2))
        out = g.eval(u)
        norm = np.hypot(u[:, 0], u[:, 1])
        secant = math.cos(math.pi / N_DIRECTIONS)
        assert np.all(out[:, off_u] <= norm * (1 + 1e-12))
        assert np.all(out[:, off_o] >= norm * (1 - 1e-12))
        # under is tight to within the angular quantization
        assert np.all(out[:, off_u] >= norm * secant - 1e-12)

    def test_coarse_set_still_sandwiches(self, rng):
        g, off_u, off_o = norm_graph(DirectionSet(8))
        u = rng.uniform(-3, 3, size=(2000, 2))
        out = g.eval(u)
        norm = np.hypot(u[:, 0], u[:, 1])
        assert np.all(out[:, off_u] <= norm * (1 + 1e-12))
        assert np.all(out[:, off_o] >= norm * (1 - 1e-12))

    def test_rejects_wrong_dim(self):
        bld = GraphBuilder()
        x = bld.input(3)
        with pytest.raises(ValueError):
            encode_norm_under(bld, x, DirectionSet())


class TestUnsafeOverapprox:
    def setup_method(self):
        bld = GraphBuilder()
        x = bld.input(4)
        self.clause = encode_unsafe_overapprox(bld, x, SafetySpec())
        self.graph = bld.build()

    def flagged(self, states):
        return clauses_hold((self.clause,), self.graph.eval(states))

    def test_plainly_violating_state(self):
        # at the origin any speed above the base is a violation
        assert self.flagged(np.array([[0.0, 0.0, 0.0, 0.3]]))[0]

    def test_plainly_safe_state(self):
        assert not self.flagged(np.array([[5.0, 0.0, 0.05, 0.0]]))[0]

    def test_covers_all_violations(self, rng):
        spec = SafetySpec()
        states = np.column_stack([
            rng.uniform(-6, 6, size=(10_000, 2)),
            rng.uniform(-0.5, 0.5, size=(10_000, 2)),
        ])
        flags = self.flagged(states)
        speed = np.hypot(states[:, 2], states[:, 3])
        dist = np.hypot(states[:, 0], states[:, 1])
        violating = speed > spec.v0 + spec.slope * dist
        # over-approximation: every true violation is flagged
        assert np.all(flags[violating])
        # and the conservative side only triggers near the boundary
        secant = math.cos(math.pi / spec.directions.n_directions)
        f = spec.directions.over_factor
        robustly_safe = f * speed <= spec.v0 + spec.slope * secant * dist - 1e-9
        assert not np.any(flags[robustly_safe])

    def test_agrees_with_exact_safety_off_boundary(self, rng, params):
        states = np.column_stack([
            rng.uniform(-6, 6, size=(500, 2)),
            rng.uniform(-0.4, 0.4, size=(500, 2)),
        ])
        flags = self.flagged(states)
        for s, flag in zip(states, flags):
            if not exact_safety(s, params):
                assert flag

    def test_rejects_wrong_state_dim(self):
        bld = GraphBuilder()
        x = bld.input(2)
        with pytest.raises(ValueError):
            encode_unsafe_overapprox(bld, x, SafetySpec())


class TestGoal:
    def test_contains_scalar_and_batch(self):
        g = GoalSpec()
        assert g.contains([0.1, -0.2, 5.0, 5.0])
        assert not g.contains([0.4, 0.0, 0.0, 0.0])
        got = g.contains(np.array([[0.0, 0.0, 0, 0], [0.36, 0.0, 0, 0]]))
        assert got.tolist() == [True, False]

    def test_rejects_nonpositive_half_side(self):
        with pytest.raises(ValueError):
            GoalSpec(0.0)

    def test_corner_clears_half_metre(self):
        # the square's corner stays inside the 0.5 m capture radius
        assert math.hypot(0.35, 0.35) < 0.5

    def test_clause_shapes(self):
        inside, outside = encode_goal(0, GoalSpec())
        assert len(inside) == 4 and all(len(cl) == 1 for cl in inside)
        assert len(outside) == 4

    def test_clauses_match_contains(self, rng):
        g = GoalSpec()
        inside, outside = encode_goal(0, g)
        graph = identity4()
        pts = rng.uniform(-1, 1, size=(4000, 4))
        off_boundary = np.all(np.abs(np.abs(pts[:, :2]) - g.half_side) > 1e-9, axis=1)
        out = graph.eval(pts)
        want = g.contains(pts)
        assert np.array_equal(clauses_hold(inside, out)[off_boundary], want[off_boundary])
        assert np.array_equal(
            clauses_hold((outside,), out)[off_boundary], (~want)[off_boundary]
        )


class TestKindProperty:
    def test_rejects_bad_args(self, shipped, transition):
        A, B = transition
        box = Box([1, 1, 0, 0], [2, 2, 0.1, 0.1])
        with pytest.raises(ValueError):
            encode_kind_property(shipped, A, B, 1.0, box, k=2, eps=0.0)
        with pytest.raises(ValueError):
            encode_kind_property(shipped, A, B, 1.0, box, k=0)

    def test_matches_direct_simulation(self, shipped, transition, rng):
        A, B = transition
        k, eps = 2, 1e-3
        goal = GoalSpec()
        region = Box([-0.5, -0.5, -0.05, -0.05], [0.5, 0.5, 0.05, 0.05])
        q = encode_kind_property(shipped, A, B, 1.0, region, k=k, eps=eps, goal=goal)

        s = rng.uniform(region.lo, region.hi, size=(300, 4))
        cur = s.copy()
        for _ in range(k):
            u = np.clip(forward(shipped, cur), -1.0, 1.0)
            cur = cur @ A.T + u @ B.T
        gain_pos = np.abs(cur[:, :2]).sum(1) - np.abs(s[:, :2]).sum(1)
        gain_vel = np.abs(cur[:, 2:]).sum(1) - np.abs(s[:, 2:]).sum(1)
        outside = ~goal.contains(s)
        want = (gain_pos >= -eps) & (gain_vel >= -eps) & outside

        got = clauses_hold(q.clauses, q.graph.eval(s))
        # skip samples sitting on a clause boundary
        robust = (
            (np.abs(gain_pos + eps) > 1e-7)
            & (np.abs(gain_vel + eps) > 1e-7)
            & np.all(np.abs(np.abs(s[:, :2]) - goal.half_side) > 1e-7, axis=1)
        )
        assert np.array_equal(got[robust], want[robust])

    def test_sign_specialization_prunes_gadgets(self, shipped, transition):
        A, B = transition
        fixed = Box([2, 2, 0.01, 0.01], [3, 3, 0.05, 0.05])
        straddling = Box([-1, -1, -0.05, -0.05], [1, 1, 0.05, 0.05])
        q_fixed = encode_kind_property(shipped, A, B, 1.0, fixed, k=1)
        q_strad = encode_kind_property(shipped, A, B, 1.0, straddling, k=1)
        assert q_fixed.graph.n_relu_units < q_strad.graph.n_relu_units

    def test_stationary_dynamics_satisfiable(self, shipped):
        # identity dynamics never decrease either norm, so the negated
        # property holds everywhere outside the goal
        A, B = np.eye(4), np.zeros((4, 2))
        region = Box([1.0, 1.0, 0.02, 0.02], [2.0, 2.0, 0.05, 0.05])
        q = encode_kind_property(shipped, A, B, 1.0, region, k=3)
        v = check(q, Budget(timeout_s=120.0))
        assert v.status == "SAT"
        assert clauses_hold(q.clauses, q.graph.eval(v.counterexample), slack=1e-9)

    def test_stationary_inside_goal_unsat(self, shipped):
        A, B = np.eye(4), np.zeros((4, 2))
        region = Box([-0.2, -0.2, -0.01, -0.01], [0.2, 0.2, 0.01, 0.01])
        q = encode_kind_property(shipped, A, B, 1.0, region, k=1, goal=GoalSpec())
        assert check(q, Budget(timeout_s=120.0)).status == "UNSAT"

    def test_default_epsilon(self):
        assert KIND_EPSILON == 1e-3


def toy_value_on(xs, V):
    return forward(V, xs.reshape(-1, 1))[:, 0]


def toy_next(xs):
    u = np.clip(-0.8 * xs, -1.0, 1.0)
    return xs + 0.5 * u


class TestRwaConditions:
    def setup_method(self):
        self.task, self.plant, self.controller = make_toy_setup()
        self.w = Witness(1.0, 0.5, 0.0, 1e-3)

    def run_cond(self, V, cond, w=None):
        qs = encode_rwa_condition(
            V, self.controller, self.plant, self.task, cond, w or self.w
        )
        return [check(q, Budget(timeout_s=120.0)) for q in qs]

    def test_condition_names(self):
        assert RWA_CONDITIONS == ("floor", "init", "decrease", "unsafe")

    def test_rejects_unknown_condition(self):
        with pytest.raises(ValueError):
            encode_rwa_condition(
                constant_value(0.2), None, self.plant, self.task, "bogus", self.w
            )

    def test_rejects_decrease_without_controller(self):
        with pytest.raises(ValueError):
            encode_rwa_condition(
                constant_value(0.2), None, self.plant, self.task, "decrease", self.w
            )

    def test_rejects_inconsistent_witness(self):
        bad = SimpleNamespace(alpha=0.5, beta=0.5, gamma=0.0, epsilon=1e-3)
        with pytest.raises(ValueError):
            encode_rwa_condition(
                constant_value(0.2), None, self.plant, self.task, "floor", bad
            )

    def test_constant_value_floor(self):
        assert self.run_cond(constant_value(0.2), "floor")[0].status == "UNSAT"
        assert self.run_cond(constant_value(-0.5), "floor")[0].status == "SAT"

    def test_constant_value_init(self):
        assert self.run_cond(constant_value(0.2), "init")[0].status == "UNSAT"
        assert self.run_cond(constant_value(0.8), "init")[0].status == "SAT"

    def test_constant_value_decrease(self):
        # constant V never drops, so the negation is witnessed whenever the
        # sublevel set reaches outside the goal
        assert self.run_cond(constant_value(0.2), "decrease")[0].status == "SAT"
        assert self.run_cond(constant_value(0.8), "decrease")[0].status == "UNSAT"

    def test_constant_value_unsafe(self):
        low = self.run_cond(constant_value(0.2), "unsafe")
        high = self.run_cond(constant_value(1.5), "unsafe")
        assert len(low) == 2 and len(high) == 2
        assert all(v.status == "SAT" for v in low)
        assert all(v.status == "UNSAT" for v in high)

    def _direct_witness_exists(self, V, cond, tol):
        """Dense-grid search for a robust witness of the negated condition."""
        w = self.w
        if cond == "floor":
            xs = np.linspace(-2.0, 2.0, 4001)
            return bool(np.any(toy_value_on(xs, V) < w.gamma - tol))
        if cond == "init":
            xs = np.linspace(-1.2, 1.2, 4001)
            return bool(np.any(toy_value_on(xs, V) > w.beta + tol))
        if cond == "decrease":
            xs = np.linspace(-2.0, 2.0, 4001)
            v = toy_value_on(xs, V)
            drop = v - toy_value_on(toy_next(xs), V)
            ok = (
                (v <= w.beta - tol)
                & (drop < w.epsilon - tol)
                & (np.abs(xs) > 0.1 + tol)
                & (np.abs(xs) <= 1.5 - tol)
            )
            return bool(np.any(ok))
        hits = []
        for d in self.task.unsafe:
            xs = np.linspace(-2.0, 2.0, 4001)
            proj = float(d.a[0]) * xs
            ok = (
                (proj > d.p + tol)
                & (proj < d.p + d.margin - tol)
                & (toy_value_on(xs, V) < w.alpha - tol)
            )
            hits.append(bool(np.any(ok)))
        return hits

    def test_random_value_agrees_with_grid(self):
        V = init_certificate(1, hidden=(8, 8), seed=5)
        for cond in ("floor", "init", "decrease"):
            verdict = self.run_cond(V, cond)[0]
            assert verdict.status in ("SAT", "UNSAT")
            if self._direct_witness_exists(V, cond, 1e-6):
                assert verdict.status == "SAT"
            if verdict.status == "UNSAT":
                assert not self._direct_witness_exists(V, cond, 1e-6)
        verdicts = self.run_cond(V, "unsafe")
        hits = self._direct_witness_exists(V, "unsafe", 1e-6)
        for verdict, hit in zip(verdicts, hits):
            if hit:
                assert verdict.status == "SAT"
            if verdict.status == "UNSAT":
                assert not hit

    def test_region_override(self):
        # quantifying init over a region where the constant is fine
        V = constant_value(0.8)
        qs = encode_rwa_condition(
            V, None, self.plant, self.task, "init", self.w, region=Box([-0.1], [0.1])
        )
        assert qs[0].box.lo[0] == -0.1
        assert check(qs[0]).status == "SAT"  # constant 0.8 > beta anywhere


class TestSamplingRegion:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            encode_sampling_region([1.0, 1.0], [1.0])
        with pytest.raises(ValueError):
            encode_sampling_region([1.0], [0.0])

    def test_point_examples(self):
        _, pred = encode_sampling_region([1.0, 1.0], [1.0, 1.0])
        assert pred([1.5, 0.0])
        assert not pred([0.5, 0.5])
        assert not pred([1.5, 2.5])
        assert pred(np.array([[1.5, 0.0], [0.5, 0.5]])).tolist() == [True, False]

    def test_clauses_match_predicate(self, rng):
        clauses, pred = encode_sampling_region([1.0, 1.0], [1.0, 1.0], offset=1)
        bld = GraphBuilder()
        x = bld.input(3)
        bld.add_output(x)
        graph = bld.build()
        pts = rng.uniform(0, 2.5, size=(4000, 3))
        robust = np.all(
            (np.abs(pts[:, 1:] - 1.0) > 1e-9) & (np.abs(pts[:, 1:] - 2.0) > 1e-9),
            axis=1,
        )
        got = clauses_hold(clauses, graph.eval(pts))
        assert np.array_equal(got[robust], pred(pts[:, 1:])[robust])

    def test_acceptance_fraction(self, rng):
        # shell covers 3/4 of [0, 2]^2
        _, pred = encode_sampling_region([1.0, 1.0], [1.0, 1.0])
        pts = rng.uniform(0, 2, size=(20_000, 2))
        assert abs(pred(pts).mean() - 0.75) < 0.02
