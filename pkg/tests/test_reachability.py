import numpy as np
import pytest

from dockverify.controllers import build_constant_controller, load_shipped_controller
from dockverify.reachability import (
    CalibrationError,
    CellGraph,
    CellSpec,
    CycleError,
    TubeResult,
    _lin,
    build_cell_graph,
    calibrate_cell_size,
    cells_intersecting,
    find_cycles,
    forward_tube,
    liveness_cells,
)
from dockverify.verifier import Box

from oracles import dfs_has_cycle, enumerate_live

# 3x1 positional grid, 3 velocity bands per axis
STUB_DOMAIN = Box([0, 0, -0.5, -0.5], [3, 1, 0.5, 0.5])
STUB_SPEC = CellSpec(
    (1.0, 1.0), ((-0.5, -0.01, 0.01, 0.5), (-0.5, -0.01, 0.01, 0.5))
)
STUB_SHAPE = (3, 1, 3, 3)

DUMMY_SPEC = CellSpec((1.0, 1.0), ((-1.0, -0.001, 0.001, 1.0),) * 2)


def zero_net():
    return build_constant_controller([0.0, 0.0])


def frozen_dyn():
    return (np.eye(4), np.zeros((4, 2)))


def drift_dyn(step=1.0):
    B = np.zeros((4, 2))
    B[0, 0] = step
    return (np.eye(4), B)


def thruster():
    return build_constant_controller([1.0, 0.0])


def synthetic_graph(n, edges, escaping=()):
    """A CellGraph carrying only connectivity, for the graph algorithms."""
    return CellGraph(
        domain=Box([0, 0, -1, -1], [n, 1, 1, 1]),
        spec=DUMMY_SPEC,
        k=1,
        shape=(n, 1, 1, 1),
        boxes=[Box([i, 0, -1, -1], [i + 1, 1, 1, 1]) for i in range(n)],
        edges=tuple(sorted(edges)),
        self_loop_possible=frozenset(a for a, b in edges if a == b),
        escapes_domain=frozenset(escaping),
        timeout_edges=frozenset(),
    )


class TestCellSpec:
    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            CellSpec((0.0, 1.0), ((-1.0, 1.0),) * 2)
        with pytest.raises(ValueError):
            CellSpec((1.0, 1.0), ((-1.0,), (-1.0, 1.0)))
        with pytest.raises(ValueError):
            CellSpec((1.0, 1.0), ((-1.0, -0.5, 1.0, 0.5), (-1.0, 1.0)))
        # no band straddling zero
        with pytest.raises(ValueError):
            CellSpec((1.0, 1.0), ((0.0, 1.0, 2.0), (-1.0, 1.0)))

    def test_zero_band_index(self):
        assert STUB_SPEC.zero_band(0) == 1
        assert DUMMY_SPEC.zero_band(1) == 1
        five = CellSpec((1.0, 1.0), ((-0.5, -0.3, -0.01, 0.01, 0.3, 0.5), (-1.0, 1.0)))
        assert five.zero_band(0) == 2

    def test_json_round_trip(self):
        spec = CellSpec(
            (0.5, 0.25),
            ((-0.4, -0.02, 0.02, 0.4), (-0.3, -0.01, 0.01, 0.3)),
            ((0, 1, 2), (1, 0, 0)),
        )
        assert CellSpec.from_json(spec.to_json()) == spec


class TestCellsIntersecting:
    def test_single_column(self):
        got = cells_intersecting(
            STUB_DOMAIN, STUB_SPEC, Box([2.0, 0.0, -0.5, -0.5], [3.0, 1.0, 0.5, 0.5])
        )
        assert got == sorted(
            _lin(STUB_SHAPE, (2, 0, iv, iw)) for iv in range(3) for iw in range(3)
        )

    def test_boundary_touch_is_not_membership(self):
        # a box ending exactly on a cell edge does not reach the next cell
        got = cells_intersecting(
            STUB_DOMAIN, STUB_SPEC, Box([0.0, 0.0, -0.005, -0.005], [1.0, 1.0, 0.005, 0.005])
        )
        assert got == [_lin(STUB_SHAPE, (0, 0, 1, 1))]

    def test_outside_box_clamps_to_border_cells(self):
        got = cells_intersecting(
            STUB_DOMAIN, STUB_SPEC, Box([10.0, 0.2, 0.0, 0.0], [11.0, 0.3, 0.0, 0.0])
        )
        assert got == [_lin(STUB_SHAPE, (2, 0, 1, 1))]


class TestBuildCellGraph:
    def test_frozen_dynamics_self_loops_only(self):
        g = build_cell_graph(zero_net(), frozen_dyn(), STUB_DOMAIN, STUB_SPEC)
        n = len(g.boxes)
        assert n == 27
        assert g.edges == tuple((i, i) for i in range(n))
        assert g.self_loop_possible == frozenset(range(n))
        assert g.escapes_domain == frozenset()
        assert g.timeout_edges == frozenset()

    def test_unit_drift_shifts_one_column(self):
        g = build_cell_graph(thruster(), drift_dyn(1.0), STUB_DOMAIN, STUB_SPEC)
        rightmost = set()
        for i in range(len(g.boxes)):
            ix, iy, iv, iw = np.unravel_index(i, STUB_SHAPE)
            succ = g.successors(i)
            if ix < 2:
                assert succ == [_lin(STUB_SHAPE, (ix + 1, iy, iv, iw))]
                assert i not in g.escapes_domain
            else:
                # the boundary start x=2 lands exactly on the closed domain
                # face x=3, which the rightmost cell owns: a thin self-loop
                assert succ == [i]
                assert i in g.escapes_domain
                rightmost.add(i)
        assert g.self_loop_possible == frozenset(rightmost)

    def test_adjacency_matches_successors(self):
        g = build_cell_graph(thruster(), drift_dyn(1.0), STUB_DOMAIN, STUB_SPEC)
        adj = g.adjacency()
        for i in range(len(g.boxes)):
            assert adj[i] == g.successors(i)

    def test_degenerate_columns_marked_self_loop(self):
        spec = CellSpec(
            STUB_SPEC.pos_widths, STUB_SPEC.vel_edges, degenerate_columns=((0, 1, 0),)
        )
        g = build_cell_graph(thruster(), drift_dyn(1.0), STUB_DOMAIN, spec)
        marked = {_lin(STUB_SHAPE, (1, 0, 1, iw)) for iw in range(3)}
        rightmost = {
            _lin(STUB_SHAPE, (2, 0, iv, iw)) for iv in range(3) for iw in range(3)
        }
        assert g.self_loop_possible == frozenset(marked | rightmost)

    def test_zero_band_hop_edge_found(self):
        # dv = 0.15 carries the band below the thin zero band clear across it
        domain = Box([0, 0, -0.5, -0.5], [1, 1, 0.5, 0.5])
        spec = CellSpec(
            (1.0, 1.0),
            ((-0.5, -0.3, -0.01, 0.01, 0.3, 0.5), (-0.5, -0.01, 0.01, 0.5)),
        )
        B = np.zeros((4, 2))
        B[2, 0] = 0.15
        g = build_cell_graph(thruster(), (np.eye(4), B), domain, spec)
        shape = (1, 1, 5, 3)
        for iw in range(3):
            src = _lin(shape, (0, 0, 1, iw))
            hop = _lin(shape, (0, 0, 3, iw))
            beyond = _lin(shape, (0, 0, 4, iw))
            assert hop in g.successors(src)
            assert beyond not in g.successors(src)
        # only the top band can leave the domain
        assert g.escapes_domain == frozenset(
            _lin(shape, (0, 0, 4, iw)) for iw in range(3)
        )
        # the zero band itself is swept clean, everything else may linger
        zero_cells = {_lin(shape, (0, 0, 2, iw)) for iw in range(3)}
        assert g.self_loop_possible == frozenset(range(15)) - zero_cells

    def test_json_and_eq_round_trip(self):
        g = build_cell_graph(thruster(), drift_dyn(1.0), STUB_DOMAIN, STUB_SPEC)
        assert CellGraph.from_json(g.to_json()) == g

    def test_write_csv(self, tmp_path):
        g = build_cell_graph(thruster(), drift_dyn(1.0), STUB_DOMAIN, STUB_SPEC)
        cells, edges = tmp_path / "cells.csv", tmp_path / "edges.csv"
        g.write_csv(cells, edges)
        cell_lines = cells.read_text().splitlines()
        edge_lines = edges.read_text().splitlines()
        assert cell_lines[0] == "id,cx,cy,cvx,cvy,self_loop_possible,escapes_domain"
        assert len(cell_lines) == 28
        assert edge_lines[0] == "src,dst,timeout_flagged"
        assert len(edge_lines) == len(g.edges) + 1
        first = cell_lines[1].split(",")
        assert first[0] == "0" and first[1] == "0.5"


class TestCycles:
    def test_matches_dfs_oracle(self, rng):
        for _ in range(30):
            n = int(rng.integers(4, 13))
            p = rng.uniform(0.05, 0.3)
            edges = [
                (a, b)
                for a in range(n)
                for b in range(n)
                if rng.uniform() < p
            ]
            g = synthetic_graph(n, edges)
            cycles = find_cycles(g)
            assert bool(cycles) == dfs_has_cycle(n, edges)
            edge_set = set(g.edges)
            for cyc in cycles:
                for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                    assert (a, b) in edge_set

    def test_self_loops_reported_individually(self):
        g = synthetic_graph(3, [(0, 0), (1, 2), (2, 2)])
        assert find_cycles(g) == [[0], [2]]


class TestLiveness:
    def test_matches_enumeration_on_random_dags(self, rng):
        for _ in range(30):
            n = int(rng.integers(4, 12))
            edges = [
                (a, b)
                for a in range(n)
                for b in range(a + 1, n)
                if rng.uniform() < 0.35
            ]
            goal = {int(v) for v in rng.choice(n, size=max(1, n // 4), replace=False)}
            rest = [v for v in range(n) if v not in goal]
            escaping = {v for v in rest if rng.uniform() < 0.2}
            g = synthetic_graph(n, edges, escaping)
            want = enumerate_live(n, g.adjacency(), goal, escaping)
            assert liveness_cells(g, goal) == want

    def test_refuses_cycles_outside_goal(self):
        g = synthetic_graph(4, [(0, 1), (1, 0), (2, 3)])
        with pytest.raises(CycleError) as info:
            liveness_cells(g, {3})
        assert [0, 1] in info.value.cycles

    def test_cycle_through_goal_is_fine(self):
        # the 1 -> 0 back edge passes through the goal, where paths stop
        g = synthetic_graph(3, [(0, 1), (1, 0), (1, 2)])
        assert liveness_cells(g, {1}) == {0}

    def test_self_loop_refused(self):
        g = synthetic_graph(2, [(0, 0), (0, 1)])
        with pytest.raises(CycleError) as info:
            liveness_cells(g, {1})
        assert [0] in info.value.cycles

    def test_goal_out_of_range(self):
        g = synthetic_graph(2, [(0, 1)])
        with pytest.raises(ValueError):
            liveness_cells(g, {5})

    def test_escaping_and_sink_cells_are_dead(self):
        g = synthetic_graph(5, [(0, 1), (1, 4), (2, 4), (3, 4)], escaping={2})
        live = liveness_cells(g, {4})
        assert live == {0, 1, 3}

    def test_unit_drift_graph_liveness(self):
        g = build_cell_graph(thruster(), drift_dyn(1.0), STUB_DOMAIN, STUB_SPEC)
        goal = cells_intersecting(
            STUB_DOMAIN, STUB_SPEC, Box([2.0, 0.0, -0.5, -0.5], [3.0, 1.0, 0.5, 0.5])
        )
        live = liveness_cells(g, goal)
        want = enumerate_live(len(g.boxes), g.adjacency(), set(goal), g.escapes_domain)
        assert live == want
        assert len(live) == 18


class TestCalibration:
    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            calibrate_cell_size(zero_net(), frozen_dyn(), STUB_DOMAIN, k=0)
        off_zero = Box([0, 0, 0.1, -0.5], [1, 1, 0.5, 0.5])
        with pytest.raises(ValueError):
            calibrate_cell_size(zero_net(), frozen_dyn(), off_zero)

    def test_frozen_dynamics_calibrates_everything_degenerate(self):
        domain = Box([-2, -2, -0.5, -0.5], [2, 2, 0.5, 0.5])
        spec = calibrate_cell_size(
            zero_net(), frozen_dyn(), domain, max_cells_per_axis=4, n_outer=2
        )
        assert spec.pos_widths == (1.0, 1.0)
        assert len(spec.vel_edges[0]) == 6 and len(spec.vel_edges[1]) == 6
        assert spec.zero_band(0) == 2
        # a frozen state never leaves the zero band: every column degenerate
        assert len(spec.degenerate_columns) == 32
        again = calibrate_cell_size(
            zero_net(), frozen_dyn(), domain, max_cells_per_axis=4, n_outer=2
        )
        assert spec == again

    def test_violent_thrust_fails_certification(self):
        domain = Box([-5, -5, -0.5, -0.5], [5, 5, 0.5, 0.5])
        B = np.zeros((4, 2))
        B[2, 0] = 5.0
        B[3, 1] = 5.0
        with pytest.raises(CalibrationError) as info:
            calibrate_cell_size(
                build_constant_controller([1.0, 1.0]),
                (np.eye(4), B),
                domain,
                max_cells_per_axis=2,
            )
        err = info.value
        assert "certification" in str(err)
        assert "history" in err.diagnostics
        assert err.diagnostics["failure"]["verdict"] == "SAT"


class TestForwardTube:
    def test_rejects_bad_iterations(self):
        with pytest.raises(ValueError):
            forward_tube(zero_net(), frozen_dyn(), Box([0, 0, 0, 0], [1, 1, 1, 1]), n_iter=0)

    def test_frozen_dynamics_stationary_tube(self):
        start = Box([0.1, 0.1, -0.01, -0.01], [0.2, 0.2, 0.01, 0.01])
        res = forward_tube(zero_net(), frozen_dyn(), start, n_iter=5)
        assert len(res.boxes) == 6
        # interval propagation rounds outward, so expect ulp-level padding
        for b in res.boxes:
            assert np.allclose(b.lo, start.lo, rtol=0, atol=1e-12)
            assert np.allclose(b.hi, start.hi, rtol=0, atol=1e-12)
        assert res.reached_goal_at == 1  # already inside the goal square
        assert res.diverged_at is None

    def test_contraction_halves_boxes(self):
        start = Box([0.8, 0.8, -0.1, -0.1], [1.2, 1.2, 0.1, 0.1])
        res = forward_tube(zero_net(), (0.5 * np.eye(4), np.zeros((4, 2))), start, n_iter=4)
        for i, b in enumerate(res.boxes):
            assert np.allclose(b.hi, start.hi * 0.5**i, rtol=0, atol=0)
        # halving needs two steps to fit 1.2 under 0.35
        assert res.reached_goal_at == 2

    def test_expansion_diverges(self):
        start = Box([1.0, 1.0, 0.0, 0.0], [2.0, 2.0, 0.0, 0.0])
        domain = Box([-5, -5, -1, -1], [5, 5, 1, 1])
        res = forward_tube(
            zero_net(), (2.0 * np.eye(4), np.zeros((4, 2))), start, n_iter=4, domain=domain
        )
        assert res.diverged_at == 2
        assert res.reached_goal_at is None

    def test_contains_sampled_trajectories(self, shipped, params, rng, transition):
        start = Box([2.0, 2.0, -0.02, -0.02], [2.2, 2.2, 0.02, 0.02])
        res = forward_tube(shipped, params, start, n_iter=10)
        A, B = transition
        s = rng.uniform(start.lo, start.hi, size=(50, 4))
        from dockverify.netgraph import forward

        for i in range(1, 11):
            u = np.clip(forward(shipped, s), -1.0, 1.0)
            s = s @ A.T + u @ B.T
            assert np.all(s >= res.boxes[i].lo - 1e-12)
            assert np.all(s <= res.boxes[i].hi + 1e-12)

    def test_json_shape(self):
        res = TubeResult([Box([0, 0, 0, 0], [1, 1, 1, 1])], 3, None)
        doc = res.to_json()
        assert doc["reached_goal_at"] == 3 and doc["diverged_at"] is None
        assert doc["boxes"][0]["lo"] == [0.0, 0.0, 0.0, 0.0]
