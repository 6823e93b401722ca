"""Encoders that turn docking properties into verifier queries.

Covers the goal square, the piecewise-linear Euclidean-norm sandwich, the
velocity-envelope unsafe-set over-approximation, the k-step norm-decrease
property, reach-while-avoid certificate conditions, and the shell used to
sample just beyond the unsafe boundary.  Encoders are pure: they emit
immutable graphs, clauses, and queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import netgraph as ng
from .netgraph import GraphBuilder, Mlp, PwlGraph
from .verifier import Box, LinearConstraint, Query, interval_bounds

__all__ = [
    "DirectionSet",
    "SafetySpec",
    "GoalSpec",
    "encode_norm_under",
    "encode_norm_over",
    "encode_unsafe_overapprox",
    "encode_goal",
    "encode_kind_property",
    "encode_rwa_condition",
    "encode_sampling_region",
    "RWA_CONDITIONS",
]

# Default angular resolution of the norm sandwich.
N_DIRECTIONS = 400

# Default tolerance for the k-step decrease property: well above verifier
# margins, well below region sizes.
KIND_EPSILON = 1e-3


@dataclass(frozen=True)
class DirectionSet:
    """First-quadrant unit directions at uniform angular spacing.

    n_directions counts directions on the full circle; by symmetry of
    |u1|, |u2| only the quadrant [0, pi/2] inclusive is materialized.
    """

    n_directions: int = N_DIRECTIONS

    def __post_init__(self) -> None:
        n = self.n_directions
        if n <= 0 or n % 4 != 0:
            raise ValueError(f"n_directions must be a positive multiple of 4, got {n}")

    @property
    def angles(self) -> np.ndarray:
        i = np.arange(1, self.n_directions // 4 + 2)
        return 2.0 * (i - 1) * np.pi / self.n_directions

    @property
    def cos(self) -> np.ndarray:
        return np.cos(self.angles)

    @property
    def sin(self) -> np.ndarray:
        return np.sin(self.angles)

    @property
    def over_factor(self) -> float:
        """1/cos(half spacing), nudged up so over >= true norm holds in
        floating point."""
        f = 1.0 / math.cos(math.pi / self.n_directions)
        for _ in range(2):
            f = math.nextafter(f, math.inf)
        return f


@dataclass(frozen=True)
class SafetySpec:
    """Velocity envelope: speed must stay below v0 + slope * distance."""

    v0: float = 0.2
    slope: float = 2 * 0.001027
    directions: DirectionSet = field(default_factory=DirectionSet)

    def __post_init__(self) -> None:
        if self.v0 <= 0:
            raise ValueError(f"base speed must be positive, got {self.v0!r}")
        if self.slope <= 0:
            raise ValueError(f"slope must be positive, got {self.slope!r}")


@dataclass(frozen=True)
class GoalSpec:
    """Docking target: the axis-aligned square |x|, |y| <= half_side."""

    half_side: float = 0.35

    def __post_init__(self) -> None:
        if self.half_side <= 0:
            raise ValueError(f"half_side must be positive, got {self.half_side!r}")

    def contains(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        inside = (np.abs(s[:, 0]) <= self.half_side) & (np.abs(s[:, 1]) <= self.half_side)
        return inside if np.asarray(states).ndim > 1 else inside[0]


def _norm_terms(bld: GraphBuilder, u_ref: int, d: DirectionSet) -> int:
    """Node holding cos(t_i)|u1| + sin(t_i)|u2| for every direction i."""
    if bld.dim(u_ref) != 2:
        raise ValueError(f"norm encoders need a 2-dim node, got dim {bld.dim(u_ref)}")
    a = ng.gadget_abs(bld, u_ref)
    mat = np.stack([d.cos, d.sin], axis=1)
    return bld.affine([a], [mat])


def encode_norm_under(bld: GraphBuilder, u_ref: int, d: DirectionSet) -> int:
    """Scalar node under-approximating the Euclidean norm of a 2-dim node.

    under = max over directions of the projected L1 terms; exact at
    axis-aligned inputs, never above the true norm.
    """
    terms = _norm_terms(bld, u_ref, d)
    m = bld.dim(terms)
    acc = bld.select(terms, [0])
    for i in range(1, m):
        acc = ng.gadget_max(bld, [acc, bld.select(terms, [i])])
    return acc


def encode_norm_over(bld: GraphBuilder, u_ref: int, d: DirectionSet) -> int:
    """Scalar node over-approximating the Euclidean norm of a 2-dim node."""
    return bld.scale(encode_norm_under(bld, u_ref, d), d.over_factor)


def encode_unsafe_overapprox(
    bld: GraphBuilder, state_ref: int, spec: SafetySpec
) -> tuple[LinearConstraint, ...]:
    """Clause that is true whenever the state violates the velocity envelope.

    Over-approximation direction: envelope-violating states always satisfy
    the clause; some safe states near the boundary may too.  Adds the norm
    towers and one scalar output to the builder; the returned clause
    references that output.
    """
    if bld.dim(state_ref) != 4:
        raise ValueError(f"state node must have 4 coordinates, got {bld.dim(state_ref)}")
    pos = bld.select(state_ref, [0, 1])
    vel = bld.select(state_ref, [2, 3])
    under_p = encode_norm_under(bld, pos, spec.directions)
    under_v = encode_norm_under(bld, vel, spec.directions)
    expr = bld.affine(
        [under_v, under_p],
        [np.array([[spec.directions.over_factor]]), np.array([[-spec.slope]])],
    )
    off = bld.add_output(expr)
    return (LinearConstraint({off: 1.0}, ">", spec.v0),)


def encode_goal(state_offset: int, g: GoalSpec):
    """Goal-square membership as clauses over raw state outputs.

    Returns (inside_clauses, outside_clause): the conjunction of four
    half-plane clauses putting (x, y) in the square, and the single
    4-disjunct clause putting the state strictly outside it.
    """
    h = g.half_side
    ox, oy = state_offset, state_offset + 1
    inside = (
        (LinearConstraint({ox: 1.0}, "<=", h),),
        (LinearConstraint({ox: 1.0}, ">=", -h),),
        (LinearConstraint({oy: 1.0}, "<=", h),),
        (LinearConstraint({oy: 1.0}, ">=", -h),),
    )
    outside = (
        LinearConstraint({ox: 1.0}, ">", h),
        LinearConstraint({ox: 1.0}, "<", -h),
        LinearConstraint({oy: 1.0}, ">", h),
        LinearConstraint({oy: 1.0}, "<", -h),
    )
    return inside, outside


def _unrolled_states(bld: GraphBuilder, net: Mlp, A, B, f_max: float, k: int) -> list[int]:
    s = bld.input(4)
    states = [s]
    for _ in range(k):
        u = ng._clamp_via_gadgets(bld, bld.add_mlp(states[-1], net), -f_max, f_max)
        states.append(bld.affine([states[-1], u], [A, B]))
    return states


def encode_kind_property(
    net: Mlp,
    A,
    B,
    f_max: float,
    region: Box,
    k: int,
    eps: float = KIND_EPSILON,
    goal: GoalSpec | None = None,
) -> Query:
    """Query for the negated k-step decrease property over a region.

    A satisfying state has both L1 position and L1 velocity failing to drop
    by eps after k closed-loop steps (and lies outside the goal square when
    a goal is given).  UNSAT therefore proves every region state sees one of
    the two L1 norms decrease.

    Absolute values whose argument has fixed sign on the region (proved by
    an interval pass) are encoded as plain +/- coefficients; only genuinely
    sign-straddling coordinates get relu gadget towers.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    if k < 1:
        raise ValueError(f"horizon must be >= 1, got {k}")
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)

    bld = GraphBuilder()
    states = _unrolled_states(bld, net, A, B, f_max, k)
    off_s0 = bld.add_output(states[0])
    off_sk = bld.add_output(states[-1])
    probe = bld.build()
    blo, bhi = interval_bounds(probe, region)[states[-1]]

    def abs_terms(coord: int, at_k: bool) -> list[tuple[int, float]]:
        if at_k:
            lo, hi, base, node = blo[coord], bhi[coord], off_sk, states[-1]
        else:
            lo, hi, base, node = region.lo[coord], region.hi[coord], off_s0, states[0]
        if lo >= 0.0:
            return [(base + coord, 1.0)]
        if hi <= 0.0:
            return [(base + coord, -1.0)]
        g = ng.gadget_abs(bld, bld.select(node, [coord]))
        return [(bld.add_output(g), 1.0)]

    def combine(gain, drop):
        coeffs: dict[int, float] = {}
        for i, c in gain:
            coeffs[i] = coeffs.get(i, 0.0) + c
        for i, c in drop:
            coeffs[i] = coeffs.get(i, 0.0) - c
        return coeffs

    pos_k = abs_terms(0, True) + abs_terms(1, True)
    pos_0 = abs_terms(0, False) + abs_terms(1, False)
    vel_k = abs_terms(2, True) + abs_terms(3, True)
    vel_0 = abs_terms(2, False) + abs_terms(3, False)
    graph = bld.build()

    clauses = [
        (LinearConstraint(combine(pos_k, pos_0), ">=", -eps),),
        (LinearConstraint(combine(vel_k, vel_0), ">=", -eps),),
    ]
    if goal is not None:
        _, outside = encode_goal(off_s0, goal)
        clauses.append(outside)
    return Query(graph, region, tuple(clauses))


# ---------------------------------------------------------------------------
# Reach-while-avoid certificate conditions

RWA_CONDITIONS = ("floor", "init", "decrease", "unsafe")


def _check_witness(w) -> None:
    if not (w.alpha > w.beta >= w.gamma):
        raise ValueError(
            f"witness needs alpha > beta >= gamma, got {w.alpha}, {w.beta}, {w.gamma}"
        )
    if not w.epsilon > 0:
        raise ValueError(f"witness epsilon must be positive, got {w.epsilon!r}")


def _outside_box_clause(offset: int, box: Box) -> tuple[LinearConstraint, ...]:
    cons = []
    for i in range(box.dim):
        cons.append(LinearConstraint({offset + i: 1.0}, ">", float(box.hi[i])))
        cons.append(LinearConstraint({offset + i: 1.0}, "<", float(box.lo[i])))
    return tuple(cons)


def _direction_constraint(offset: int, a: np.ndarray, rel: str, rhs: float) -> LinearConstraint:
    return LinearConstraint({offset + i: float(c) for i, c in enumerate(a) if c != 0.0}, rel, rhs)


def _value_graph(V: Mlp) -> tuple[PwlGraph, int, int]:
    """Graph with outputs (x, V(x)); returns (graph, off_x, off_v)."""
    bld = GraphBuilder()
    x = bld.input(V.input_dim)
    v = bld.add_mlp(x, V)
    off_x = bld.add_output(x)
    off_v = bld.add_output(v)
    return bld.build(), off_x, off_v


def _step_graph(V: Mlp, controller: Mlp, plant) -> tuple[PwlGraph, int, int, int, int]:
    """Graph with outputs (x, x', V(x), V(x')) for one clamped closed-loop step."""
    A = np.asarray(plant.a, dtype=np.float64)
    B = np.asarray(plant.b, dtype=np.float64)
    n = A.shape[0]
    if V.input_dim != n or controller.input_dim != n:
        raise ValueError(
            f"certificate and controller must take {n}-dim states, got "
            f"{V.input_dim} and {controller.input_dim}"
        )
    bld = GraphBuilder()
    x = bld.input(n)
    u = ng._clamp_via_gadgets(bld, bld.add_mlp(x, controller), -plant.f_max, plant.f_max)
    x_next = bld.affine([x, u], [A, B])
    vx = bld.add_mlp(x, V)
    vn = bld.add_mlp(x_next, V)
    off_x = bld.add_output(x)
    off_xn = bld.add_output(x_next)
    off_v = bld.add_output(vx)
    off_vn = bld.add_output(vn)
    return bld.build(), off_x, off_xn, off_v, off_vn


def _unsafe_slab_box(domain: Box, a: np.ndarray, p: float, margin: float) -> Box:
    """Domain box tightened to the sampling shell when the direction is
    axis-aligned; the full domain otherwise (clauses still bound the slab)."""
    nz = np.flatnonzero(a)
    lo, hi = domain.lo.copy(), domain.hi.copy()
    if nz.size == 1:
        i = int(nz[0])
        c = a[i]
        lo[i] = max(lo[i], p / c if c > 0 else (p + margin) / c)
        hi[i] = min(hi[i], (p + margin) / c if c > 0 else p / c)
        if lo[i] > hi[i]:
            lo[i] = hi[i] = 0.5 * (lo[i] + hi[i])
    return Box(lo, hi)


def encode_rwa_condition(
    V: Mlp,
    controller: Mlp | None,
    plant,
    task,
    cond: str,
    w,
    region: Box | None = None,
) -> tuple[Query, ...]:
    """Queries whose joint UNSAT establishes one certificate condition.

    cond selects which Definition-style condition to negate:
      floor     exists x in X with V(x) < gamma
      init      exists x in X_I with V(x) > beta
      decrease  exists x in X outside goal and unsafe sets with V(x) <= beta
                and V(x) - V(x') < epsilon after one closed-loop step
      unsafe    exists x in a boundary shell of the unsafe set with V(x) < alpha

    task duck-types: domain/init/goal Boxes and unsafe directions (a, p,
    margin) with the unsafe set being the union of half-spaces a.x > p.
    region overrides the condition's default quantification box (used when
    verification tiles a region into cells).
    """
    _check_witness(w)
    if cond not in RWA_CONDITIONS:
        raise ValueError(f"condition must be one of {RWA_CONDITIONS}, got {cond!r}")
    if cond == "floor":
        graph, _, off_v = _value_graph(V)
        box = region if region is not None else task.domain
        clause = (LinearConstraint({off_v: 1.0}, "<", w.gamma),)
        return (Query(graph, box, (clause,)),)
    if cond == "init":
        graph, _, off_v = _value_graph(V)
        box = region if region is not None else task.init
        clause = (LinearConstraint({off_v: 1.0}, ">", w.beta),)
        return (Query(graph, box, (clause,)),)
    if cond == "decrease":
        if controller is None:
            raise ValueError("decrease condition needs the controller")
        graph, off_x, _, off_v, off_vn = _step_graph(V, controller, plant)
        box = region if region is not None else task.domain
        clauses = [
            (LinearConstraint({off_v: 1.0}, "<=", w.beta),),
            # V(x) - V(x') < eps, i.e. the drop falls short
            (LinearConstraint({off_v: 1.0, off_vn: -1.0}, "<", w.epsilon),),
            _outside_box_clause(off_x, task.goal),
        ]
        for d in task.unsafe:
            a = np.asarray(d.a, dtype=np.float64)
            clauses.append((_direction_constraint(off_x, a, "<=", float(d.p)),))
        return (Query(graph, box, tuple(clauses)),)
    # unsafe shell: one query per direction
    graph, off_x, off_v = _value_graph(V)
    queries = []
    for d in task.unsafe:
        a = np.asarray(d.a, dtype=np.float64)
        box = region if region is not None else _unsafe_slab_box(
            task.domain, a, float(d.p), float(d.margin)
        )
        clauses = (
            (LinearConstraint({off_v: 1.0}, "<", w.alpha),),
            (_direction_constraint(off_x, a, ">", float(d.p)),),
            (_direction_constraint(off_x, a, "<", float(d.p) + float(d.margin)),),
        )
        queries.append(Query(graph, box, clauses))
    return tuple(queries)


def encode_sampling_region(p, margins, offset: int = 0):
    """Shell just past componentwise lower bounds p, bounded by margins.

    Returns (clauses, predicate): clauses over coordinate outputs starting
    at offset encoding (or_i x_i > p_i) and (and_i x_i < p_i + margin_i);
    predicate evaluates the same condition on concrete points (vectorized).
    """
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    m = np.atleast_1d(np.asarray(margins, dtype=np.float64))
    if p.shape != m.shape or p.ndim != 1:
        raise ValueError(f"bounds and margins must be equal-length vectors, got {p.shape}, {m.shape}")
    if np.any(m <= 0):
        raise ValueError("margins must be strictly positive")
    n = p.shape[0]
    clauses = [
        tuple(LinearConstraint({offset + i: 1.0}, ">", float(p[i])) for i in range(n))
    ]
    for i in range(n):
        clauses.append((LinearConstraint({offset + i: 1.0}, "<", float(p[i] + m[i])),))

    def predicate(x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        one = arr.ndim == 1
        arr = np.atleast_2d(arr)
        ok = np.any(arr > p, axis=1) & np.all(arr < p + m, axis=1)
        return bool(ok[0]) if one else ok

    return tuple(clauses), predicate
