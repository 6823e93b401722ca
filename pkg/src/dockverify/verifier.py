"""Sound and complete checking of linear output constraints on PwlGraphs.

Queries restrict the graph input to an axis-aligned box and ask whether a
conjunction of disjunctive linear clauses over the outputs is satisfiable.
The decision procedure combines interval bound propagation with an affine
(zonotope) relaxation for tighter bounds, concrete candidate sampling for
counterexamples, and recursive input splitting.  Branch exploration is
breadth-first with the whole frontier propagated in one vectorized pass;
a cheap interval-only pass filters the frontier before the zonotope runs.
UNSAT verdicts mean no input in the box satisfies all clauses; SAT verdicts
carry a concretely re-validated counterexample.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from heapq import heappop, heappush
from typing import Mapping

import numpy as np

from .netgraph import PwlGraph

__all__ = [
    "Box",
    "LinearConstraint",
    "Query",
    "Verdict",
    "Budget",
    "BudgetError",
    "MinResult",
    "split_box",
    "interval_bounds",
    "check",
    "find_min_output",
]

# Strict inequalities are decided with this robustness margin so that
# floating-point verdicts are meaningful over the reals; counterexamples are
# accepted with concrete slack down to -VALIDATION_SLACK.
STRICT_MARGIN = 1e-9
VALIDATION_SLACK = 1e-9

# Boxes narrower than this on every axis are treated as points: candidate
# evaluation stands in for further splitting, which the decision margins
# above dominate by four orders of magnitude.
_WIDTH_FLOOR = 1e-13

# Frontier boxes propagated per vectorized pass.
_CHUNK = 512

_RELATIONS = ("<=", "<", ">=", ">")


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned hyperrectangle over the graph input coordinates."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"box bounds must be equal-length vectors, got {lo.shape}, {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi componentwise")

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, x, tol: float = 0.0) -> bool:
        a = np.asarray(x, dtype=np.float64)
        return bool(np.all(a >= self.lo - tol) and np.all(a <= self.hi + tol))

    def split(self, dim: int) -> tuple["Box", "Box"]:
        if not self.lo[dim] < self.hi[dim]:
            raise ValueError(f"cannot split degenerate dimension {dim}")
        mid = 0.5 * (self.lo[dim] + self.hi[dim])
        left_hi = self.hi.copy()
        left_hi[dim] = mid
        right_lo = self.lo.copy()
        right_lo[dim] = mid
        return Box(self.lo, left_hi), Box(right_lo, self.hi)


def split_box(box: Box, dim: int) -> tuple[Box, Box]:
    """Bisect the box at the midpoint of the given dimension."""
    return box.split(dim)


class LinearConstraint:
    """A linear relation over the flat graph output vector.

    coeffs maps output coordinate indices to coefficients; relation is one
    of <=, <, >=, >; at least one coefficient must be nonzero.
    """

    __slots__ = ("coeffs", "rel", "rhs")

    def __init__(self, coeffs, rel: str, rhs: float) -> None:
        if isinstance(coeffs, Mapping):
            pairs = tuple(sorted((int(i), float(c)) for i, c in coeffs.items()))
        else:
            pairs = tuple(sorted((int(i), float(c)) for i, c in coeffs))
        if rel not in _RELATIONS:
            raise ValueError(f"relation must be one of {_RELATIONS}, got {rel!r}")
        if not any(c != 0.0 for _, c in pairs):
            raise ValueError("constraint needs at least one nonzero coefficient")
        if not np.isfinite(rhs) or any(not np.isfinite(c) for _, c in pairs):
            raise ValueError("constraint coefficients must be finite")
        self.coeffs = pairs
        self.rel = rel
        self.rhs = float(rhs)

    def dense(self, out_dim: int) -> np.ndarray:
        a = np.zeros(out_dim)
        for i, c in self.coeffs:
            if i >= out_dim:
                raise ValueError(f"constraint references output {i}, graph has {out_dim}")
            a[i] = c
        return a

    def __repr__(self) -> str:
        terms = " + ".join(f"{c:g}*y[{i}]" for i, c in self.coeffs)
        return f"({terms} {self.rel} {self.rhs:g})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LinearConstraint)
            and self.coeffs == other.coeffs
            and self.rel == other.rel
            and self.rhs == other.rhs
        )


@dataclass(frozen=True, eq=False)
class Query:
    """A satisfiability question: input box plus clauses over the outputs.

    clauses is a conjunction of disjunctions: every clause must be satisfied
    by at least one of its constraints.
    """

    graph: PwlGraph
    box: Box
    clauses: tuple[tuple[LinearConstraint, ...], ...]

    def __post_init__(self) -> None:
        clauses = tuple(tuple(cl) for cl in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        if self.box.dim != self.graph.input_dim:
            raise ValueError(
                f"box has {self.box.dim} dims, graph expects {self.graph.input_dim}"
            )
        out_dim = self.graph.output_dim
        if not clauses:
            raise ValueError("query needs at least one clause")
        for jc, cl in enumerate(clauses):
            if not cl:
                raise ValueError(f"clause {jc} is empty")
            for con in cl:
                for i, _ in con.coeffs:
                    if i >= out_dim:
                        raise ValueError(
                            f"clause {jc} references output {i}, graph has {out_dim}"
                        )


@dataclass
class Verdict:
    status: str  # "UNSAT" | "SAT" | "TIMEOUT"
    counterexample: np.ndarray | None
    branches: int
    wall_time_s: float

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "counterexample": None
            if self.counterexample is None
            else [float(v) for v in self.counterexample],
            "branches": self.branches,
            "wall_time_s": self.wall_time_s,
        }


@dataclass(frozen=True)
class Budget:
    """Resource limits for one query; defaults follow the benchmark setup."""

    timeout_s: float = 5000.0
    max_branches: int = 2_000_000


class BudgetError(RuntimeError):
    """Raised by find_min_output when the budget runs out; carries the best
    certified lower bound and incumbent found so far."""

    def __init__(self, lower_bound: float, achieved: float, achiever: np.ndarray, branches: int):
        super().__init__(
            f"budget exhausted: certified lower bound {lower_bound}, incumbent {achieved}"
        )
        self.lower_bound = lower_bound
        self.achieved = achieved
        self.achiever = achiever
        self.branches = branches


@dataclass
class MinResult:
    lower_bound: float
    achiever: np.ndarray
    achieved: float
    branches: int


# ---------------------------------------------------------------------------
# Bound propagation


def interval_bounds(graph: PwlGraph, box: Box) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-node interval bounds by plain interval arithmetic."""
    if box.dim != graph.input_dim:
        raise ValueError(f"box has {box.dim} dims, graph expects {graph.input_dim}")
    offs = graph.input_offsets()
    bounds: list[tuple[np.ndarray, np.ndarray]] = []
    for node in graph.nodes:
        if node.kind == "input":
            lo = box.lo[offs[node.index] : offs[node.index + 1]]
            hi = box.hi[offs[node.index] : offs[node.index + 1]]
        elif node.kind == "affine":
            c = node.bias.astype(np.float64).copy()
            r = np.zeros(node.dim)
            for m, ref in zip(node.mats, node.refs):
                blo, bhi = bounds[ref]
                c += m @ (0.5 * (blo + bhi))
                r += np.abs(m) @ (0.5 * (bhi - blo))
            lo, hi = c - r, c + r
        elif node.kind == "relu":
            blo, bhi = bounds[node.refs[0]]
            lo, hi = np.maximum(blo, 0.0), np.maximum(bhi, 0.0)
        else:  # clamp
            blo, bhi = bounds[node.refs[0]]
            lo = np.clip(blo, node.lo, node.hi)
            hi = np.clip(bhi, node.lo, node.hi)
        bounds.append((lo, hi))
    return bounds


class _GraphPlan:
    """Static layout for batched propagation.

    Error symbols are laid out in node order: input coordinates first, then
    one column per relu/clamp unit.  width_after[i] is the number of symbol
    columns in play once node i is processed, so generator arrays can stay
    narrow early in the graph.
    """

    def __init__(self, graph: PwlGraph):
        self.graph = graph
        n = graph.input_dim
        self.sym_base: list[int] = []
        self.width_after: list[int] = []
        for node in graph.nodes:
            if node.kind in ("relu", "clamp"):
                self.sym_base.append(n)
                n += node.dim
            else:
                self.sym_base.append(-1)
            self.width_after.append(n)
        self.n_syms = n
        last_use = [0] * len(graph.nodes)
        for i, node in enumerate(graph.nodes):
            for r in node.refs:
                last_use[r] = i
        for o in graph.outputs:
            last_use[o] = len(graph.nodes)
        self.last_use = last_use


_plan_cache: dict[int, _GraphPlan] = {}


def _plan_for(graph: PwlGraph) -> _GraphPlan:
    plan = _plan_cache.get(id(graph))
    if plan is None or plan.graph is not graph:
        plan = _GraphPlan(graph)
        _plan_cache[id(graph)] = plan
        if len(_plan_cache) > 64:
            _plan_cache.pop(next(iter(_plan_cache)))
    return plan


def _ibp_outputs(plan: _GraphPlan, los: np.ndarray, his: np.ndarray):
    """Batched interval pass; returns flat output bounds (B, out_dim)."""
    graph = plan.graph
    B = los.shape[0]
    offs = graph.input_offsets()
    lows: list[np.ndarray | None] = [None] * len(graph.nodes)
    highs: list[np.ndarray | None] = [None] * len(graph.nodes)
    for idx, node in enumerate(graph.nodes):
        if node.kind == "input":
            sl = slice(offs[node.index], offs[node.index + 1])
            lo, hi = los[:, sl], his[:, sl]
        elif node.kind == "affine":
            c = np.broadcast_to(node.bias, (B, node.dim)).copy()
            r = np.zeros((B, node.dim))
            for m, ref in zip(node.mats, node.refs):
                mid = 0.5 * (lows[ref] + highs[ref])
                rad = 0.5 * (highs[ref] - lows[ref])
                c += mid @ m.T
                r += rad @ np.abs(m).T
            lo, hi = c - r, c + r
        elif node.kind == "relu":
            lo = np.maximum(lows[node.refs[0]], 0.0)
            hi = np.maximum(highs[node.refs[0]], 0.0)
        else:  # clamp
            lo = np.clip(lows[node.refs[0]], node.lo, node.hi)
            hi = np.clip(highs[node.refs[0]], node.lo, node.hi)
        lows[idx] = lo
        highs[idx] = hi
        for r in set(node.refs):
            if plan.last_use[r] == idx and r not in graph.outputs:
                lows[r] = highs[r] = None
    out_lo = np.concatenate([lows[o] for o in graph.outputs], axis=1)
    out_hi = np.concatenate([highs[o] for o in graph.outputs], axis=1)
    return out_lo, out_hi


class _BatchProp:
    """IBP intersected with a zonotope pass over a batch of boxes.

    los/his have shape (B, input_dim).  Exposes per-box output bounds, the
    output affine form (centers and generators over the shared symbol
    layout), and an input-sensitivity score for split-dimension choice.
    """

    __slots__ = ("out_lo", "out_hi", "out_c", "out_g", "sens")

    def __init__(self, plan: _GraphPlan, los: np.ndarray, his: np.ndarray):
        graph = plan.graph
        B = los.shape[0]
        d_in = graph.input_dim
        offs = graph.input_offsets()
        sens = np.zeros((B, d_in))
        in_c = 0.5 * (los + his)
        in_r = 0.5 * (his - los)
        centers: list[np.ndarray | None] = [None] * len(graph.nodes)
        gens: list[np.ndarray | None] = [None] * len(graph.nodes)
        lows: list[np.ndarray | None] = [None] * len(graph.nodes)
        highs: list[np.ndarray | None] = [None] * len(graph.nodes)
        for idx, node in enumerate(graph.nodes):
            w = plan.width_after[idx]
            if node.kind == "input":
                sl = slice(offs[node.index], offs[node.index + 1])
                c = in_c[:, sl].copy()
                g = np.zeros((B, node.dim, w))
                for row, col in enumerate(range(sl.start, sl.stop)):
                    g[:, row, col] = in_r[:, col]
                ilo, ihi = los[:, sl], his[:, sl]
            elif node.kind == "affine":
                c = np.broadcast_to(node.bias, (B, node.dim)).copy()
                g = np.zeros((B, node.dim, w))
                ilo = c.copy()
                ihi = c.copy()
                for m, ref in zip(node.mats, node.refs):
                    c += centers[ref] @ m.T
                    wr = gens[ref].shape[2]
                    g[:, :, :wr] += np.matmul(m, gens[ref])
                    mid = 0.5 * (lows[ref] + highs[ref])
                    rad = 0.5 * (highs[ref] - lows[ref])
                    ilo += mid @ m.T - rad @ np.abs(m).T
                    ihi += mid @ m.T + rad @ np.abs(m).T
            else:
                ref = node.refs[0]
                c0, g0 = centers[ref], gens[ref]
                rl, rh = lows[ref], highs[ref]
                if node.kind == "relu":
                    dead = rh <= 0.0
                    unstable = (~dead) & (rl < 0.0)
                    lam = np.where(dead, 0.0, 1.0)
                    denom = np.where(unstable, rh - rl, 1.0)
                    lam = np.where(unstable, rh / denom, lam)
                    beta = np.where(unstable, 0.5 * lam * (-rl), 0.0)
                    mu = beta
                    ilo = np.maximum(rl, 0.0)
                    ihi = np.maximum(rh, 0.0)
                else:  # clamp
                    clo, chi = node.lo, node.hi
                    gl = np.clip(rl, clo, chi)
                    gu = np.clip(rh, clo, chi)
                    span = rh - rl
                    degenerate = span <= 0.0
                    lam = np.where(degenerate, 0.0, (gu - gl) / np.where(degenerate, 1.0, span))
                    # deviation of clip(x) - lam*x at endpoints and interior kinks
                    dev_lo = gl - lam * rl
                    dev_hi = gu - lam * rh
                    dmin = np.minimum(dev_lo, dev_hi)
                    dmax = np.maximum(dev_lo, dev_hi)
                    kink_lo = (rl < clo) & (clo < rh)
                    dev_k = clo - lam * clo
                    dmin = np.where(kink_lo, np.minimum(dmin, dev_k), dmin)
                    dmax = np.where(kink_lo, np.maximum(dmax, dev_k), dmax)
                    kink_hi = (rl < chi) & (chi < rh)
                    dev_k2 = chi - lam * chi
                    dmin = np.where(kink_hi, np.minimum(dmin, dev_k2), dmin)
                    dmax = np.where(kink_hi, np.maximum(dmax, dev_k2), dmax)
                    mu = np.where(degenerate, gl, 0.5 * (dmax + dmin))
                    beta = np.where(degenerate, 0.0, 0.5 * (dmax - dmin))
                    ilo, ihi = gl, gu
                c = lam * c0 + mu
                wr = g0.shape[2]
                g = np.zeros((B, node.dim, w))
                g[:, :, :wr] = lam[:, :, None] * g0
                base = plan.sym_base[idx]
                for coord in range(node.dim):
                    g[:, coord, base + coord] = beta[:, coord]
                act = beta > 0.0
                if np.any(act):
                    sens += np.einsum(
                        "bj,bjd->bd", act.astype(np.float64), np.abs(g0[:, :, :d_in]), optimize=True
                    )
            rad_z = np.sum(np.abs(g), axis=2)
            lo = np.maximum(ilo, c - rad_z)
            hi = np.minimum(ihi, c + rad_z)
            bad = lo > hi  # float-level disagreement between the two passes
            if np.any(bad):
                mid = 0.5 * (lo + hi)
                lo = np.where(bad, mid, lo)
                hi = np.where(bad, mid, hi)
            centers[idx] = c
            gens[idx] = g
            lows[idx] = lo
            highs[idx] = hi
            for r in set(node.refs):
                if plan.last_use[r] == idx and r not in graph.outputs:
                    centers[r] = gens[r] = lows[r] = highs[r] = None
        self.out_lo = np.concatenate([lows[o] for o in graph.outputs], axis=1)
        self.out_hi = np.concatenate([highs[o] for o in graph.outputs], axis=1)
        self.out_c = np.concatenate([centers[o] for o in graph.outputs], axis=1)
        S = plan.n_syms
        padded = []
        for o in graph.outputs:
            go = gens[o]
            if go.shape[2] < S:
                full = np.zeros((B, go.shape[1], S))
                full[:, :, : go.shape[2]] = go
                go = full
            padded.append(go)
        self.out_g = np.concatenate(padded, axis=1)
        self.sens = sens


def _linear_lo(a: np.ndarray, prop: _BatchProp) -> np.ndarray:
    """Certified per-box lower bound of a . outputs (max of IBP and zonotope)."""
    pos = np.maximum(a, 0.0)
    neg = np.minimum(a, 0.0)
    lo_i = prop.out_lo @ pos + prop.out_hi @ neg
    proj = np.matmul(a, prop.out_g)
    lo_z = prop.out_c @ a - np.sum(np.abs(proj), axis=1)
    return np.maximum(lo_i, lo_z)


def _interval_lo(a: np.ndarray, out_lo: np.ndarray, out_hi: np.ndarray) -> np.ndarray:
    pos = np.maximum(a, 0.0)
    neg = np.minimum(a, 0.0)
    return out_lo @ pos + out_hi @ neg


def _canonical(query: Query) -> list[list[tuple[np.ndarray, float]]]:
    """Each constraint becomes (a, ub): satisfied iff a . y <= ub."""
    out_dim = query.graph.output_dim
    canon = []
    for cl in query.clauses:
        dis = []
        for con in cl:
            a = con.dense(out_dim)
            if con.rel == "<=":
                dis.append((a, con.rhs))
            elif con.rel == "<":
                dis.append((a, con.rhs - STRICT_MARGIN))
            elif con.rel == ">=":
                dis.append((-a, -con.rhs))
            else:
                dis.append((-a, -con.rhs - STRICT_MARGIN))
        canon.append(dis)
    return canon


def _satisfies_batch(canon, ys: np.ndarray) -> np.ndarray:
    """Mask over points satisfying every clause with the validation slack."""
    ok = np.ones(ys.shape[0], dtype=bool)
    for dis in canon:
        any_dis = np.zeros(ys.shape[0], dtype=bool)
        for a, ub in dis:
            any_dis |= ys @ a <= ub + VALIDATION_SLACK
        ok &= any_dis
    return ok


def _corner_masks(d: int) -> np.ndarray:
    if d <= 5:
        return np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.float64)
    masks = [np.full(d, 0.5)]
    for i in range(d):
        for b in (0.0, 1.0):
            m = np.full(d, 0.5)
            m[i] = b
            masks.append(m)
    return np.stack(masks)


def _candidate_points(los, his, out_g, canon) -> np.ndarray:
    """(B, P, d) deterministic concrete points to try per box."""
    B, d = los.shape
    pts = [0.5 * (los + his)[:, None, :]]
    masks = _corner_masks(d)  # (M, d) in [0,1]
    pts.append(los[:, None, :] + masks[None, :, :] * (his - los)[:, None, :])
    if canon is not None:
        half = 0.5 * (his - los)
        center = 0.5 * (los + his)
        guided = []
        for dis in canon:
            for a, _ in dis:
                proj = np.matmul(a, out_g)[:, :d]
                guided.append(center - np.sign(proj) * half)
        if guided:
            gar = np.stack(guided, axis=1)  # (B, n, d)
            pts.append(gar)
            pts.append(np.mean(gar, axis=1, keepdims=True))
    allp = np.concatenate(pts, axis=1)
    return np.clip(allp, los[:, None, :], his[:, None, :])


def _split_dims(los, his, score) -> np.ndarray:
    """Pick per-box split dimensions, falling back to widest when the
    variation score is degenerate."""
    width = his - los
    score = np.where(np.all(score <= 0, axis=1, keepdims=True), width, score)
    score = np.where(width > _WIDTH_FLOOR, score, 0.0)
    return np.argmax(score, axis=1)


def check(query: Query, budget: Budget = Budget()) -> Verdict:
    """Decide the query by bound pruning, sampling, and input splitting.

    UNSAT: no input in the box satisfies all clauses.  SAT: the returned
    counterexample satisfies every clause with concrete slack above
    -VALIDATION_SLACK.  TIMEOUT: budget exhausted first.
    """
    t0 = time.monotonic()
    canon = _canonical(query)
    graph = query.graph
    plan = _plan_for(graph)
    stack: list[tuple[np.ndarray, np.ndarray]] = [
        (query.box.lo[None, :], query.box.hi[None, :])
    ]
    branches = 0
    while stack:
        los, his = stack.pop()
        if los.shape[0] > _CHUNK:
            stack.append((los[_CHUNK:], his[_CHUNK:]))
            los, his = los[:_CHUNK], his[:_CHUNK]
        if branches >= budget.max_branches or time.monotonic() - t0 > budget.timeout_s:
            return Verdict("TIMEOUT", None, branches, time.monotonic() - t0)
        branches += los.shape[0]
        ib_lo, ib_hi = _ibp_outputs(plan, los, his)
        alive = np.ones(los.shape[0], dtype=bool)
        for dis in canon:
            refuted = np.ones(los.shape[0], dtype=bool)
            for a, ub in dis:
                refuted &= _interval_lo(a, ib_lo, ib_hi) > ub
            alive &= ~refuted
            if not np.any(alive):
                break
        if not np.any(alive):
            continue
        los, his = los[alive], his[alive]
        prop = _BatchProp(plan, los, his)
        nb = los.shape[0]
        d_in = los.shape[1]
        alive = np.ones(nb, dtype=bool)
        # For boxes no clause refutes, split along the direction that most
        # shrinks the variation of the clause closest to refuting.
        best_close = np.full(nb, -np.inf)
        best_grad = np.zeros((nb, d_in))
        for dis in canon:
            gaps = []
            grads = []
            for a, ub in dis:
                proj = np.matmul(a, prop.out_g)
                lo_z = prop.out_c @ a - np.sum(np.abs(proj), axis=1)
                lo_i = _interval_lo(a, prop.out_lo, prop.out_hi)
                gaps.append(np.maximum(lo_z, lo_i) - ub)
                grads.append(np.abs(proj[:, :d_in]))
            gaps = np.stack(gaps)  # (n_dis, nb)
            alive &= ~np.all(gaps > 0.0, axis=0)
            blocking = np.argmin(gaps, axis=0)
            closeness = np.take_along_axis(gaps, blocking[None, :], axis=0)[0]
            cgrad = np.stack(grads)[blocking, np.arange(nb)]
            better = closeness > best_close
            best_close = np.where(better, closeness, best_close)
            best_grad = np.where(better[:, None], cgrad, best_grad)
        if not np.any(alive):
            continue
        los, his = los[alive], his[alive]
        out_g = prop.out_g[alive]
        score = best_grad[alive] + prop.sens[alive]
        cands = _candidate_points(los, his, out_g, canon)
        B, P, d = cands.shape
        ys = graph.eval(cands.reshape(B * P, d))
        ok = _satisfies_batch(canon, ys).reshape(B, P)
        if np.any(ok):
            b_idx, p_idx = np.argwhere(ok)[0]
            return Verdict("SAT", cands[b_idx, p_idx], branches, time.monotonic() - t0)
        dims = _split_dims(los, his, score)
        widths = np.take_along_axis(his - los, dims[:, None], axis=1)[:, 0]
        splittable = widths > _WIDTH_FLOOR
        if not np.any(splittable):
            continue
        los, his, dims = los[splittable], his[splittable], dims[splittable]
        mids = 0.5 * (
            np.take_along_axis(los, dims[:, None], axis=1)
            + np.take_along_axis(his, dims[:, None], axis=1)
        )[:, 0]
        left_hi = his.copy()
        right_lo = los.copy()
        rows = np.arange(los.shape[0])
        left_hi[rows, dims] = mids
        right_lo[rows, dims] = mids
        stack.append((np.concatenate([los, right_lo]), np.concatenate([left_hi, his])))
    return Verdict("UNSAT", None, branches, time.monotonic() - t0)


def find_min_output(
    graph: PwlGraph,
    box: Box,
    output_index: int,
    tol: float,
    budget: Budget = Budget(),
) -> MinResult:
    """Certified minimization of one output coordinate over the box.

    Returns L with output >= L everywhere on the box and a concrete achiever
    within tol of L.  Raises BudgetError (with the best bound so far) if the
    budget runs out first.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    if not (0 <= output_index < graph.output_dim):
        raise ValueError(f"output index {output_index} out of range")
    t0 = time.monotonic()
    plan = _plan_for(graph)
    a = np.zeros(graph.output_dim)
    a[output_index] = 1.0
    counter = itertools.count()
    best_val = np.inf
    best_pt = box.center()

    def visit(los: np.ndarray, his: np.ndarray):
        """Sample candidates, update the incumbent, return per-box lower bounds."""
        nonlocal best_val, best_pt
        prop = _BatchProp(plan, los, his)
        cands = _candidate_points(los, his, prop.out_g, [[(a, 0.0)]])
        B, P, d = cands.shape
        ys = graph.eval(cands.reshape(B * P, d))[:, output_index]
        i = int(np.argmin(ys))
        if ys[i] < best_val:
            best_val = float(ys[i])
            best_pt = cands.reshape(B * P, d)[i]
        proj = np.matmul(a, prop.out_g)
        score = np.abs(proj[:, :d]) + prop.sens
        return _linear_lo(a, prop), _split_dims(los, his, score)

    lbs, dims = visit(box.lo[None, :], box.hi[None, :])
    heap: list[tuple[float, int, np.ndarray, np.ndarray, int]] = []
    heappush(heap, (float(lbs[0]), next(counter), box.lo, box.hi, int(dims[0])))
    branches = 1
    while heap:
        lb, _, lo, hi, dim = heappop(heap)
        if best_val - lb <= tol:
            return MinResult(lb, best_pt, best_val, branches)
        if branches >= budget.max_branches or time.monotonic() - t0 > budget.timeout_s:
            raise BudgetError(lb, best_val, best_pt, branches)
        if hi[dim] - lo[dim] <= _WIDTH_FLOOR:
            # point-like region: its bound is as tight as it will get
            if best_val - lb <= max(tol, 1e-12):
                return MinResult(lb, best_pt, best_val, branches)
            continue
        mid = 0.5 * (lo[dim] + hi[dim])
        l_hi = hi.copy()
        l_hi[dim] = mid
        r_lo = lo.copy()
        r_lo[dim] = mid
        los = np.stack([lo, r_lo])
        his = np.stack([l_hi, hi])
        lbs, dims = visit(los, his)
        branches += 2
        for j in range(2):
            heappush(heap, (float(lbs[j]), next(counter), los[j], his[j], int(dims[j])))
    return MinResult(best_val, best_pt, best_val, branches)
