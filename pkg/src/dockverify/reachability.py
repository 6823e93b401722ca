"""Cell-graph reachability over a gridded state space.

The domain is partitioned into boxes: uniform cells in position, velocity
bands with a narrow band straddling zero so that ordinary cells have a
definite velocity sign.  Directed edges over-approximate the k-step
closed-loop transition relation: an edge is added exactly when the
verifier finds a state in the source cell whose k-step successor lands in
the target cell.  Cycle detection and a reverse fixpoint over the acyclic
part then give a liveness argument at the cell level, or diagnostics
explaining why none exists.

Cell membership follows a half-open convention: a cell owns its lower
faces, and query regions are shrunk by a hair at interior upper faces so
a shared face belongs to exactly one cell.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .dynamics import DynParams, affine_transition
from .netgraph import Mlp, compose_closed_loop
from .verifier import Box, Budget, LinearConstraint, Query, check, interval_bounds

__all__ = [
    "CellSpec",
    "CellGraph",
    "CalibrationError",
    "CycleError",
    "TubeResult",
    "calibrate_cell_size",
    "build_cell_graph",
    "find_cycles",
    "liveness_cells",
    "forward_tube",
    "cells_intersecting",
]

# Interior upper faces of query regions are pulled in by this much so that
# boundary states belong to a single cell.
_CELL_SHRINK = 1e-9

_EDGE_BUDGET = Budget(timeout_s=60.0, max_branches=200_000)


def _transition(dyn) -> tuple[np.ndarray, np.ndarray]:
    """Accept either dynamics params or an explicit (A, B) pair."""
    if isinstance(dyn, DynParams):
        return affine_transition(dyn)
    A, B = dyn
    return np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64)


@dataclass(frozen=True)
class CellSpec:
    """Grid geometry: positional cell widths plus velocity band edges.

    vel_edges holds the full sorted partition of each velocity axis; one
    band must straddle zero.  degenerate_columns lists (vel_dim, ix, iy)
    positional columns where exit from the zero band could not be proved;
    their sign-change cells may self-loop.
    """

    pos_widths: tuple[float, float]
    vel_edges: tuple[tuple[float, ...], tuple[float, ...]]
    degenerate_columns: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self) -> None:
        if len(self.pos_widths) != 2 or any(w <= 0 for w in self.pos_widths):
            raise ValueError(f"positional widths must be positive, got {self.pos_widths}")
        for edges in self.vel_edges:
            if len(edges) < 2:
                raise ValueError("each velocity axis needs at least one band")
            diffs = np.diff(edges)
            if np.any(diffs <= 0):
                raise ValueError(f"velocity edges must increase strictly: {edges}")
        for d in range(2):
            self.zero_band(d)

    def zero_band(self, vel_dim: int) -> int:
        """Index of the band whose interior contains zero velocity."""
        edges = self.vel_edges[vel_dim]
        for i in range(len(edges) - 1):
            if edges[i] < 0.0 < edges[i + 1]:
                return i
        raise ValueError(f"no band straddles zero on velocity axis {vel_dim}: {edges}")

    def to_json(self) -> dict:
        return {
            "pos_widths": list(self.pos_widths),
            "vel_edges": [list(e) for e in self.vel_edges],
            "degenerate_columns": [list(c) for c in self.degenerate_columns],
        }

    @staticmethod
    def from_json(d: dict) -> "CellSpec":
        return CellSpec(
            tuple(d["pos_widths"]),
            tuple(tuple(e) for e in d["vel_edges"]),
            tuple(tuple(c) for c in d["degenerate_columns"]),
        )


class CalibrationError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


class CycleError(RuntimeError):
    """Liveness refused: the candidate sub-graph has cycles."""

    def __init__(self, cycles: list[list[int]]):
        super().__init__(f"{len(cycles)} cycle(s) among candidate cells")
        self.cycles = cycles


# ---------------------------------------------------------------------------
# Grid geometry


def _axis_edges(domain: Box, spec: CellSpec) -> list[np.ndarray]:
    """Cell boundaries for all four axes."""
    edges = []
    for d in range(2):
        span = domain.hi[d] - domain.lo[d]
        n = max(1, round(span / spec.pos_widths[d]))
        if abs(n * spec.pos_widths[d] - span) > 1e-9 * max(span, 1.0):
            raise ValueError(
                f"positional width {spec.pos_widths[d]} does not tile axis {d} "
                f"of span {span}"
            )
        edges.append(np.linspace(domain.lo[d], domain.hi[d], n + 1))
    for d in range(2):
        ax = np.asarray(spec.vel_edges[d], dtype=np.float64)
        if abs(ax[0] - domain.lo[2 + d]) > 1e-9 or abs(ax[-1] - domain.hi[2 + d]) > 1e-9:
            raise ValueError(
                f"velocity bands {spec.vel_edges[d]} do not cover axis {2 + d} "
                f"of domain [{domain.lo[2 + d]}, {domain.hi[2 + d]}]"
            )
        edges.append(ax)
    return edges


def _grid_shape(edges: list[np.ndarray]) -> tuple[int, int, int, int]:
    return tuple(len(e) - 1 for e in edges)


def _lin(shape, idx) -> int:
    i = 0
    for n, j in zip(shape, idx):
        i = i * n + j
    return i


def _unlin(shape, i) -> tuple[int, int, int, int]:
    out = []
    for n in reversed(shape):
        out.append(i % n)
        i //= n
    return tuple(reversed(out))


def _cell_box(edges, idx) -> Box:
    lo = [edges[d][idx[d]] for d in range(4)]
    hi = [edges[d][idx[d] + 1] for d in range(4)]
    return Box(lo, hi)


def _region_box(edges, idx) -> Box:
    """The cell as a query region: interior upper faces pulled in so the
    region contains only states this cell owns."""
    lo = []
    hi = []
    for d in range(4):
        lo.append(edges[d][idx[d]])
        h = edges[d][idx[d] + 1]
        if idx[d] + 1 < len(edges[d]) - 1:
            h -= _CELL_SHRINK
        hi.append(h)
    return Box(lo, hi)


def cells_intersecting(domain: Box, spec: CellSpec, box: Box) -> list[int]:
    """Linear ids of all cells whose interior meets the given box."""
    edges = _axis_edges(domain, spec)
    shape = _grid_shape(edges)
    ranges = []
    for d in range(4):
        ax = edges[d]
        first = int(np.searchsorted(ax, box.lo[d], side="right")) - 1
        last = int(np.searchsorted(ax, box.hi[d], side="left")) - 1
        first = min(max(first, 0), shape[d] - 1)
        last = min(max(last, 0), shape[d] - 1)
        ranges.append(range(first, last + 1))
    return sorted(_lin(shape, idx) for idx in itertools.product(*ranges))


# ---------------------------------------------------------------------------
# Query construction

# Output coordinates of the k-step state in the unrolled closed-loop graph.
def _yk(k: int, d: int) -> int:
    return 4 * k + d


def _target_clauses(k, edges, idx) -> tuple:
    """Conjunction pinning the k-step state inside the target cell, strict
    at interior upper faces per the ownership convention."""
    clauses = []
    for d in range(4):
        lo = edges[d][idx[d]]
        hi = edges[d][idx[d] + 1]
        clauses.append((LinearConstraint({_yk(k, d): 1.0}, ">=", lo),))
        rel = "<" if idx[d] + 1 < len(edges[d]) - 1 else "<="
        clauses.append((LinearConstraint({_yk(k, d): 1.0}, rel, hi),))
    return tuple(clauses)


def _outside_clause(k, lo, hi, skip_lo, skip_hi) -> tuple:
    dis = []
    for d in range(4):
        if not skip_lo[d]:
            dis.append(LinearConstraint({_yk(k, d): 1.0}, "<", lo[d]))
        if not skip_hi[d]:
            dis.append(LinearConstraint({_yk(k, d): 1.0}, ">", hi[d]))
    return tuple(dis)


def _vel_window(n_bands: int, zero_idx: int, j: int) -> tuple[int, int]:
    """Inclusive band-index range adjacent to band j.

    The zero band is a thin interface: one step can carry a state from the
    band below it into the band above (a sign change), so bands flanking
    it are adjacent to each other as well as to the band itself.
    """
    down = j - 1
    if down == zero_idx:
        down = j - 2
    up = j + 1
    if up == zero_idx:
        up = j + 2
    return max(down, 0), min(up, n_bands - 1)


def _window_query(graph, k, edges, idx, zeros) -> Query | None:
    """SAT iff some state in the cell reaches past its adjacent cells.

    The window is the union of the cell and its neighbors (one grid step
    per axis, with the zero-interface widening in velocity), clipped to
    the domain; reaching beyond the domain itself is tracked separately as
    an escape.  Returns None when the window covers the whole domain and
    the query would be vacuous.
    """
    lo, hi, skip_lo, skip_hi = [], [], [], []
    for d in range(4):
        ax = edges[d]
        j = idx[d]
        if d < 2:
            wl_i, wh_i = max(j - 1, 0), min(j + 1, len(ax) - 2)
        else:
            wl_i, wh_i = _vel_window(len(ax) - 1, zeros[d - 2], j)
        lo.append(ax[wl_i])
        hi.append(ax[wh_i + 1])
        skip_lo.append(wl_i == 0)
        skip_hi.append(wh_i == len(ax) - 2)
    dis = _outside_clause(k, lo, hi, skip_lo, skip_hi)
    if not dis:
        return None
    return Query(graph, _region_box(edges, idx), (dis,))


def _escape_query(graph, k, edges, idx, domain) -> Query:
    dis = _outside_clause(
        k, domain.lo, domain.hi, [False] * 4, [False] * 4
    )
    return Query(graph, _region_box(edges, idx), (dis,))


def _edge_query(graph, k, edges, src_idx, dst_idx) -> Query:
    return Query(graph, _region_box(edges, src_idx), _target_clauses(k, edges, dst_idx))


def _stay_query(graph, k, edges, vel_dim, ix, iy, band) -> Query:
    """SAT iff some sign-change state fails to leave the zero band in k steps."""
    ax = edges[2 + vel_dim]
    lo = [edges[0][ix], edges[1][iy], edges[2][0], edges[3][0]]
    hi = [
        edges[0][ix + 1] - (_CELL_SHRINK if ix + 1 < len(edges[0]) - 1 else 0.0),
        edges[1][iy + 1] - (_CELL_SHRINK if iy + 1 < len(edges[1]) - 1 else 0.0),
        edges[2][-1],
        edges[3][-1],
    ]
    lo[2 + vel_dim] = ax[band]
    hi[2 + vel_dim] = ax[band + 1]
    y = _yk(k, 2 + vel_dim)
    clauses = (
        (LinearConstraint({y: 1.0}, ">=", ax[band]),),
        (LinearConstraint({y: 1.0}, "<=", ax[band + 1]),),
    )
    return Query(graph, Box(lo, hi), clauses)


# ---------------------------------------------------------------------------
# Calibration


def _cell_order(shape) -> list[tuple]:
    """All cell indices, outermost first, so infeasible probes fail early."""
    idxs = list(itertools.product(*(range(n) for n in shape)))
    center = [(n - 1) / 2 for n in shape]
    idxs.sort(key=lambda t: -sum(abs(t[d] - center[d]) / max(shape[d], 1) for d in range(4)))
    return idxs


def _probe_widths(
    graph, k, domain, spec, budget
) -> tuple[bool, dict]:
    """Check every cell's window query; first SAT or TIMEOUT fails the probe."""
    edges = _axis_edges(domain, spec)
    shape = _grid_shape(edges)
    zeros = (spec.zero_band(0), spec.zero_band(1))
    for idx in _cell_order(shape):
        q = _window_query(graph, k, edges, idx, zeros)
        if q is None:
            continue
        v = check(q, budget)
        if v.status != "UNSAT":
            return False, {
                "cell": list(idx),
                "verdict": v.status,
                "witness": None
                if v.counterexample is None
                else [float(x) for x in v.counterexample],
            }
    return True, {}


def _single_band(domain: Box) -> tuple[tuple[float, ...], tuple[float, ...]]:
    return (
        (float(domain.lo[2]), float(domain.hi[2])),
        (float(domain.lo[3]), float(domain.hi[3])),
    )


def _vel_band_edges(v_lo: float, v_hi: float, zero_band: float, n_outer: int) -> tuple:
    h = zero_band / 2
    left = np.linspace(v_lo, -h, n_outer + 1)
    right = np.linspace(h, v_hi, n_outer + 1)
    return tuple(float(v) for v in np.concatenate([left, right]))


def calibrate_cell_size(
    net: Mlp,
    dyn,
    domain: Box,
    k: int = 1,
    tol: float = 0.02,
    f_max: float = 1.0,
    n_outer: int = 2,
    zero_band_cap: float = 0.2,
    per_query_timeout: float = 120.0,
    max_cells_per_axis: int = 32,
) -> CellSpec:
    """Search for a grid the verifier can certify.

    Positional widths: binary search (to relative tolerance tol) for the
    smallest width at which no cell reaches a non-adjacent cell in k steps.
    A query timeout counts as a failed probe, which only pushes the width
    up, never below a certified value.  Velocity axes then get 2*n_outer
    uniform bands around a zero-straddling band whose width is searched
    the same way against the exit proofs; positional columns where exit is
    unprovable even for a sliver band are recorded as degenerate rather
    than failing the calibration.  The final geometry is re-certified in
    full before it is returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    for d in (2, 3):
        if not domain.lo[d] < 0.0 < domain.hi[d]:
            raise ValueError(
                f"velocity axis {d - 2} must straddle zero, got "
                f"[{domain.lo[d]}, {domain.hi[d]}]"
            )
    A, B = _transition(dyn)
    graph = compose_closed_loop(net, A, B, f_max, k)
    budget = Budget(timeout_s=per_query_timeout, max_branches=500_000)
    spans = (domain.hi[0] - domain.lo[0], domain.hi[1] - domain.lo[1])
    history: list[dict] = []

    def spec_at(n_cells: int, vel) -> CellSpec:
        return CellSpec((spans[0] / n_cells, spans[1] / n_cells), vel)

    provisional = _single_band(domain)
    probe_cache: dict[int, tuple[bool, dict]] = {}

    def feasible(n_cells: int) -> bool:
        if n_cells not in probe_cache:
            t0 = time.monotonic()
            ok, diag = _probe_widths(graph, k, domain, spec_at(n_cells, provisional), budget)
            probe_cache[n_cells] = (ok, diag)
            history.append(
                {
                    "stage": "positional",
                    "cells_per_axis": n_cells,
                    "width": spans[0] / n_cells,
                    "feasible": ok,
                    "wall_time_s": time.monotonic() - t0,
                    **({"failure": diag} if diag else {}),
                }
            )
        return probe_cache[n_cells][0]

    if not feasible(1):
        raise CalibrationError(
            "even a single cell per positional axis fails the adjacency proof",
            {"history": history},
        )
    # Largest certified cell count: doubling sweep, then bisection.
    lo_n, hi_n = 1, 1
    while hi_n < max_cells_per_axis and feasible(min(hi_n * 2, max_cells_per_axis)):
        lo_n = hi_n = min(hi_n * 2, max_cells_per_axis)
    if hi_n < max_cells_per_axis:
        bad = min(hi_n * 2, max_cells_per_axis)
        good = hi_n
        while bad - good > 1 and (spans[0] / good - spans[0] / bad) > tol * (spans[0] / bad):
            mid = (good + bad) // 2
            if feasible(mid):
                good = mid
            else:
                bad = mid
        lo_n = good
    n_pos = lo_n

    # Zero-band sizing at the final positional grid.
    pos_spec = (spans[0] / n_pos, spans[1] / n_pos)
    pos_edges = [
        np.linspace(domain.lo[0], domain.hi[0], n_pos + 1),
        np.linspace(domain.lo[1], domain.hi[1], n_pos + 1),
    ]

    def failing_columns(zb: float) -> set[tuple[int, int, int]]:
        vel = (
            _vel_band_edges(domain.lo[2], domain.hi[2], zb, n_outer),
            _vel_band_edges(domain.lo[3], domain.hi[3], zb, n_outer),
        )
        edges = pos_edges + [np.asarray(v) for v in vel]
        shape = _grid_shape(edges)
        spec = CellSpec(pos_spec, vel)
        bad = set()
        for vd in range(2):
            band = spec.zero_band(vd)
            for ix in range(n_pos):
                for iy in range(n_pos):
                    q = _stay_query(graph, k, edges, vd, ix, iy, band)
                    if check(q, budget).status != "UNSAT":
                        bad.add((vd, ix, iy))
        return bad

    vel_cap = min(zero_band_cap, 0.5 * min(-domain.lo[2], domain.hi[2], -domain.lo[3], domain.hi[3]))
    zb_lo = vel_cap / 256
    t0 = time.monotonic()
    degenerate = failing_columns(zb_lo)
    history.append(
        {
            "stage": "zero-band-floor",
            "width": zb_lo,
            "degenerate_columns": len(degenerate),
            "wall_time_s": time.monotonic() - t0,
        }
    )
    good_zb, bad_zb = zb_lo, None
    if failing_columns(vel_cap) <= degenerate:
        good_zb = vel_cap
    else:
        bad_zb = vel_cap
        while (bad_zb - good_zb) > tol * bad_zb:
            mid = 0.5 * (good_zb + bad_zb)
            if failing_columns(mid) <= degenerate:
                good_zb = mid
            else:
                bad_zb = mid
    history.append({"stage": "zero-band", "width": good_zb})

    final = CellSpec(
        pos_spec,
        (
            _vel_band_edges(domain.lo[2], domain.hi[2], good_zb, n_outer),
            _vel_band_edges(domain.lo[3], domain.hi[3], good_zb, n_outer),
        ),
        tuple(sorted(degenerate)),
    )
    t0 = time.monotonic()
    ok, diag = _probe_widths(graph, k, domain, final, budget)
    history.append(
        {"stage": "certify", "feasible": ok, "wall_time_s": time.monotonic() - t0}
    )
    if not ok:
        raise CalibrationError(
            "final grid failed full certification", {"history": history, "failure": diag}
        )
    return final


# ---------------------------------------------------------------------------
# Graph construction


@dataclass
class CellGraph:
    """Cells, k-step edges, and per-cell flags, with JSON round-tripping."""

    domain: Box
    spec: CellSpec
    k: int
    shape: tuple[int, int, int, int]
    boxes: list[Box]
    edges: tuple[tuple[int, int], ...]
    self_loop_possible: frozenset[int]
    escapes_domain: frozenset[int]
    timeout_edges: frozenset[tuple[int, int]]

    def successors(self, i: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == i)

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in self.boxes]
        for a, b in self.edges:
            adj[a].append(b)
        for lst in adj:
            lst.sort()
        return adj

    def to_json(self) -> dict:
        return {
            "domain": {"lo": [float(v) for v in self.domain.lo],
                       "hi": [float(v) for v in self.domain.hi]},
            "spec": self.spec.to_json(),
            "k": self.k,
            "shape": list(self.shape),
            "cells": [
                {"id": i, "box": {"lo": [float(v) for v in b.lo],
                                  "hi": [float(v) for v in b.hi]}}
                for i, b in enumerate(self.boxes)
            ],
            "edges": [list(e) for e in self.edges],
            "flags": {
                "self_loop_possible": sorted(self.self_loop_possible),
                "escapes_domain": sorted(self.escapes_domain),
                "timeout_edges": [list(e) for e in sorted(self.timeout_edges)],
            },
        }

    @staticmethod
    def from_json(d: dict) -> "CellGraph":
        return CellGraph(
            domain=Box(d["domain"]["lo"], d["domain"]["hi"]),
            spec=CellSpec.from_json(d["spec"]),
            k=int(d["k"]),
            shape=tuple(d["shape"]),
            boxes=[Box(c["box"]["lo"], c["box"]["hi"]) for c in d["cells"]],
            edges=tuple(tuple(e) for e in d["edges"]),
            self_loop_possible=frozenset(d["flags"]["self_loop_possible"]),
            escapes_domain=frozenset(d["flags"]["escapes_domain"]),
            timeout_edges=frozenset(tuple(e) for e in d["flags"]["timeout_edges"]),
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, CellGraph) and self.to_json() == other.to_json()

    def write_csv(self, cells_path, edges_path) -> None:
        with open(cells_path, "w") as f:
            f.write("id,cx,cy,cvx,cvy,self_loop_possible,escapes_domain\n")
            for i, b in enumerate(self.boxes):
                c = b.center()
                f.write(
                    f"{i},{c[0]:.17g},{c[1]:.17g},{c[2]:.17g},{c[3]:.17g},"
                    f"{int(i in self.self_loop_possible)},{int(i in self.escapes_domain)}\n"
                )
        with open(edges_path, "w") as f:
            f.write("src,dst,timeout_flagged\n")
            for a, b in self.edges:
                f.write(f"{a},{b},{int((a, b) in self.timeout_edges)}\n")


def _cell_edges(graph, k, edges, shape, idx, domain, budget, zeros):
    """Resolve one cell: outgoing edges, timeout flags, escape flag."""
    src = _lin(shape, idx)
    cands = []
    for d in range(4):
        j = idx[d]
        if d < 2:
            cands.append([c for c in (j - 1, j, j + 1) if 0 <= c < shape[d]])
        else:
            down, up = _vel_window(shape[d], zeros[d - 2], j)
            cands.append(list(range(down, up + 1)))
    out, touts = [], []
    for tgt in itertools.product(*cands):
        v = check(_edge_query(graph, k, edges, idx, tgt), budget)
        if v.status == "SAT":
            out.append(_lin(shape, tgt))
        elif v.status == "TIMEOUT":
            out.append(_lin(shape, tgt))
            touts.append(_lin(shape, tgt))
    v = check(_escape_query(graph, k, edges, idx, domain), budget)
    escapes = v.status != "UNSAT"
    return src, sorted(out), touts, escapes


_POOL_STATE: dict = {}


def _pool_init(net, A, B, f_max, k, domain, spec):
    edges = _axis_edges(domain, spec)
    _POOL_STATE.update(
        graph=compose_closed_loop(net, A, B, f_max, k),
        k=k,
        edges=edges,
        shape=_grid_shape(edges),
        domain=domain,
        zeros=(spec.zero_band(0), spec.zero_band(1)),
    )


def _pool_task(args):
    ids, timeout = args
    s = _POOL_STATE
    budget = Budget(timeout_s=timeout, max_branches=_EDGE_BUDGET.max_branches)
    return [
        _cell_edges(s["graph"], s["k"], s["edges"], s["shape"], _unlin(s["shape"], i),
                    s["domain"], budget, s["zeros"])
        for i in ids
    ]


def build_cell_graph(
    net: Mlp,
    dyn,
    domain: Box,
    spec: CellSpec,
    k: int = 1,
    f_max: float = 1.0,
    per_query_timeout: float = 60.0,
    workers: int | None = None,
) -> CellGraph:
    """Run the k-step reachability query for every cell/neighbor pair.

    Adjacency candidates are one grid step in any subset of axes (two in
    velocity when the step hops the thin zero band), plus the cell itself.
    A SAT query adds the edge (the verifier validated a concrete witness);
    UNSAT omits it; TIMEOUT adds it conservatively and flags it.  Escape
    flags record cells from which the k-step image can leave the domain.
    """
    A, B = _transition(dyn)
    edges_ax = _axis_edges(domain, spec)
    shape = _grid_shape(edges_ax)
    n = int(np.prod(shape))
    ids = list(range(n))
    if workers is not None and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunk = max(1, n // (workers * 8))
        batches = [(ids[i : i + chunk], per_query_timeout) for i in range(0, n, chunk)]
        resolved = []
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_pool_init,
            initargs=(net, A, B, f_max, k, domain, spec),
        ) as pool:
            for batch in pool.map(_pool_task, batches):
                resolved.extend(batch)
        resolved.sort(key=lambda r: r[0])
    else:
        _pool_init(net, A, B, f_max, k, domain, spec)
        s = _POOL_STATE
        budget = Budget(timeout_s=per_query_timeout, max_branches=_EDGE_BUDGET.max_branches)
        resolved = [
            _cell_edges(s["graph"], k, s["edges"], shape, _unlin(shape, i), domain, budget,
                        s["zeros"])
            for i in ids
        ]
    all_edges: list[tuple[int, int]] = []
    timeouts: set[tuple[int, int]] = set()
    escapes: set[int] = set()
    for src, out, touts, esc in resolved:
        all_edges.extend((src, b) for b in out)
        timeouts.update((src, b) for b in touts)
        if esc:
            escapes.add(src)
    self_loops = {a for a, b in all_edges if a == b}
    zero_cells: set[int] = set()
    for vd, ix, iy in spec.degenerate_columns:
        band = spec.zero_band(vd)
        for other in range(shape[2 + (1 - vd)]):
            iv = (band, other) if vd == 0 else (other, band)
            zero_cells.add(_lin(shape, (ix, iy) + iv))
    boxes = [_cell_box(edges_ax, _unlin(shape, i)) for i in ids]
    return CellGraph(
        domain=domain,
        spec=spec,
        k=k,
        shape=shape,
        boxes=boxes,
        edges=tuple(sorted(all_edges)),
        self_loop_possible=frozenset(self_loops | zero_cells),
        escapes_domain=frozenset(escapes),
        timeout_edges=frozenset(timeouts),
    )


# ---------------------------------------------------------------------------
# Cycles and liveness


def _tarjan_sccs(n: int, adj: list[list[int]]) -> list[list[int]]:
    """Strongly connected components, iterative, in discovery order."""
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            for j in range(pi, len(adj[v])):
                w = adj[v][j]
                if index[w] == -1:
                    work[-1] = (v, j + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                pv = work[-1][0]
                low[pv] = min(low[pv], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(sorted(comp))
    return sccs


def _representative_cycle(scc: list[int], adj: list[list[int]]) -> list[int]:
    members = set(scc)
    start = scc[0]
    path = [start]
    on_path = {start: 0}
    seen = {start}
    while True:
        v = path[-1]
        nxt = None
        for w in adj[v]:
            if w in on_path:
                return path[on_path[w] :]
            if w in members and w not in seen:
                nxt = w
                break
        if nxt is None:
            # Dead end within the SCC from this path; backtrack.
            on_path.pop(path.pop())
            if not path:  # pragma: no cover - SCC guarantees a cycle
                raise RuntimeError("no cycle found in nontrivial SCC")
            continue
        seen.add(nxt)
        on_path[nxt] = len(path)
        path.append(nxt)


def find_cycles(g: CellGraph) -> list[list[int]]:
    """One representative cycle per nontrivial SCC, plus every self-loop."""
    adj = g.adjacency()
    cycles = []
    for scc in sorted(_tarjan_sccs(len(g.boxes), adj)):
        if len(scc) > 1:
            cycles.append(_representative_cycle(scc, adj))
    for a, b in sorted(g.edges):
        if a == b:
            cycles.append([a])
    return cycles


def liveness_cells(g: CellGraph, goal_cells) -> set[int]:
    """Cells from which every k-step path stays in-domain and hits a goal cell.

    Paths stop at goal cells, so only the sub-graph away from the goal must
    be acyclic; otherwise this refuses with the cycles found.
    """
    goal = set(goal_cells)
    n = len(g.boxes)
    for c in goal:
        if not 0 <= c < n:
            raise ValueError(f"goal cell {c} out of range (0..{n - 1})")
    adj = g.adjacency()
    sub = [[w for w in adj[v] if w not in goal] if v not in goal else [] for v in range(n)]
    cycles = [sorted(s) for s in _tarjan_sccs(n, sub) if len(s) > 1]
    cycles += [[v] for v in range(n) if v not in goal and v in sub[v]]
    if cycles:
        raise CycleError(cycles)
    live = set(goal)
    changed = True
    while changed:
        changed = False
        for v in range(n):
            if v in live or v in g.escapes_domain or not adj[v]:
                continue
            if all(w in live for w in adj[v]):
                live.add(v)
                changed = True
    return live - goal


# ---------------------------------------------------------------------------
# Forward tube


@dataclass
class TubeResult:
    """Iterated bounding boxes of the k-step image, with containment and
    divergence bookkeeping."""

    boxes: list[Box]
    reached_goal_at: int | None
    diverged_at: int | None

    def to_json(self) -> dict:
        return {
            "boxes": [
                {"lo": [float(v) for v in b.lo], "hi": [float(v) for v in b.hi]}
                for b in self.boxes
            ],
            "reached_goal_at": self.reached_goal_at,
            "diverged_at": self.diverged_at,
        }


def forward_tube(
    net: Mlp,
    dyn,
    start: Box,
    k: int = 1,
    n_iter: int = 50,
    f_max: float = 1.0,
    goal_half_side: float = 0.35,
    domain: Box | None = None,
) -> TubeResult:
    """Iterate the interval image of the k-step closed loop from a start box."""
    if n_iter < 1:
        raise ValueError(f"n_iter must be >= 1, got {n_iter}")
    A, B = _transition(dyn)
    graph = compose_closed_loop(net, A, B, f_max, k)
    out_node = graph.outputs[k]
    boxes = [start]
    reached = None
    diverged = None
    cur = start
    for i in range(1, n_iter + 1):
        lo, hi = interval_bounds(graph, cur)[out_node]
        cur = Box(lo, hi)
        boxes.append(cur)
        if reached is None and np.all(np.abs(lo[:2]) <= goal_half_side) and np.all(
            np.abs(hi[:2]) <= goal_half_side
        ):
            reached = i
        if (
            diverged is None
            and domain is not None
            and (np.any(lo < domain.lo) or np.any(hi > domain.hi))
        ):
            diverged = i
    return TubeResult(boxes, reached, diverged)
