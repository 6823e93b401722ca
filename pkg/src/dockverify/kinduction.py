"""Liveness-step proofs over a partitioned state space.

A region is proved when the verifier shows every contained state (outside
the goal square) drops its L1 position norm or L1 velocity norm by eps
within some horizon k.  The driver partitions the domain, verifies regions
in parallel, and bisects regions whose queries time out.  Cheap dense
simulation screens each horizon first: a concretely violating start is a
finished SAT verdict, so the expensive branch-and-bound only runs at
horizons with a real chance of closing.
"""

from __future__ import annotations

import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynParams, affine_transition
from .netgraph import Mlp, forward
from .properties import GoalSpec, KIND_EPSILON, encode_kind_property
from .verifier import Box, Budget, check

__all__ = [
    "Region",
    "RegionResult",
    "verify_region",
    "drive",
    "empirical_check",
    "empirical_second_property",
]

DEFAULT_K_MAX = 20
DEFAULT_PER_K_TIMEOUT = 600.0

# Per-axis sample counts for the simulation screen: coarse grid plus a
# denser velocity slice where the decrease margins are smallest.
_SCREEN_GRID = 7


@dataclass(frozen=True)
class Region:
    """A box of start states plus a path id recording subdivision lineage."""

    box: Box
    id: str

    def subdivide(self) -> tuple["Region", "Region"]:
        """Bisect on the widest positional dimension."""
        widths = self.box.width()
        dim = int(np.argmax(widths[:2]))
        left, right = self.box.split(dim)
        return Region(left, f"{self.id}/0"), Region(right, f"{self.id}/1")


@dataclass
class RegionResult:
    region: Region
    status: str  # "UNSAT" | "SAT" | "TIMEOUT"
    k: int | None
    counterexample: np.ndarray | None = None
    trace: np.ndarray | None = None
    per_k: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "id": self.region.id,
            "box_lo": [float(v) for v in self.region.box.lo],
            "box_hi": [float(v) for v in self.region.box.hi],
            "status": self.status,
            "k": self.k,
            "counterexample": None
            if self.counterexample is None
            else [float(v) for v in self.counterexample],
            "trace": None
            if self.trace is None
            else [[float(v) for v in s] for s in self.trace],
            "per_k": self.per_k,
        }


def _grid_states(box: Box, n: int) -> np.ndarray:
    axes = [np.linspace(box.lo[i], box.hi[i], n) for i in range(box.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _simulate_batch(states: np.ndarray, net: Mlp, A, B, f_max: float, k_max: int) -> np.ndarray:
    """(k_max+1, N, 4) closed-loop states, index 0 being the starts."""
    out = np.empty((k_max + 1,) + states.shape)
    out[0] = states
    s = states
    for k in range(1, k_max + 1):
        u = np.clip(forward(net, s), -f_max, f_max)
        s = s @ A.T + u @ B.T
        out[k] = s
    return out


def _holds_table(
    trajs: np.ndarray, eps: float, goal: GoalSpec | None
) -> np.ndarray:
    """(k_max, N) mask: property satisfied at horizon k for each start."""
    s0 = trajs[0]
    p0 = np.abs(s0[:, 0]) + np.abs(s0[:, 1])
    v0 = np.abs(s0[:, 2]) + np.abs(s0[:, 3])
    if goal is not None:
        exempt = goal.contains(s0)
    else:
        exempt = np.zeros(s0.shape[0], dtype=bool)
    holds = np.zeros((trajs.shape[0] - 1, s0.shape[0]), dtype=bool)
    for k in range(1, trajs.shape[0]):
        sk = trajs[k]
        pk = np.abs(sk[:, 0]) + np.abs(sk[:, 1])
        vk = np.abs(sk[:, 2]) + np.abs(sk[:, 3])
        holds[k - 1] = (pk - p0 < -eps) | (vk - v0 < -eps) | exempt
    return holds


def verify_region(
    region: Region,
    net: Mlp,
    params: DynParams,
    eps: float = KIND_EPSILON,
    k_min: int = 1,
    k_max: int = DEFAULT_K_MAX,
    per_k_timeout: float = DEFAULT_PER_K_TIMEOUT,
    goal: GoalSpec | None = None,
    f_max: float = 1.0,
) -> RegionResult:
    """Scan horizons k_min..k_max for the first provable one.

    Per horizon: a dense simulation screen hunts for a concrete violating
    start (that alone settles the horizon as SAT); otherwise the verifier
    decides.  First UNSAT wins; a verifier timeout aborts the region as
    TIMEOUT; if every horizon is SAT the result carries a concrete
    counterexample trajectory at k_max.
    """
    if not 1 <= k_min <= k_max:
        raise ValueError(f"need 1 <= k_min <= k_max, got {k_min}, {k_max}")
    A, B = affine_transition(params)
    starts = _grid_states(region.box, _SCREEN_GRID)
    trajs = _simulate_batch(starts, net, A, B, f_max, k_max)
    holds = _holds_table(trajs, eps, goal)
    per_k: list[dict] = []
    last_cx: np.ndarray | None = None
    for k in range(k_min, k_max + 1):
        t0 = time.monotonic()
        bad = np.flatnonzero(~holds[k - 1])
        if bad.size:
            last_cx = starts[bad[0]]
            per_k.append(
                {
                    "k": k,
                    "verdict": "SAT",
                    "source": "screen",
                    "branches": 0,
                    "wall_time_s": time.monotonic() - t0,
                }
            )
            continue
        query = encode_kind_property(net, A, B, f_max, region.box, k, eps, goal)
        verdict = check(query, Budget(timeout_s=per_k_timeout))
        per_k.append(
            {
                "k": k,
                "verdict": verdict.status,
                "source": "verifier",
                "branches": verdict.branches,
                "wall_time_s": time.monotonic() - t0,
            }
        )
        if verdict.status == "UNSAT":
            return RegionResult(region, "UNSAT", k, per_k=per_k)
        if verdict.status == "TIMEOUT":
            return RegionResult(region, "TIMEOUT", k, per_k=per_k)
        cx = verdict.counterexample
        last_cx = cx
        cx_traj = _simulate_batch(cx[None, :], net, A, B, f_max, k_max)
        starts = np.concatenate([starts, cx[None, :]])
        holds = np.concatenate([holds, _holds_table(cx_traj, eps, goal)], axis=1)
    trace = None
    if last_cx is not None:
        trace = _simulate_batch(last_cx[None, :], net, A, B, f_max, k_max)[:, 0, :]
    return RegionResult(region, "SAT", k_max, counterexample=last_cx, trace=trace, per_k=per_k)


def initial_regions(domain: Box, grid: tuple[int, int]) -> list[Region]:
    """Partition the positional plane of the domain into a grid of regions
    sharing the full velocity box."""
    gx, gy = grid
    if gx < 1 or gy < 1:
        raise ValueError(f"grid must be at least 1x1, got {grid}")
    xs = np.linspace(domain.lo[0], domain.hi[0], gx + 1)
    ys = np.linspace(domain.lo[1], domain.hi[1], gy + 1)
    regions = []
    for ix in range(gx):
        for iy in range(gy):
            lo = np.array([xs[ix], ys[iy], domain.lo[2], domain.lo[3]])
            hi = np.array([xs[ix + 1], ys[iy + 1], domain.hi[2], domain.hi[3]])
            regions.append(Region(Box(lo, hi), f"g{ix}-{iy}"))
    return regions


def _drive_task(args) -> RegionResult:
    region, net, params, eps, k_min, k_max, per_k_timeout, goal, f_max = args
    return verify_region(region, net, params, eps, k_min, k_max, per_k_timeout, goal, f_max)


def drive(
    net: Mlp,
    params: DynParams,
    domain: Box,
    grid: tuple[int, int] = (5, 5),
    eps: float = KIND_EPSILON,
    k_min: int = 1,
    k_max: int = DEFAULT_K_MAX,
    per_k_timeout: float = DEFAULT_PER_K_TIMEOUT,
    goal: GoalSpec | None = None,
    f_max: float = 1.0,
    workers: int | None = None,
    global_budget_s: float | None = None,
    max_depth: int = 6,
) -> dict:
    """Verify the whole domain, bisecting timed-out regions positionally.

    Returns a report dict: per-region results sorted by id plus summary
    statistics over the proved horizons and runtimes.
    """
    queue = initial_regions(domain, grid)
    results: list[RegionResult] = []
    t0 = time.monotonic()

    def expired() -> bool:
        return global_budget_s is not None and time.monotonic() - t0 > global_budget_s

    def handle(res: RegionResult) -> list[Region]:
        if res.status == "TIMEOUT" and res.region.id.count("/") < max_depth:
            return list(res.region.subdivide())
        results.append(res)
        return []

    common = (eps, k_min, k_max, per_k_timeout, goal, f_max)
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pending = {
                pool.submit(_drive_task, (r, net, params, *common)) for r in queue
            }
            while pending:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    for child in handle(fut.result()):
                        if expired():
                            results.append(RegionResult(child, "TIMEOUT", None))
                        else:
                            pending.add(
                                pool.submit(_drive_task, (child, net, params, *common))
                            )
    else:
        while queue:
            region = queue.pop(0)
            if expired():
                results.append(RegionResult(region, "TIMEOUT", None))
                continue
            queue.extend(handle(verify_region(region, net, params, *common)))
    results.sort(key=lambda r: r.region.id)
    ks = [r.k for r in results if r.status == "UNSAT"]
    times = [sum(e["wall_time_s"] for e in r.per_k) for r in results]
    statuses = [r.status for r in results]
    summary = {
        "regions": len(results),
        "unsat": statuses.count("UNSAT"),
        "sat": statuses.count("SAT"),
        "timeout": statuses.count("TIMEOUT"),
        "k_min": min(ks) if ks else None,
        "k_max": max(ks) if ks else None,
        "k_mean": float(np.mean(ks)) if ks else None,
        "k_median": float(np.median(ks)) if ks else None,
        "region_time_min_s": min(times) if times else 0.0,
        "region_time_max_s": max(times) if times else 0.0,
        "total_time_s": time.monotonic() - t0,
    }
    return {"regions": [r.to_json() for r in results], "summary": summary}


def _sample_domain(
    rng: np.random.Generator, domain: Box, n: int, goal: GoalSpec | None
) -> np.ndarray:
    out = np.empty((0, domain.dim))
    while out.shape[0] < n:
        batch = rng.uniform(domain.lo, domain.hi, size=(2 * n, domain.dim))
        if goal is not None:
            batch = batch[~goal.contains(batch)]
        out = np.concatenate([out, batch])
    return out[:n]


def empirical_check(
    net: Mlp,
    params: DynParams,
    n_samples: int,
    k_max: int = DEFAULT_K_MAX,
    eps: float = KIND_EPSILON,
    seed: int = 0,
    domain: Box | None = None,
    goal: GoalSpec | None = None,
    f_max: float = 1.0,
) -> dict:
    """Minimal-horizon frequency table over random starts.

    Samples uniformly in the domain (outside the goal square), simulates,
    and records the smallest k at which the decrease property holds; starts
    where no k <= k_max works are reported as violations.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if domain is None:
        domain = Box([-5, -5, -0.2, -0.2], [5, 5, 0.2, 0.2])
    if goal is None:
        goal = GoalSpec()
    rng = np.random.default_rng(seed)
    starts = _sample_domain(rng, domain, n_samples, goal)
    A, B = affine_transition(params)
    trajs = _simulate_batch(starts, net, A, B, f_max, k_max)
    holds = _holds_table(trajs, eps, None)
    any_k = holds.any(axis=0)
    first_k = np.where(any_k, holds.argmax(axis=0) + 1, 0)
    table = {int(k): int(c) for k, c in zip(*np.unique(first_k[any_k], return_counts=True))}
    violations = [
        {"start": [float(v) for v in starts[i]]} for i in np.flatnonzero(~any_k)
    ]
    return {
        "n_samples": n_samples,
        "k_frequency": table,
        "violations": violations,
        "n_violations": len(violations),
    }


def empirical_second_property(
    net: Mlp,
    params: DynParams,
    samples: np.ndarray,
    k_max: int = DEFAULT_K_MAX,
    eps: float = KIND_EPSILON,
    f_max: float = 1.0,
) -> dict:
    """Simulation-only check of the follow-on property: starts whose first
    step shrinks L1 position should see an eps-sized positional drop within
    k_max steps.  Starts with an outbound first step are skipped.  No formal
    guarantee is attempted here."""
    starts = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    A, B = affine_transition(params)
    trajs = _simulate_batch(starts, net, A, B, f_max, k_max)
    p = np.abs(trajs[:, :, 0]) + np.abs(trajs[:, :, 1])  # (k_max+1, N)
    qualifying = p[1] < p[0]
    achieved = np.any(p[1:] - p[0] < -eps, axis=0)
    bad = qualifying & ~achieved
    return {
        "n_samples": int(starts.shape[0]),
        "n_qualifying": int(qualifying.sum()),
        "violations": [[float(v) for v in s] for s in starts[bad]],
        "n_violations": int(bad.sum()),
    }
