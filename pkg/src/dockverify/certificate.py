"""Reach-while-avoid certificates: sampling, training, and verification.

A certificate V assigns a scalar to each state.  Four verified conditions
make it a proof that the closed loop reaches the goal from the initial set
without crossing into the unsafe region: V is bounded below on the domain,
at most beta on the initial set, strictly decreasing (by epsilon) on the
beta sublevel set away from goal and unsafe, and at least alpha on a shell
just inside the unsafe boundary.  Training minimizes hinge losses for the
same conditions on sampled batches; verification hands the exact queries
to the branch-and-bound checker; counterexamples feed back into the
batches with extra weight.

The controller is frozen throughout: only V trains.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import netgraph as ng
from .dynamics import DynParams, affine_transition
from .netgraph import GraphBuilder, Mlp, forward, make_mlp
from .properties import (
    RWA_CONDITIONS,
    _value_graph,
    encode_rwa_condition,
    encode_sampling_region,
)
from .verifier import Box, Budget, LinearConstraint, Query, check, find_min_output

__all__ = [
    "Plant",
    "UnsafeHalfspace",
    "Witness",
    "RwaTask",
    "LossHyper",
    "TrainSchedule",
    "SampleBatches",
    "SamplingError",
    "TrainingError",
    "TrainResult",
    "CertificateReport",
    "RetrainResult",
    "sample_sets",
    "rwa_loss",
    "train",
    "gamma_search",
    "verify_certificate",
    "retrain_loop",
    "check_lemma1",
    "init_certificate",
    "inject_dip",
    "make_toy_setup",
]


@dataclass(frozen=True)
class Plant:
    """Discrete-time affine plant x' = a x + b clamp(u, -f_max, f_max)."""

    a: np.ndarray
    b: np.ndarray
    f_max: float = 1.0

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"state matrix must be square, got shape {a.shape}")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError(f"input matrix shape {b.shape} does not match state dim {a.shape[0]}")
        if self.f_max <= 0:
            raise ValueError(f"f_max must be positive, got {self.f_max}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @staticmethod
    def from_params(params: DynParams, f_max: float = 1.0) -> "Plant":
        A, B = affine_transition(params)
        return Plant(A, B, f_max)

    def step(self, x: np.ndarray, net: Mlp) -> np.ndarray:
        u = np.clip(forward(net, x), -self.f_max, self.f_max)
        return x @ self.a.T + u @ self.b.T


def _as_plant(dyn) -> Plant:
    if isinstance(dyn, Plant):
        return dyn
    if isinstance(dyn, DynParams):
        return Plant.from_params(dyn)
    raise TypeError(f"expected Plant or DynParams, got {type(dyn).__name__}")


@dataclass(frozen=True)
class UnsafeHalfspace:
    """States with a.x > p are unsafe; the sampling shell reaches to p + margin."""

    a: tuple[float, ...]
    p: float
    margin: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        if not any(v != 0.0 for v in self.a):
            raise ValueError("unsafe direction must be nonzero")
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


@dataclass(frozen=True)
class Witness:
    alpha: float
    beta: float
    gamma: float
    epsilon: float

    def __post_init__(self) -> None:
        if not self.alpha > self.beta:
            raise ValueError(f"need alpha > beta, got {self.alpha} vs {self.beta}")
        if not self.beta >= self.gamma:
            raise ValueError(f"need beta >= gamma, got {self.beta} vs {self.gamma}")
        if not self.epsilon > 0:
            raise ValueError(f"need epsilon > 0, got {self.epsilon}")

    def with_gamma(self, gamma: float) -> "Witness":
        return replace(self, gamma=gamma)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
        }


def _box_max_dot(box: Box, a: np.ndarray) -> float:
    """max of a.x over the box."""
    return float(np.sum(np.where(a > 0, a * box.hi, a * box.lo)))


@dataclass(frozen=True)
class RwaTask:
    """Domain, initial and goal boxes, and directional unsafe bounds.

    The unsafe set is the union over directions of {a.x > p}; each margin
    bounds the sampling shell past its p.  Initial and goal boxes must be
    geometrically disjoint from the unsafe set.
    """

    domain: Box
    init: Box
    goal: Box
    unsafe: tuple[UnsafeHalfspace, ...]

    def __post_init__(self) -> None:
        d = self.domain.dim
        if self.init.dim != d or self.goal.dim != d:
            raise ValueError("domain, init, and goal must share a dimension")
        for name, box in (("init", self.init), ("goal", self.goal)):
            if np.any(box.lo < self.domain.lo) or np.any(box.hi > self.domain.hi):
                raise ValueError(f"{name} box must lie inside the domain")
        object.__setattr__(self, "unsafe", tuple(self.unsafe))
        for u in self.unsafe:
            if len(u.a) != d:
                raise ValueError(f"unsafe direction {u.a} has wrong dimension")
            a = np.asarray(u.a)
            for name, box in (("init", self.init), ("goal", self.goal)):
                if _box_max_dot(box, a) > u.p:
                    raise ValueError(
                        f"{name} box intersects the unsafe half-space a.x > {u.p}"
                    )

    def unsafe_mask(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask of states in the unsafe set."""
        x = np.atleast_2d(x)
        out = np.zeros(x.shape[0], dtype=bool)
        for u in self.unsafe:
            out |= x @ np.asarray(u.a) > u.p
        return out

    def goal_mask(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.goal.lo) & (x <= self.goal.hi), axis=1)


@dataclass(frozen=True)
class LossHyper:
    c_s: float = 1.0
    c_d: float = 1.0
    c_u: float = 1.0
    delta1: float = 0.01
    delta2: float = 0.01
    delta3: float = 0.01
    w_ce: float = 10.0

    def __post_init__(self) -> None:
        if min(self.c_s, self.c_d, self.c_u) < 0:
            raise ValueError("loss weights must be nonnegative")
        if min(self.delta1, self.delta2, self.delta3) <= 0:
            raise ValueError("loss margins must be positive")
        if self.w_ce < 1:
            raise ValueError(f"counterexample weight must be >= 1, got {self.w_ce}")


@dataclass(frozen=True)
class TrainSchedule:
    """Iteration counts and step size for full-batch gradient descent.

    warmup is kept as an explicit phase boundary; with the controller
    frozen the warmup and main phases run the same update, so it only
    marks where a joint phase would begin.
    """

    iterations: int = 2000
    warmup: int = 200
    lr: float = 1e-3
    seed: int = 0
    n_init: int = 256
    n_domain: int = 1024
    n_unsafe: int = 256

    def __post_init__(self) -> None:
        if self.iterations < 0 or self.warmup < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.lr <= 0:
            raise ValueError(f"step size must be positive, got {self.lr}")
        if min(self.n_init, self.n_domain, self.n_unsafe) < 1:
            raise ValueError("sample counts must be >= 1")


class SamplingError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass
class SampleBatches:
    """Weighted sample sets for the three loss terms, tied to their task
    so the loss can test successor states for unsafe membership."""

    task: RwaTask
    init_x: np.ndarray
    init_w: np.ndarray
    domain_x: np.ndarray
    domain_w: np.ndarray
    unsafe_x: np.ndarray
    unsafe_w: np.ndarray

    def augment(self, which: str, x: np.ndarray, weight: float) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xs = getattr(self, f"{which}_x")
        ws = getattr(self, f"{which}_w")
        setattr(self, f"{which}_x", np.concatenate([xs, x]))
        setattr(self, f"{which}_w", np.concatenate([ws, np.full(x.shape[0], weight)]))


def _rejection_sample(rng, box: Box, n: int, accept, what: str) -> np.ndarray:
    out = np.empty((0, box.dim))
    for _ in range(1000):
        batch = rng.uniform(box.lo, box.hi, size=(max(2 * n, 64), box.dim))
        batch = batch[accept(batch)]
        out = np.concatenate([out, batch])
        if out.shape[0] >= n:
            return out[:n]
    raise SamplingError(
        f"could not draw {n} samples from {what}: acceptance region looks empty"
    )


def sample_sets(task: RwaTask, counts, seed: int) -> SampleBatches:
    """Uniform batches from the initial set, the domain away from goal and
    unsafe, and the unsafe boundary shell; deterministic given seed."""
    n_init, n_domain, n_unsafe = counts
    if min(n_init, n_domain, n_unsafe) < 1:
        raise ValueError(f"counts must be >= 1 per set, got {counts}")
    rng = np.random.default_rng(seed)
    init_x = rng.uniform(task.init.lo, task.init.hi, size=(n_init, task.init.dim))
    domain_x = _rejection_sample(
        rng,
        task.domain,
        n_domain,
        lambda x: ~task.goal_mask(x) & ~task.unsafe_mask(x),
        "domain minus goal and unsafe",
    )
    _, shell = encode_sampling_region(
        [u.p for u in task.unsafe], [u.margin for u in task.unsafe]
    )
    dirs = np.stack([np.asarray(u.a) for u in task.unsafe])
    unsafe_x = _rejection_sample(
        rng,
        task.domain,
        n_unsafe,
        lambda x: shell(x @ dirs.T),
        "unsafe boundary shell",
    )
    ones = np.ones
    return SampleBatches(
        task, init_x, ones(n_init), domain_x, ones(n_domain), unsafe_x, ones(n_unsafe)
    )


# ---------------------------------------------------------------------------
# Loss and gradients

# V is a stack of dense layers with ReLU between; gradients are accumulated
# by hand so training needs nothing beyond numpy.


def _v_forward(V: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    acts = [np.atleast_2d(x)]
    pres = []
    for layer in V.layers:
        z = acts[-1] @ layer.weights.T + layer.bias
        pres.append(z)
        acts.append(np.maximum(z, 0.0) if layer.activation == "relu" else z)
    return acts[-1][:, 0], (acts, pres)


def _zero_grads(V: Mlp) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in V.layers]


def _v_backward(V: Mlp, cache, gout: np.ndarray, grads) -> None:
    """Accumulate d(sum gout_i * V(x_i))/dparams into grads in place."""
    acts, pres = cache
    g = gout[:, None]
    for i in range(len(V.layers) - 1, -1, -1):
        layer = V.layers[i]
        if layer.activation == "relu":
            g = g * (pres[i] > 0.0)
        dw, db = grads[i]
        dw += g.T @ acts[i]
        db += g.sum(axis=0)
        if i > 0:
            g = g @ layer.weights


def rwa_loss(
    V: Mlp,
    controller: Mlp,
    dyn,
    batches: SampleBatches,
    w: Witness,
    h: LossHyper,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Hinge losses for the certificate conditions and their V-gradients.

    Three terms: initial-set level (V <= beta on X_I), one-step decrease on
    the beta sublevel set, and the unsafe shell floor (V >= alpha).  The
    decrease term is masked to samples with V(x) < beta, and successor
    values landing in the unsafe set are replaced by the constant alpha so
    V's behavior inside the unsafe set cannot leak into this term.
    Gradients flow through V only; controller and plant are fixed.
    """
    plant = _as_plant(dyn)
    grads = _zero_grads(V)
    loss = 0.0

    # Initial set: penalize V above beta - delta1 headroom.
    v_i, cache_i = _v_forward(V, batches.init_x)
    wsum = batches.init_w.sum()
    z = h.delta1 + v_i - w.beta
    act = z > 0
    loss += h.c_s * float(np.sum(batches.init_w * np.maximum(z, 0.0))) / wsum
    _v_backward(V, cache_i, h.c_s * batches.init_w * act / wsum, grads)

    # Decrease: masked to the beta sublevel set.
    v_d, cache_d = _v_forward(V, batches.domain_x)
    mask = v_d < w.beta
    if np.any(mask):
        xn = plant.step(batches.domain_x, controller)
        v_n, cache_n = _v_forward(V, xn)
        in_u = batches.task.unsafe_mask(xn)
        vhat = np.where(in_u, w.alpha, v_n)
        z = h.delta2 + w.epsilon + vhat - v_d
        act = (z > 0) & mask
        denom = float(batches.domain_w[mask].sum())
        loss += h.c_d * float(np.sum(batches.domain_w[mask] * np.maximum(z[mask], 0.0))) / denom
        _v_backward(V, cache_d, -h.c_d * batches.domain_w * act / denom, grads)
        _v_backward(V, cache_n, h.c_d * batches.domain_w * (act & ~in_u) / denom, grads)

    # Unsafe shell: penalize V below alpha + delta3 headroom.
    v_u, cache_u = _v_forward(V, batches.unsafe_x)
    wsum = batches.unsafe_w.sum()
    z = h.delta3 + w.alpha - v_u
    act = z > 0
    loss += h.c_u * float(np.sum(batches.unsafe_w * np.maximum(z, 0.0))) / wsum
    _v_backward(V, cache_u, -h.c_u * batches.unsafe_w * act / wsum, grads)

    return loss, grads


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    v: Mlp
    final_loss: float
    history: list[float]

    def to_json(self) -> dict:
        return {"final_loss": self.final_loss, "history": self.history}


def _sgd_step(V: Mlp, grads, lr: float) -> Mlp:
    return make_mlp(
        [
            (l.weights - lr * dw, l.bias - lr * db, l.activation)
            for l, (dw, db) in zip(V.layers, grads)
        ]
    )


def _fit(
    V: Mlp,
    controller: Mlp,
    plant: Plant,
    batches: SampleBatches,
    w: Witness,
    h: LossHyper,
    schedule: TrainSchedule,
) -> TrainResult:
    history: list[float] = []
    for _ in range(schedule.iterations):
        loss, grads = rwa_loss(V, controller, plant, batches, w, h)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged to {loss!r}", history)
        history.append(loss)
        V = _sgd_step(V, grads, schedule.lr)
    final = rwa_loss(V, controller, plant, batches, w, h)[0]
    if not np.isfinite(final):
        raise TrainingError(f"loss diverged to {final!r}", history)
    return TrainResult(V, final, history)


def train(
    V0: Mlp,
    controller: Mlp,
    dyn,
    task: RwaTask,
    w: Witness,
    h: LossHyper,
    schedule: TrainSchedule,
) -> TrainResult:
    """Full-batch gradient descent of rwa_loss on freshly sampled batches.

    Zero iterations returns V0 itself.  A non-finite loss raises with the
    history collected so far.
    """
    plant = _as_plant(dyn)
    batches = sample_sets(
        task, (schedule.n_init, schedule.n_domain, schedule.n_unsafe), schedule.seed
    )
    return _fit(V0, controller, plant, batches, w, h, schedule)


def init_certificate(input_dim: int, hidden=(32, 32), seed: int = 0) -> Mlp:
    """Random ReLU network with a scalar output, scaled for unit-order inputs."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, 1]
    layers = []
    for i in range(len(dims) - 1):
        scale = np.sqrt(2.0 / dims[i])
        wts = rng.normal(0.0, scale, size=(dims[i + 1], dims[i]))
        act = "relu" if i < len(dims) - 2 else "identity"
        layers.append((wts, np.zeros(dims[i + 1]), act))
    return make_mlp(layers)


def inject_dip(V: Mlp, direction, center: float, half_width: float, depth: float) -> Mlp:
    """Return V minus a localized tent bump along a direction.

    Three extra first-layer units build a tent of the given depth peaking
    where direction.x equals center, with support center +- half_width;
    relay units carry it through the remaining hidden layers.  Used to
    plant a known flaw in an otherwise healthy certificate.
    """
    if len(V.layers) < 2:
        raise ValueError("certificate needs at least one hidden layer")
    if half_width <= 0 or depth <= 0:
        raise ValueError("half_width and depth must be positive")
    a = np.asarray(direction, dtype=np.float64)
    if a.shape != (V.input_dim,):
        raise ValueError(f"direction must have shape ({V.input_dim},), got {a.shape}")
    s = 1.0 / half_width
    tent_w = np.stack([a * s, a * s, a * s])
    tent_b = np.array([1.0 - center * s, -center * s, -1.0 - center * s])
    layers = []
    first = V.layers[0]
    layers.append(
        (
            np.vstack([first.weights, tent_w]),
            np.concatenate([first.bias, tent_b]),
            first.activation,
        )
    )
    for layer in V.layers[1:-1]:
        n_out, n_in = layer.weights.shape
        wts = np.zeros((n_out + 3, n_in + 3))
        wts[:n_out, :n_in] = layer.weights
        wts[n_out:, n_in:] = np.eye(3)
        layers.append((wts, np.concatenate([layer.bias, np.zeros(3)]), layer.activation))
    last = V.layers[-1]
    tent_out = depth * np.array([[-1.0, 2.0, -1.0]])
    layers.append(
        (np.hstack([last.weights, tent_out]), last.bias, last.activation)
    )
    return make_mlp(layers)


# ---------------------------------------------------------------------------
# Gamma search and verification


def gamma_search(V: Mlp, domain: Box, w: Witness, tol: float, budget: Budget = Budget()) -> float:
    """Certified lower bound of V over the domain.

    The returned gamma satisfies V >= gamma everywhere, with a concrete
    state within tol of it, so a strict V < gamma query is unsatisfiable
    while V < gamma + 10*tol has a witness.  Budget exhaustion raises with
    the best bound found so far.
    """
    graph, _, off_v = _value_graph(V)
    res = find_min_output(graph, domain, off_v, tol, budget)
    return res.lower_bound


def _check_tiling(base: Box, cells: list[Box], label: str) -> None:
    """Cells must cover the base box exactly with disjoint interiors."""
    if not cells:
        raise ValueError(f"{label}: empty partition")
    slack = 1e-9 * max(1.0, float(np.max(np.abs(base.hi - base.lo))))
    vol = 0.0
    for c in cells:
        if c.dim != base.dim:
            raise ValueError(f"{label}: partition cell has wrong dimension")
        if np.any(c.lo < base.lo - slack) or np.any(c.hi > base.hi + slack):
            raise ValueError(f"{label}: partition cell leaves the region")
        vol += c.volume()
    if abs(vol - base.volume()) > 1e-6 * max(base.volume(), 1e-300):
        raise ValueError(
            f"{label}: partition volume {vol} does not match region volume {base.volume()}"
        )
    for i in range(len(cells)):
        for j in range(i + 1, len(cells)):
            inter = np.minimum(cells[i].hi, cells[j].hi) - np.maximum(
                cells[i].lo, cells[j].lo
            )
            if np.all(inter > slack):
                raise ValueError(f"{label}: partition cells {i} and {j} overlap")


def _step_bound_queries(controller: Mlp, plant: Plant, task: RwaTask) -> list[Query]:
    """One query per direction: from the in-shell-or-safer part of the
    domain, one closed-loop step must not land past the shell's outer
    bound."""
    bld = GraphBuilder()
    x = bld.input(plant.dim)
    u = ng._clamp_via_gadgets(bld, bld.add_mlp(x, controller), -plant.f_max, plant.f_max)
    xn = bld.affine([x, u], [plant.a, plant.b])
    off_x = bld.add_output(x)
    off_xn = bld.add_output(xn)
    graph = bld.build()
    queries = []
    for d in task.unsafe:
        a = np.asarray(d.a)
        clauses = [
            (
                LinearConstraint(
                    {off_x + i: float(c) for i, c in enumerate(u2.a) if c != 0.0},
                    "<=",
                    u2.p + u2.margin,
                ),
            )
            for u2 in task.unsafe
        ]
        clauses.append(
            (
                LinearConstraint(
                    {off_xn + i: float(c) for i, c in enumerate(a) if c != 0.0},
                    ">",
                    d.p + d.margin,
                ),
            )
        )
        queries.append(Query(graph, task.domain, tuple(clauses)))
    return queries


@dataclass
class CertificateReport:
    """Per-condition query verdicts plus the one-step shell bound check."""

    status: str  # "PASS" | "FAIL" | "INCONCLUSIVE"
    witness: Witness
    conditions: dict = field(default_factory=dict)
    step_bound: list = field(default_factory=list)

    def counterexamples(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for cond, entries in self.conditions.items():
            for e in entries:
                if e["status"] == "SAT":
                    out.append((cond, np.asarray(e["counterexample"])))
        return out

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "witness": self.witness.to_json(),
            "conditions": self.conditions,
            "step_bound": self.step_bound,
        }


def verify_certificate(
    V: Mlp,
    controller: Mlp,
    dyn,
    task: RwaTask,
    w: Witness,
    partitions: dict | None = None,
    per_query_timeout: float = 300.0,
) -> CertificateReport:
    """Check the four certificate conditions and the one-step shell bound.

    partitions optionally maps a condition name to boxes tiling its
    quantification region (the init box for the init condition, the domain
    for the others); tiling is validated before any query runs.  PASS means
    every query was refuted; any satisfiable query means FAIL with the
    validated counterexample recorded; otherwise timeouts make the result
    INCONCLUSIVE.
    """
    plant = _as_plant(dyn)
    partitions = dict(partitions or {})
    bases = {
        "floor": task.domain,
        "init": task.init,
        "decrease": task.domain,
        "unsafe": task.domain,
    }
    for cond, cells in partitions.items():
        if cond not in bases:
            raise ValueError(f"unknown condition {cond!r} in partitions")
        _check_tiling(bases[cond], list(cells), cond)
    budget = Budget(timeout_s=per_query_timeout)
    report = CertificateReport(status="PASS", witness=w)
    any_sat = False
    any_timeout = False
    for cond in RWA_CONDITIONS:
        entries = []
        cells = partitions.get(cond)
        regions = list(cells) if cells is not None else [None]
        for ci, cell in enumerate(regions):
            queries = encode_rwa_condition(V, controller, plant, task, cond, w, region=cell)
            for qi, q in enumerate(queries):
                v = check(q, budget)
                any_sat |= v.status == "SAT"
                any_timeout |= v.status == "TIMEOUT"
                entries.append(
                    {
                        "cell": ci if cell is not None else None,
                        "query": qi,
                        "status": v.status,
                        "branches": v.branches,
                        "counterexample": None
                        if v.counterexample is None
                        else [float(x) for x in v.counterexample],
                    }
                )
        report.conditions[cond] = entries
    for qi, q in enumerate(_step_bound_queries(controller, plant, task)):
        v = check(q, budget)
        any_sat |= v.status == "SAT"
        any_timeout |= v.status == "TIMEOUT"
        report.step_bound.append(
            {
                "query": qi,
                "status": v.status,
                "branches": v.branches,
                "counterexample": None
                if v.counterexample is None
                else [float(x) for x in v.counterexample],
            }
        )
    if any_sat:
        report.status = "FAIL"
    elif any_timeout:
        report.status = "INCONCLUSIVE"
    return report


# ---------------------------------------------------------------------------
# Retraining loop


@dataclass
class RetrainResult:
    v: Mlp
    rounds: int
    status: str  # "PASS" | "EXHAUSTED"
    witness: Witness
    history: list[dict]

    def to_json(self) -> dict:
        return {
            "rounds": self.rounds,
            "status": self.status,
            "witness": self.witness.to_json(),
            "history": self.history,
        }


# Which sample batch a counterexample for each condition augments.
_CX_BATCH = {"floor": "domain", "init": "init", "decrease": "domain", "unsafe": "unsafe"}


def retrain_loop(
    V: Mlp,
    controller: Mlp,
    dyn,
    task: RwaTask,
    w: Witness,
    h: LossHyper,
    max_rounds: int,
    schedule: TrainSchedule | None = None,
    gamma_tol: float = 1e-3,
    partitions: dict | None = None,
    per_query_timeout: float = 300.0,
) -> RetrainResult:
    """Alternate verification and counterexample-weighted retraining.

    Each round re-searches gamma, verifies, and either stops on PASS or
    folds the counterexamples into the training batches (at weight w_ce)
    and fits again.  gamma is clipped to beta so the witness ordering
    survives; the clipped value is still a valid lower bound.
    """
    if max_rounds < 1:
        raise ValueError(f"max_rounds must be >= 1, got {max_rounds}")
    plant = _as_plant(dyn)
    schedule = schedule or TrainSchedule(iterations=400)
    batches = sample_sets(
        task, (schedule.n_init, schedule.n_domain, schedule.n_unsafe), schedule.seed
    )
    history: list[dict] = []
    for rnd in range(1, max_rounds + 1):
        gamma = min(gamma_search(V, task.domain, w, gamma_tol), w.beta)
        w_r = w.with_gamma(gamma)
        report = verify_certificate(
            V, controller, plant, task, w_r, partitions, per_query_timeout
        )
        cxs = report.counterexamples()
        history.append(
            {
                "round": rnd,
                "gamma": gamma,
                "status": report.status,
                "counterexamples": [
                    {"condition": c, "state": [float(v) for v in x]} for c, x in cxs
                ],
            }
        )
        if report.status == "PASS":
            return RetrainResult(V, rnd, "PASS", w_r, history)
        for cond, x in cxs:
            batches.augment(_CX_BATCH[cond], x, h.w_ce)
        fit = _fit(V, controller, plant, batches, w, h, schedule)
        V = fit.v
        history[-1]["loss_after"] = fit.final_loss
    gamma = min(gamma_search(V, task.domain, w, gamma_tol), w.beta)
    return RetrainResult(V, max_rounds, "EXHAUSTED", w.with_gamma(gamma), history)


# ---------------------------------------------------------------------------
# Empirical cross-check


def check_lemma1(
    V: Mlp,
    controller: Mlp,
    dyn,
    task: RwaTask,
    w: Witness,
    n_rollouts: int = 1000,
    horizon: int = 500,
    seed: int = 0,
) -> dict:
    """Simulate from sublevel-set starts and report reach/avoid violations.

    Starts are sampled with V(x) <= beta outside the goal box; each rollout
    must enter the goal within the horizon without an unsafe state on the
    way.  Violations are reported, not raised: on an unverified V they are
    expected.
    """
    plant = _as_plant(dyn)
    rng = np.random.default_rng(seed)
    starts = np.empty((0, task.domain.dim))
    for _ in range(500):
        batch = rng.uniform(
            task.domain.lo, task.domain.hi, size=(max(4 * n_rollouts, 64), task.domain.dim)
        )
        v, _ = _v_forward(V, batch)
        keep = (v <= w.beta) & ~task.goal_mask(batch)
        starts = np.concatenate([starts, batch[keep]])
        if starts.shape[0] >= n_rollouts:
            break
    starts = starts[:n_rollouts]
    violations = []
    reach_steps = []
    x = starts.copy()
    reached = np.full(x.shape[0], -1)
    hit_unsafe = np.zeros(x.shape[0], dtype=bool)
    for t in range(1, horizon + 1):
        x = plant.step(x, controller)
        live = reached < 0
        hit_unsafe |= live & task.unsafe_mask(x)
        newly = live & task.goal_mask(x) & ~hit_unsafe
        reached[newly] = t
    for i in range(starts.shape[0]):
        if reached[i] < 0 or hit_unsafe[i]:
            violations.append(
                {
                    "start": [float(v) for v in starts[i]],
                    "reason": "unsafe" if hit_unsafe[i] else "no-reach",
                }
            )
        else:
            reach_steps.append(int(reached[i]))
    return {
        "n_rollouts": int(starts.shape[0]),
        "n_violations": len(violations),
        "violations": violations[:50],
        "reach_steps_mean": float(np.mean(reach_steps)) if reach_steps else None,
        "reach_steps_max": max(reach_steps) if reach_steps else None,
    }


# ---------------------------------------------------------------------------
# Built-in 1-D example task


def make_toy_setup() -> tuple[RwaTask, Plant, Mlp]:
    """A 1-D integrator with a proportional controller.

    x' = x + 0.5 clamp(u), u = -0.8 x: contraction toward the origin with
    saturation far out.  Domain [-2, 2], initial set [-1.2, 1.2], goal
    [-0.1, 0.1], unsafe |x| > 1.5 with a 0.5 shell margin.
    """
    plant = Plant(np.array([[1.0]]), np.array([[0.5]]), f_max=1.0)
    controller = make_mlp([(np.array([[-0.8]]), np.zeros(1), "identity")])
    task = RwaTask(
        domain=Box([-2.0], [2.0]),
        init=Box([-1.2], [1.2]),
        goal=Box([-0.1], [0.1]),
        unsafe=(
            UnsafeHalfspace((1.0,), 1.5, 0.5),
            UnsafeHalfspace((-1.0,), 1.5, 0.5),
        ),
    )
    return task, plant, controller

