"""Command-line front end: configuration, subcommands, and report emission.

One subcommand per procedure keeps runs auditable:

    simulate          closed-loop rollout from a concrete start state
    kinduct           k-induction sweep over a region grid
    kinduct-empirical sampled sanity check of the same property
    gridreach         cell-size calibration, cell graph, cycle/escape report
    tube              iterated forward reach tube from a start box
    cert-train        train a reach-while-avoid certificate on the toy task
    cert-verify       gamma search plus the four certificate conditions
    cert-retrain      counterexample-guided retraining until PASS
    gamma             verified lower bound on the certificate over the domain

Every run writes a resolved config snapshot (config.json) plus one or more
reports into the output directory.  JSON reports are emitted with sorted keys
and all wall-clock fields stripped, so identical config and seed give
byte-identical files apart from the generated_at line.

Exit codes: 0 property verified / PASS, 1 counterexample / FAIL,
2 inconclusive / timeout, 3 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import certificate as cert
from . import kinduction, reachability, simulation
from .controllers import load_shipped_controller
from .dynamics import DynParams
from .netgraph import Mlp, load_network, save_network
from .properties import GoalSpec
from .verifier import Box, Budget, BudgetError

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "emit_report",
    "strip_volatile",
    "k_frequency_rows",
    "main",
]

ENV_OUT = "DOCKVERIFY_OUT"
ENV_WORKERS = "DOCKVERIFY_WORKERS"

# Keys removed from emitted reports: they vary run to run even under a fixed
# seed, and reproducibility is checked by byte comparison.
VOLATILE_KEYS = frozenset(
    {"wall_time_s", "total_time_s", "region_time_min_s", "region_time_max_s"}
)


class ConfigError(ValueError):
    """Bad configuration: unknown key, missing file, or out-of-range value."""


@dataclass
class RunConfig:
    """Fully-resolved run settings.  The JSON schema is flat: file keys and
    command-line flags both mirror the field names below."""

    # dynamics
    mass: float = 12.0
    mean_motion: float = 0.001027
    timestep: float = 1.0
    f_max: float = 1.0
    # controller network; None loads the shipped desk-scale controller
    controller: str | None = None
    # analysis domain
    domain_lo: tuple = (-5.0, -5.0, -0.2, -0.2)
    domain_hi: tuple = (5.0, 5.0, 0.2, 0.2)
    # property parameters
    epsilon: float = 1e-3
    n_directions: int = 400
    goal_half_side: float = 0.35
    # k-induction
    grid: tuple = (5, 5)
    k_min: int = 1
    k_max: int = 20
    per_k_timeout: float = 600.0
    max_depth: int = 6
    # grid reachability
    reach_k: int = 1
    reach_tol: float = 0.02
    n_outer: int = 2
    zero_band_cap: float = 0.2
    max_cells_per_axis: int = 32
    per_query_timeout: float = 60.0
    # certificate witness, loss hypers, and training schedule
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 0.0
    cert_epsilon: float = 1e-3
    gamma_tol: float = 1e-3
    hidden: tuple = (16, 16)
    iterations: int = 1500
    warmup: int = 200
    lr: float = 0.05
    n_init: int = 128
    n_domain: int = 512
    n_unsafe: int = 128
    max_rounds: int = 10
    retrain_iterations: int = 600
    retrain_lr: float = 0.02
    cert_timeout: float = 300.0
    # seeds and budgets
    seed: int = 0
    timeout_s: float = 5000.0
    max_branches: int = 2_000_000
    workers: int = 10
    # output directory (the run directory)
    out: str = "runs"

    def to_json(self) -> dict:
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

# fields holding fixed-length numeric sequences, with expected length
_SEQ_FIELDS = {"domain_lo": 4, "domain_hi": 4, "grid": 2, "hidden": None}

_POSITIVE = (
    "mass", "mean_motion", "timestep", "f_max", "epsilon", "goal_half_side",
    "per_k_timeout", "reach_tol", "zero_band_cap", "per_query_timeout",
    "cert_epsilon", "gamma_tol", "lr", "retrain_lr", "cert_timeout",
    "timeout_s",
)
_AT_LEAST_ONE = (
    "k_min", "reach_k", "n_outer", "max_cells_per_axis", "n_init", "n_domain",
    "n_unsafe", "max_rounds", "max_branches", "workers",
)
_NON_NEGATIVE = ("max_depth", "warmup", "iterations", "retrain_iterations")


def _coerce(name: str, value):
    """Cast a raw JSON/flag value to the field's declared type."""
    if name in _SEQ_FIELDS:
        want = _SEQ_FIELDS[name]
        try:
            seq = tuple(value)
        except TypeError:
            raise ConfigError(f"config field '{name}' must be a sequence") from None
        if want is not None and len(seq) != want:
            raise ConfigError(f"config field '{name}' needs {want} entries, got {len(seq)}")
        kind = int if name in ("grid", "hidden") else float
        try:
            return tuple(kind(v) for v in seq)
        except (TypeError, ValueError):
            raise ConfigError(f"config field '{name}' has a non-numeric entry: {seq!r}") from None
    if name == "controller":
        return None if value is None else str(value)
    if name == "out":
        return str(value)
    kind = type(getattr(RunConfig(), name))
    try:
        if kind is int:
            # reject silent float truncation
            if float(value) != int(value):
                raise ValueError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config field '{name}' expects {kind.__name__}, got {value!r}") from None


def _validate(cfg: RunConfig) -> None:
    for name in _POSITIVE:
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"config field '{name}' must be > 0, got {getattr(cfg, name)}")
    for name in _AT_LEAST_ONE:
        if getattr(cfg, name) < 1:
            raise ConfigError(f"config field '{name}' must be >= 1, got {getattr(cfg, name)}")
    for name in _NON_NEGATIVE:
        if getattr(cfg, name) < 0:
            raise ConfigError(f"config field '{name}' must be >= 0, got {getattr(cfg, name)}")
    if cfg.n_directions < 4:
        raise ConfigError(f"config field 'n_directions' must be >= 4, got {cfg.n_directions}")
    if cfg.k_max < cfg.k_min:
        raise ConfigError(f"k_max ({cfg.k_max}) must be >= k_min ({cfg.k_min})")
    if any(g < 1 for g in cfg.grid):
        raise ConfigError(f"config field 'grid' entries must be >= 1, got {cfg.grid}")
    if any(h < 1 for h in cfg.hidden) or not cfg.hidden:
        raise ConfigError(f"config field 'hidden' needs positive widths, got {cfg.hidden}")
    for lo, hi in zip(cfg.domain_lo, cfg.domain_hi):
        if not lo < hi:
            raise ConfigError(
                f"domain_lo must be strictly below domain_hi, got {cfg.domain_lo} / {cfg.domain_hi}"
            )
    if not cfg.alpha > cfg.beta:
        raise ConfigError(f"witness needs alpha > beta, got alpha={cfg.alpha} beta={cfg.beta}")
    if not cfg.beta >= cfg.gamma:
        raise ConfigError(f"witness needs beta >= gamma, got beta={cfg.beta} gamma={cfg.gamma}")
    if cfg.controller is not None and not Path(cfg.controller).is_file():
        raise ConfigError(f"controller file not found: {cfg.controller}")


def parse_config(path=None, overrides: dict | None = None, echo: bool = True) -> RunConfig:
    """Resolve a RunConfig from defaults, optional JSON file, environment,
    and explicit overrides, in that precedence order (later wins).

    Unknown keys are rejected by name.  When echo is set the resolved config
    is written to <out>/config.json for provenance.
    """
    merged: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        merged.update(raw)
    if os.environ.get(ENV_OUT):
        merged["out"] = os.environ[ENV_OUT]
    if os.environ.get(ENV_WORKERS):
        merged["workers"] = os.environ[ENV_WORKERS]
    if overrides:
        merged.update(overrides)

    unknown = sorted(set(merged) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key '{unknown[0]}'")
    cfg = RunConfig(**{name: _coerce(name, value) for name, value in merged.items()})
    _validate(cfg)
    if echo:
        outdir = Path(cfg.out)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "config.json", "w") as fh:
            json.dump(cfg.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return cfg


def strip_volatile(obj):
    """Recursively drop wall-clock fields from a report structure."""
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, (list, tuple)):
        return [strip_volatile(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def emit_report(results, fmt: str = "json", outdir=".", name: str = "report",
                fieldnames=None) -> Path:
    """Write results to <outdir>/<name>.<fmt> and return the path.

    JSON payloads get sorted keys, stripped wall-clock fields, and a
    generated_at timestamp (the only line that varies between identical
    runs).  CSV expects a sequence of flat dicts; with an empty sequence the
    file is header-only, which requires explicit fieldnames.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = outdir / f"{name}.json"
        payload = {
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "report": strip_volatile(results),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path
    if fmt == "csv":
        path = outdir / f"{name}.csv"
        rows = list(results)
        if fieldnames is None:
            if not rows:
                raise ValueError("empty CSV needs explicit fieldnames")
            fieldnames = list(rows[0].keys())
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        return path
    raise ValueError(f"format must be 'json' or 'csv', got {fmt!r}")


def k_frequency_rows(ks) -> list[dict]:
    """Histogram rows ({'k': ..., 'count': ...}) from either a mapping
    k -> count or an iterable of k values, sorted by k."""
    counts = {int(k): int(v) for k, v in ks.items()} if isinstance(ks, dict) \
        else dict(Counter(int(k) for k in ks))
    return [{"k": k, "count": counts[k]} for k in sorted(counts)]


def _load_json_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# shared object construction

def _dyn(cfg: RunConfig) -> DynParams:
    return DynParams(mass=cfg.mass, mean_motion=cfg.mean_motion, timestep=cfg.timestep)


def _domain(cfg: RunConfig) -> Box:
    return Box(cfg.domain_lo, cfg.domain_hi)


def _controller(cfg: RunConfig) -> Mlp:
    if cfg.controller is None:
        return load_shipped_controller()
    return load_network(cfg.controller)


def _witness(cfg: RunConfig) -> cert.Witness:
    return cert.Witness(cfg.alpha, cfg.beta, cfg.gamma, cfg.cert_epsilon)


def _schedule(cfg: RunConfig, retrain: bool = False) -> cert.TrainSchedule:
    if retrain:
        return cert.TrainSchedule(
            iterations=cfg.retrain_iterations, warmup=0, lr=cfg.retrain_lr,
            seed=cfg.seed + 1, n_init=cfg.n_init, n_domain=cfg.n_domain,
            n_unsafe=cfg.n_unsafe,
        )
    return cert.TrainSchedule(
        iterations=cfg.iterations, warmup=cfg.warmup, lr=cfg.lr, seed=cfg.seed,
        n_init=cfg.n_init, n_domain=cfg.n_domain, n_unsafe=cfg.n_unsafe,
    )


def _value_path(cfg: RunConfig, flag_value) -> Path:
    return Path(flag_value) if flag_value else Path(cfg.out) / "value.net"


def _load_value(cfg: RunConfig, flag_value) -> Mlp:
    path = _value_path(cfg, flag_value)
    if not path.is_file():
        raise ConfigError(f"value network not found: {path} (run cert-train first)")
    return load_network(path)


# ---------------------------------------------------------------------------
# subcommand runners (each returns the process exit code)

def _run_simulate(cfg: RunConfig, ns) -> int:
    net = _controller(cfg)
    params = _dyn(cfg)
    traj = simulation.rollout(
        net, params, ns.start, ns.steps, stop_at_goal=ns.stop_at_goal,
        f_max=cfg.f_max, goal_half_side=cfg.goal_half_side,
    )
    safe = [simulation.exact_safety(s, params) for s in traj.states]
    violations = int(sum(1 for ok in safe if not ok))
    report = {
        "steps": len(traj),
        "reached_goal": traj.reached_goal,
        "final_state": [float(v) for v in traj.states[-1]],
        "min_manhattan": float(traj.manhattan_positions().min()),
        "safety_violations": violations,
        "replay_error": traj.replay_error(),
        "trajectory": traj.to_json(),
    }
    emit_report(report, "json", cfg.out, "simulate")
    traj.write_csv(Path(cfg.out) / "trajectory.csv")
    print(f"simulate: {len(traj)} steps, goal={traj.reached_goal}, "
          f"safety violations={violations}")
    return 1 if violations else 0


def _run_kinduct(cfg: RunConfig, ns) -> int:
    net = _controller(cfg)
    report = kinduction.drive(
        net, _dyn(cfg), _domain(cfg), grid=cfg.grid, eps=cfg.epsilon,
        k_min=cfg.k_min, k_max=cfg.k_max, per_k_timeout=cfg.per_k_timeout,
        goal=GoalSpec(cfg.goal_half_side), f_max=cfg.f_max,
        workers=cfg.workers, max_depth=cfg.max_depth,
    )
    summary = report["summary"]
    regions = report["regions"]
    emit_report(report, "json", cfg.out, "kinduct")
    emit_report(
        k_frequency_rows([r["k"] for r in regions if r["status"] == "UNSAT"]),
        "csv", cfg.out, "k_frequency", fieldnames=["k", "count"],
    )
    emit_report(
        [{"id": r["id"], "status": r["status"], "k": r["k"]} for r in regions],
        "csv", cfg.out, "regions", fieldnames=["id", "status", "k"],
    )
    print(f"kinduct: {summary['regions']} regions, unsat={summary['unsat']}, "
          f"sat={summary['sat']}, timeout={summary['timeout']}")
    if summary["sat"]:
        return 1
    if summary["timeout"]:
        return 2
    return 0


def _run_kinduct_empirical(cfg: RunConfig, ns) -> int:
    net = _controller(cfg)
    params = _dyn(cfg)
    domain = _domain(cfg)
    first = kinduction.empirical_check(
        net, params, n_samples=ns.samples, k_max=cfg.k_max, eps=cfg.epsilon,
        seed=cfg.seed, domain=domain, goal=GoalSpec(cfg.goal_half_side),
        f_max=cfg.f_max,
    )
    rng = np.random.default_rng(cfg.seed + 1)
    starts = rng.uniform(domain.lo, domain.hi, size=(ns.samples, 4))
    second = kinduction.empirical_second_property(
        net, params, starts, k_max=cfg.k_max, eps=cfg.epsilon, f_max=cfg.f_max,
    )
    report = {"first_property": first, "second_property": second}
    emit_report(report, "json", cfg.out, "kinduct_empirical")
    emit_report(k_frequency_rows(first["k_frequency"]), "csv", cfg.out,
                "empirical_k_frequency", fieldnames=["k", "count"])
    bad = len(first["violations"]) + len(second["violations"])
    print(f"kinduct-empirical: {ns.samples} samples per property, "
          f"violations={bad}")
    return 1 if bad else 0


def _run_gridreach(cfg: RunConfig, ns) -> int:
    net = _controller(cfg)
    params = _dyn(cfg)
    domain = _domain(cfg)
    try:
        spec = reachability.calibrate_cell_size(
            net, params, domain, k=cfg.reach_k, tol=cfg.reach_tol,
            f_max=cfg.f_max, n_outer=cfg.n_outer,
            zero_band_cap=cfg.zero_band_cap,
            per_query_timeout=cfg.per_query_timeout,
            max_cells_per_axis=cfg.max_cells_per_axis,
        )
    except reachability.CalibrationError as exc:
        emit_report({"calibration": "failed", "detail": str(exc),
                     "diagnostics": strip_volatile(exc.diagnostics)},
                    "json", cfg.out, "gridreach")
        print(f"gridreach: calibration failed: {exc}")
        return 2
    graph = reachability.build_cell_graph(
        net, params, domain, spec, k=cfg.reach_k, f_max=cfg.f_max,
        per_query_timeout=cfg.per_query_timeout, workers=cfg.workers,
    )
    cycles = reachability.find_cycles(graph)
    ghs = cfg.goal_half_side
    goal_box = Box(
        (-ghs, -ghs, domain.lo[2], domain.lo[3]),
        (ghs, ghs, domain.hi[2], domain.hi[3]),
    )
    goal_cells = reachability.cells_intersecting(domain, spec, goal_box)
    liveness: dict = {"goal_cells": sorted(goal_cells)}
    code = 0
    try:
        live = reachability.liveness_cells(graph, goal_cells)
        liveness["status"] = "proved"
        liveness["live_cells"] = len(live)
    except reachability.CycleError as exc:
        liveness["status"] = "refused"
        liveness["cycles"] = len(exc.cycles)
        code = 1
    report = {
        "spec": spec.to_json(),
        "cells": len(graph.boxes),
        "edges": len(graph.edges),
        "self_loop_possible": len(graph.self_loop_possible),
        "escapes_domain": len(graph.escapes_domain),
        "timeout_edges": len(graph.timeout_edges),
        "cycles": len(cycles),
        "longest_cycle": max((len(c) for c in cycles), default=0),
        "sample_cycles": [list(c) for c in cycles[:20]],
        "liveness": liveness,
        "graph": graph.to_json(),
    }
    emit_report(report, "json", cfg.out, "gridreach")
    graph.write_csv(Path(cfg.out) / "cells.csv", Path(cfg.out) / "edges.csv")
    print(f"gridreach: {len(graph.boxes)} cells, {len(graph.edges)} edges, "
          f"{len(graph.escapes_domain)} escaping, {len(cycles)} cycles, "
          f"liveness {liveness['status']}")
    return code


def _run_tube(cfg: RunConfig, ns) -> int:
    net = _controller(cfg)
    start = Box(ns.start_lo, ns.start_hi)
    result = reachability.forward_tube(
        net, _dyn(cfg), start, k=cfg.reach_k, n_iter=ns.n_iter,
        f_max=cfg.f_max, goal_half_side=cfg.goal_half_side,
        domain=_domain(cfg) if ns.bounded else None,
    )
    emit_report(result.to_json(), "json", cfg.out, "tube")
    rows = [
        {"step": i, **{f"lo{d}": b.lo[d] for d in range(4)},
         **{f"hi{d}": b.hi[d] for d in range(4)}}
        for i, b in enumerate(result.boxes)
    ]
    emit_report(rows, "csv", cfg.out, "tube_boxes")
    print(f"tube: {len(result.boxes) - 1} iterations, "
          f"goal at {result.reached_goal_at}, diverged at {result.diverged_at}")
    return 0 if result.reached_goal_at is not None else 2


def _run_cert_train(cfg: RunConfig, ns) -> int:
    task, plant, controller = cert.make_toy_setup()
    v0 = cert.init_certificate(len(task.domain.lo), cfg.hidden, seed=cfg.seed)
    try:
        result = cert.train(v0, controller, plant, task, _witness(cfg),
                            cert.LossHyper(), _schedule(cfg))
    except cert.TrainingError as exc:
        emit_report({"status": "diverged", "detail": str(exc),
                     "history": exc.history}, "json", cfg.out, "cert_train")
        print(f"cert-train: diverged: {exc}")
        return 1
    path = _value_path(cfg, ns.value)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_network(result.v, path)
    initial = result.history[0] if result.history else result.final_loss
    report = {
        "value_path": str(path),
        "initial_loss": initial,
        "final_loss": result.final_loss,
        "loss_ratio": result.final_loss / initial if initial > 0 else 0.0,
        "history": result.history,
    }
    emit_report(report, "json", cfg.out, "cert_train")
    print(f"cert-train: loss {initial:.4g} -> {result.final_loss:.4g}, "
          f"saved {path}")
    return 0


def _run_gamma(cfg: RunConfig, ns) -> int:
    task, _, _ = cert.make_toy_setup()
    v = _load_value(cfg, ns.value)
    budget = Budget(timeout_s=cfg.timeout_s, max_branches=cfg.max_branches)
    try:
        gamma = cert.gamma_search(v, task.domain, _witness(cfg),
                                  tol=cfg.gamma_tol, budget=budget)
    except BudgetError as exc:
        emit_report({"status": "timeout", "detail": str(exc)},
                    "json", cfg.out, "gamma")
        print(f"gamma: budget exhausted: {exc}")
        return 2
    emit_report({"gamma": gamma, "tol": cfg.gamma_tol}, "json", cfg.out, "gamma")
    print(f"gamma: {gamma:.6g}")
    return 0


def _run_cert_verify(cfg: RunConfig, ns) -> int:
    task, plant, controller = cert.make_toy_setup()
    v = _load_value(cfg, ns.value)
    w = _witness(cfg)
    budget = Budget(timeout_s=cfg.timeout_s, max_branches=cfg.max_branches)
    try:
        gamma = cert.gamma_search(v, task.domain, w, tol=cfg.gamma_tol,
                                  budget=budget)
    except BudgetError as exc:
        emit_report({"status": "INCONCLUSIVE", "detail": f"gamma search: {exc}"},
                    "json", cfg.out, "cert_verify")
        print(f"cert-verify: gamma search exhausted its budget")
        return 2
    w = w.with_gamma(min(gamma, w.beta))
    report = cert.verify_certificate(v, controller, plant, task, w,
                                     per_query_timeout=cfg.cert_timeout)
    payload = report.to_json()
    payload["gamma"] = w.gamma
    emit_report(payload, "json", cfg.out, "cert_verify")
    print(f"cert-verify: {report.status} (gamma={w.gamma:.6g})")
    return {"PASS": 0, "FAIL": 1}.get(report.status, 2)


def _run_cert_retrain(cfg: RunConfig, ns) -> int:
    task, plant, controller = cert.make_toy_setup()
    v = _load_value(cfg, ns.value)
    result = cert.retrain_loop(
        v, controller, plant, task, _witness(cfg), cert.LossHyper(),
        max_rounds=cfg.max_rounds, schedule=_schedule(cfg, retrain=True),
        gamma_tol=cfg.gamma_tol, per_query_timeout=cfg.cert_timeout,
    )
    out_path = Path(cfg.out) / "value_retrained.net"
    save_network(result.v, out_path)
    payload = result.to_json()
    payload["value_path"] = str(out_path)
    emit_report(payload, "json", cfg.out, "cert_retrain")
    rounds = len(result.history)
    print(f"cert-retrain: {result.status} after {rounds} round(s), "
          f"saved {out_path}")
    if result.status == "PASS":
        return 0
    last = result.history[-1]["status"] if result.history else "FAIL"
    return 1 if last == "FAIL" else 2


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the documented usage-error code is 3
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("config overrides (mirror config file keys)")
    g.add_argument("--config", metavar="PATH", help="JSON config file")
    for name, field in _FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if name in _SEQ_FIELDS:
            nargs = _SEQ_FIELDS[name] or "+"
            kind = int if name in ("grid", "hidden") else float
            g.add_argument(flag, nargs=nargs, type=kind, default=argparse.SUPPRESS,
                           dest=name, help=f"override '{name}'")
        elif name == "controller":
            g.add_argument(flag, default=argparse.SUPPRESS, dest=name,
                           help="controller network file (default: shipped)")
        elif name == "out":
            g.add_argument(flag, default=argparse.SUPPRESS, dest=name,
                           help="output directory")
        else:
            kind = type(getattr(RunConfig(), name))
            g.add_argument(flag, type=kind, default=argparse.SUPPRESS, dest=name,
                           help=f"override '{name}'")


def _build_parser() -> _Parser:
    parser = _Parser(prog="dockverify",
                     description="verification toolkit for a neural docking controller")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text, parents=[], add_help=True)
        _add_config_flags(p)
        return p

    p = add("simulate", "closed-loop rollout from a start state")
    p.add_argument("--start", nargs=4, type=float, required=True,
                   metavar=("X", "Y", "VX", "VY"))
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--stop-at-goal", action="store_true")

    add("kinduct", "k-induction sweep over the domain grid")

    p = add("kinduct-empirical", "sampled check of the k-induction property")
    p.add_argument("--samples", type=int, default=10_000)

    add("gridreach", "calibrate, build the cell graph, report cycles/escapes")

    p = add("tube", "iterated forward reach tube from a start box")
    p.add_argument("--start-lo", nargs=4, type=float, required=True)
    p.add_argument("--start-hi", nargs=4, type=float, required=True)
    p.add_argument("--n-iter", type=int, default=50)
    p.add_argument("--bounded", action="store_true",
                   help="intersect the tube with the analysis domain")

    p = add("cert-train", "train a certificate on the toy task")
    p.add_argument("--value", help="where to save the value network")

    p = add("cert-verify", "gamma search plus the four conditions")
    p.add_argument("--value", help="value network file")

    p = add("cert-retrain", "counterexample-guided retraining")
    p.add_argument("--value", help="value network file")

    p = add("gamma", "verified lower bound of the value network")
    p.add_argument("--value", help="value network file")

    return parser


_RUNNERS = {
    "simulate": _run_simulate,
    "kinduct": _run_kinduct,
    "kinduct-empirical": _run_kinduct_empirical,
    "gridreach": _run_gridreach,
    "tube": _run_tube,
    "cert-train": _run_cert_train,
    "cert-verify": _run_cert_verify,
    "cert-retrain": _run_cert_retrain,
    "gamma": _run_gamma,
}

_RUN_KEYS = ("command", "config", "start", "steps", "stop_at_goal", "samples",
             "start_lo", "start_hi", "n_iter", "bounded", "value")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_usage(sys.stderr)
            return 3
        overrides = {k: v for k, v in vars(ns).items() if k not in _RUN_KEYS}
        cfg = parse_config(getattr(ns, "config", None), overrides)
        return _RUNNERS[ns.command](cfg, ns)
    except ConfigError as exc:
        print(f"dockverify: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
