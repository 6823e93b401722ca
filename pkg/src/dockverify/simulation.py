"""Concrete closed-loop rollouts and the empirical checks built on them.

Everything here evaluates the real (discrete closed-form) dynamics on real
controller outputs: no relaxations, no graphs.  The formal layers are
cross-checked against these rollouts throughout the test suite.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import DynParams, from_polar, step_closed_form, to_polar
from .netgraph import Mlp, forward

__all__ = [
    "Trajectory",
    "SimulationError",
    "rollout",
    "exact_safety",
    "reward_distance",
    "compare_polar",
]

# Safety envelope: speed must stay below SAFE_BASE_SPEED plus a term growing
# with distance at twice the orbital mean motion.
SAFE_BASE_SPEED = 0.2

# Distance-decrease reward shaping: half-life 5 m for the slow term, 0.5 m
# for the sharp near-goal term.
REWARD_A1 = math.log(2.0) / 5.0
REWARD_A2 = math.log(2.0) / 0.5


class SimulationError(RuntimeError):
    """Rollout hit a non-finite state; carries the trajectory so far."""

    def __init__(self, message: str, partial: "Trajectory"):
        super().__init__(message)
        self.partial = partial


@dataclass
class Trajectory:
    """A closed-loop run: states (T+1, 4), controls (T, 2).

    controls_raw holds the controller output before thrust clamping;
    controls is what was applied.  reached_goal marks early stopping.
    """

    states: np.ndarray
    controls: np.ndarray
    controls_raw: np.ndarray
    reached_goal: bool = False
    params: DynParams = field(default_factory=DynParams)

    def __post_init__(self) -> None:
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.controls = np.asarray(self.controls, dtype=np.float64).reshape(-1, 2)
        self.controls_raw = np.asarray(self.controls_raw, dtype=np.float64).reshape(-1, 2)
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise ValueError(
                f"trajectory needs one more state than controls, got "
                f"{self.states.shape[0]} states, {self.controls.shape[0]} controls"
            )
        if self.controls.shape != self.controls_raw.shape:
            raise ValueError("clamped and raw control lists must align")

    def __len__(self) -> int:
        return self.controls.shape[0]

    def replay_error(self) -> float:
        """Worst absolute mismatch of the stored recurrence."""
        if len(self) == 0:
            return 0.0
        pred = step_closed_form(self.states[:-1], self.controls, self.params)
        return float(np.max(np.abs(pred - self.states[1:])))

    def manhattan_positions(self) -> np.ndarray:
        return np.abs(self.states[:, 0]) + np.abs(self.states[:, 1])

    def to_json(self) -> dict:
        return {
            "states": [[float(v) for v in s] for s in self.states],
            "controls": [[float(v) for v in u] for u in self.controls],
            "controls_raw": [[float(v) for v in u] for u in self.controls_raw],
            "reached_goal": self.reached_goal,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "vx", "vy", "fx", "fy"])
            for t, s in enumerate(self.states):
                u = self.controls[t] if t < len(self) else (math.nan, math.nan)
                w.writerow([t, *[f"{v:.17g}" for v in s], *[f"{v:.17g}" for v in u]])

    @classmethod
    def from_json(cls, data: dict, params: DynParams = DynParams()) -> "Trajectory":
        return cls(
            states=np.asarray(data["states"], dtype=np.float64),
            controls=np.asarray(data["controls"], dtype=np.float64),
            controls_raw=np.asarray(data["controls_raw"], dtype=np.float64),
            reached_goal=bool(data.get("reached_goal", False)),
            params=params,
        )


def _in_goal(state: np.ndarray, half_side: float) -> bool:
    return bool(abs(state[0]) <= half_side and abs(state[1]) <= half_side)


def rollout(
    net: Mlp,
    params: DynParams,
    s0,
    max_steps: int,
    stop_at_goal: bool = False,
    f_max: float = 1.0,
    goal_half_side: float = 0.35,
) -> Trajectory:
    """Simulate the clamped closed loop from s0 for up to max_steps."""
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")
    s = np.asarray(s0, dtype=np.float64).reshape(4)
    states = [s]
    controls: list[np.ndarray] = []
    raws: list[np.ndarray] = []
    goal_hit = stop_at_goal and _in_goal(s, goal_half_side)
    for _ in range(max_steps):
        if goal_hit:
            break
        raw = forward(net, s)
        u = np.clip(raw, -f_max, f_max)
        s = step_closed_form(s, u, params)
        if not np.all(np.isfinite(s)):
            partial = Trajectory(
                np.stack(states), np.array(controls).reshape(-1, 2),
                np.array(raws).reshape(-1, 2), False, params,
            )
            raise SimulationError("non-finite state during rollout", partial)
        states.append(s)
        controls.append(u)
        raws.append(raw)
        if stop_at_goal and _in_goal(s, goal_half_side):
            goal_hit = True
    return Trajectory(
        np.stack(states),
        np.array(controls).reshape(-1, 2),
        np.array(raws).reshape(-1, 2),
        goal_hit,
        params,
    )


def exact_safety(state, params: DynParams = DynParams()) -> bool:
    """Speed within the distance-scaled envelope, exact nonlinear arithmetic."""
    s = np.asarray(state, dtype=np.float64).reshape(4)
    speed = math.hypot(s[2], s[3])
    dist = math.hypot(s[0], s[1])
    return speed <= SAFE_BASE_SPEED + 2.0 * params.mean_motion * dist


def _manhattan(state) -> float:
    s = np.asarray(state, dtype=np.float64).reshape(-1)
    return abs(float(s[0])) + abs(float(s[1]))


def reward_distance(prev, cur) -> float:
    """Distance-shaped reward for one step: positive iff L1 distance dropped."""
    d_prev = _manhattan(prev)
    d_cur = _manhattan(cur)
    return 2.0 * (math.exp(-REWARD_A1 * d_cur) - math.exp(-REWARD_A1 * d_prev)) + 2.0 * (
        math.exp(-REWARD_A2 * d_cur) - math.exp(-REWARD_A2 * d_prev)
    )


@dataclass
class PolarComparison:
    cartesian: Trajectory
    polar: list[dynamics.PolarState]
    divergence: np.ndarray  # per-state L2 of round-trip mismatch

    @property
    def max_divergence(self) -> float:
        return float(np.max(self.divergence)) if self.divergence.size else 0.0


def compare_polar(net: Mlp, params: DynParams, s0, steps: int) -> PolarComparison:
    """Roll out in Cartesian coordinates, mirror through polar, and report
    the per-step round-trip divergence."""
    traj = rollout(net, params, s0, steps)
    polar = []
    div = np.zeros(traj.states.shape[0])
    for i, s in enumerate(traj.states):
        p = to_polar(s)
        polar.append(p)
        back = np.asarray(from_polar(p), dtype=np.float64)
        div[i] = float(np.linalg.norm(back - s))
    return PolarComparison(traj, polar, div)


def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        json.dump(traj.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trajectory(path, params: DynParams = DynParams()) -> Trajectory:
    with open(path) as fh:
        return Trajectory.from_json(json.load(fh), params)
