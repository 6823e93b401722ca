"""Clohessy-Wiltshire relative motion dynamics for a thrusting deputy spacecraft.

State is the deputy's position and velocity in the chief's rotating (Hill)
frame.  Thrust is zero-order-hold over each step.  The module provides the
exact one-step closed-form transition, a classical Runge-Kutta reference
integrator for the underlying ODE, the affine decomposition of the step map,
and polar/Cartesian conversions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

__all__ = [
    "State",
    "Control",
    "DynParams",
    "PolarState",
    "step_closed_form",
    "step_ode_oracle",
    "affine_transition",
    "to_polar",
    "from_polar",
]


class State(NamedTuple):
    """Deputy state in the Hill frame: position (m) and velocity (m/s)."""

    x: float
    y: float
    vx: float
    vy: float


class Control(NamedTuple):
    """Thrust forces on the deputy, in newtons."""

    fx: float
    fy: float


class PolarState(NamedTuple):
    """Deputy state in polar form: radius, bearing and their rates."""

    r: float
    theta: float
    rdot: float
    thetadot: float


@dataclass(frozen=True)
class DynParams:
    """Physical parameters: deputy mass (kg), chief mean motion (rad/s),
    step duration (s)."""

    mass: float = 12.0
    mean_motion: float = 0.001027
    timestep: float = 1.0

    def __post_init__(self) -> None:
        for name in ("mass", "mean_motion", "timestep"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"DynParams.{name} must be finite and > 0, got {v!r}")


def _as_batch(arr: np.ndarray, width: int, name: str) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.shape[-1:] != (width,):
        raise ValueError(f"{name} must have trailing dimension {width}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


@lru_cache(maxsize=32)
def _transition_matrices(mass: float, mean_motion: float, timestep: float):
    """Exact discrete transition (A, B) with s' = A s + B u for fixed thrust."""
    n = mean_motion
    t = timestep
    c = math.cos(n * t)
    s = math.sin(n * t)
    # 1 - cos(nt) via the half-angle form; nt is tiny here and the direct
    # difference would lose most of its significant digits.
    omc = 2.0 * math.sin(0.5 * n * t) ** 2
    A = np.array(
        [
            [4.0 - 3.0 * c, 0.0, s / n, 2.0 * omc / n],
            [6.0 * (s - n * t), 1.0, -2.0 * omc / n, (4.0 * s - 3.0 * n * t) / n],
            [3.0 * n * s, 0.0, c, 2.0 * s],
            [-6.0 * n * omc, 0.0, -2.0 * s, 4.0 * c - 3.0],
        ]
    )
    m = mass
    B = np.array(
        [
            [omc / (m * n * n), 2.0 * t / (m * n) - 2.0 * s / (m * n * n)],
            [-2.0 * t / (m * n) + 2.0 * s / (m * n * n), 4.0 * omc / (m * n * n) - 3.0 * t * t / (2.0 * m)],
            [s / (m * n), 2.0 * omc / (m * n)],
            [-2.0 * omc / (m * n), 4.0 * s / (m * n) - 3.0 * t / m],
        ]
    )
    A.setflags(write=False)
    B.setflags(write=False)
    return A, B


def step_closed_form(state, control, params: DynParams = DynParams()) -> np.ndarray:
    """Advance the state by one step of duration ``params.timestep``.

    Accepts a single state of shape (4,) (control (2,)) or batches with
    matching leading dimensions; returns an array of the same shape as the
    state input.
    """
    s = _as_batch(state, 4, "state")
    u = _as_batch(control, 2, "control")
    A, B = _transition_matrices(params.mass, params.mean_motion, params.timestep)
    if s.ndim == 1 and u.ndim == 1:
        return A @ s + B @ u
    return s @ A.T + u @ B.T


def affine_transition(params: DynParams, f_max: float | None = None):
    """Return (A, B) with A s + B u == step_closed_form(s, u, params) bitwise.

    Columns are obtained by evaluating the step map on unit basis inputs,
    which reconstructs the internal matrices exactly.  ``f_max`` is accepted
    for call sites carrying a thrust bound; it is validated but does not
    enter the linear map.
    """
    if f_max is not None and not (math.isfinite(f_max) and f_max > 0):
        raise ValueError(f"f_max must be finite and > 0, got {f_max!r}")
    zero_s = np.zeros(4)
    zero_u = np.zeros(2)
    A = np.stack([step_closed_form(np.eye(4)[i], zero_u, params) for i in range(4)], axis=1)
    B = np.stack([step_closed_form(zero_s, np.eye(2)[j], params) for j in range(2)], axis=1)
    return A, B


def _ode_rhs(s: np.ndarray, u: np.ndarray, n: float, inv_mass: float) -> np.ndarray:
    d = np.empty_like(s)
    d[..., 0] = s[..., 2]
    d[..., 1] = s[..., 3]
    d[..., 2] = 2.0 * n * s[..., 3] + 3.0 * n * n * s[..., 0] + u[..., 0] * inv_mass
    d[..., 3] = -2.0 * n * s[..., 2] + u[..., 1] * inv_mass
    return d


def step_ode_oracle(state, control, params: DynParams = DynParams(), substeps: int = 1000) -> np.ndarray:
    """Integrate the continuous dynamics over one step with classical RK4.

    ``substeps`` fixed-size RK4 stages cover [0, timestep] with the control
    held constant.  Batched inputs are supported like step_closed_form.
    """
    if not isinstance(substeps, (int, np.integer)) or substeps < 1:
        raise ValueError(f"substeps must be a positive integer, got {substeps!r}")
    s = _as_batch(state, 4, "state").copy()
    u = _as_batch(control, 2, "control")
    if s.shape[:-1] != u.shape[:-1]:
        u = np.broadcast_to(u, s.shape[:-1] + (2,))
    n = params.mean_motion
    inv_mass = 1.0 / params.mass
    h = params.timestep / substeps
    for _ in range(substeps):
        k1 = _ode_rhs(s, u, n, inv_mass)
        k2 = _ode_rhs(s + 0.5 * h * k1, u, n, inv_mass)
        k3 = _ode_rhs(s + 0.5 * h * k2, u, n, inv_mass)
        k4 = _ode_rhs(s + h * k3, u, n, inv_mass)
        s = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return s


def to_polar(state) -> PolarState:
    """Convert a Cartesian state to polar form; undefined at the origin."""
    x, y, vx, vy = (float(v) for v in _as_batch(state, 4, "state"))
    r = math.hypot(x, y)
    if r == 0.0:
        raise ValueError("polar conversion is degenerate at the origin")
    theta = math.atan2(y, x)
    rdot = (x * vx + y * vy) / r
    thetadot = (x * vy - y * vx) / (r * r)
    return PolarState(r, theta, rdot, thetadot)


def from_polar(polar) -> State:
    """Invert to_polar: rebuild the Cartesian state from polar components."""
    r, theta, rdot, thetadot = (float(v) for v in np.asarray(polar, dtype=np.float64))
    if not np.all(np.isfinite([r, theta, rdot, thetadot])):
        raise ValueError("polar state contains non-finite values")
    if r < 0.0:
        raise ValueError(f"radius must be nonnegative, got {r!r}")
    c, s = math.cos(theta), math.sin(theta)
    x = r * c
    y = r * s
    vx = rdot * c - r * thetadot * s
    vy = rdot * s + r * thetadot * c
    return State(x, y, vx, vy)
