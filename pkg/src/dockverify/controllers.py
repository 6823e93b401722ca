"""Controller construction and the shipped desk-scale controller.

The toolkit verifies controllers loaded from network files.  For a
self-contained benchmark it ships a 4-20-20-2 ReLU network realizing a
proportional-derivative law, thrust = -kp * position - kd * velocity,
through shifted ReLU pairs: z = (relu(z + C) - relu(C - z)) / 2 for a
constant C larger than any thrust the law can command on the verification
domains.  Every hidden unit then stays on the active side of its kink over
those domains, which keeps bound propagation exact for the closed loop.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .netgraph import Mlp, load_network, make_mlp

__all__ = [
    "build_pd_controller",
    "build_affine_controller",
    "build_constant_controller",
    "shipped_controller_path",
    "load_shipped_controller",
    "SHIPPED_KP",
    "SHIPPED_KD",
    "ACTIVE_SHIFT",
]

# Gains of the shipped controller.  Overdamped for the 12 kg deputy (damping
# ratio about 1.12 in the double-integrator limit), and weak enough that the
# commanded thrust stays inside the 1 N clamp on the whole desk domain
# (|x|,|y| <= 5 m, |v| <= 0.2 m/s gives |z| <= 0.84 N).
SHIPPED_KP = 0.08
SHIPPED_KD = 2.2

# Pre-activation shift keeping hidden units active: |z| never approaches
# this on any supported domain (paper-scale |x| <= 25, |v| <= 1.6 commands
# at most about 5.6 N).  A power of two, so the recombination loses at most
# a few ulps at that scale.
ACTIVE_SHIFT = 16.0


def _pd_gain_matrix(kp: float, kd: float) -> np.ndarray:
    return np.array(
        [
            [-kp, 0.0, -kd, 0.0],
            [0.0, -kp, 0.0, -kd],
        ]
    )


def build_pd_controller(
    kp: float = SHIPPED_KP,
    kd: float = SHIPPED_KD,
    hidden: int = 20,
    shift: float = ACTIVE_SHIFT,
) -> Mlp:
    """A ReLU network computing -kp*pos - kd*vel to within a few ulps.

    Each thrust coordinate z is carried as the pair relu(z + shift) and
    relu(shift - z); the output layer recombines them as half the
    difference, which equals z wherever |z| < shift.  Extra hidden units
    (up to ``hidden`` per layer) are zero-weighted padding.
    """
    if hidden < 4:
        raise ValueError(f"need at least 4 hidden units for the paired-ReLU split, got {hidden}")
    if shift <= 0:
        raise ValueError(f"shift must be positive, got {shift!r}")
    gains = _pd_gain_matrix(kp, kd)
    w1 = np.zeros((hidden, 4))
    w1[0:2] = gains
    w1[2:4] = -gains
    b1 = np.zeros(hidden)
    b1[0:4] = shift
    w2 = np.zeros((hidden, hidden))
    w2[0:4, 0:4] = np.eye(4)
    w3 = np.zeros((2, hidden))
    w3[0:2, 0:2] = 0.5 * np.eye(2)
    w3[0:2, 2:4] = -0.5 * np.eye(2)
    return make_mlp(
        [
            (w1, b1, "relu"),
            (w2, np.zeros(hidden), "relu"),
            (w3, np.zeros(2), "identity"),
        ]
    )


def build_affine_controller(gain: np.ndarray, bias: np.ndarray | None = None) -> Mlp:
    """A single identity layer: thrust = gain @ state + bias."""
    gain = np.asarray(gain, dtype=np.float64)
    b = np.zeros(gain.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    return make_mlp([(gain, b, "identity")])


def build_constant_controller(thrust, state_dim: int = 4) -> Mlp:
    """A controller ignoring the state and always emitting the given thrust."""
    t = np.asarray(thrust, dtype=np.float64)
    return make_mlp([(np.zeros((t.shape[0], state_dim)), t, "identity")])


def shipped_controller_path():
    """Filesystem path of the packaged desk-scale controller file."""
    return resources.files("dockverify").joinpath("data/controller_desk.json")


def load_shipped_controller() -> Mlp:
    with resources.as_file(shipped_controller_path()) as path:
        return load_network(path)
