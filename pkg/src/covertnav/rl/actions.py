"""Discrete (v_x, omega_z) action grid: 5 linear x 5 angular velocities."""

from __future__ import annotations

import numpy as np

V_MAX = 2.0
W_MAX = 1.5
LINEAR = np.linspace(0.0, V_MAX, 5)
ANGULAR = np.linspace(-W_MAX, W_MAX, 5)
N_ACTIONS = len(LINEAR) * len(ANGULAR)

# index = 5 * linear_index + angular_index
ACTIONS = np.array([(v, w) for v in LINEAR for w in ANGULAR])
STOP = int(np.flatnonzero((ACTIONS[:, 0] == 0.0) & (ACTIONS[:, 1] == 0.0))[0])


def decode(index: int) -> tuple[float, float]:
    if not 0 <= index < N_ACTIONS:
        raise IndexError(f"action index {index} out of range")
    v, w = ACTIONS[index]
    return float(v), float(w)


def encode(v: float, w: float) -> int:
    """Nearest grid action to a continuous command."""
    iv = int(np.argmin(np.abs(LINEAR - v)))
    iw = int(np.argmin(np.abs(ANGULAR - w)))
    return iv * len(ANGULAR) + iw
