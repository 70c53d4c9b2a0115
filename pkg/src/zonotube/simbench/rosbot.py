"""Mecanum-wheel mobile robot (planar pose, four wheel speeds)."""

from __future__ import annotations

import numpy as np

from ..setops import Polytope, Zonotope

WHEEL_RADIUS = 0.05
L_A = 0.13484
L_B = 0.085
L_AB = L_A + L_B

# disturbance generators before the noise scaling factor
G_H = np.array([[0.05, 0.08], [0.01, 0.06], [0.03, -0.01]])
# disturbance model of the offline batch that produces the prior
OFFLINE_CENTER = np.array([1.0, -1.0, 0.0])
OFFLINE_G = np.array([[0.03, -0.01], [-0.04, 0.05], [-0.01, 0.0]])
OFFLINE_T = 17

STATE_BOUND = np.array([4.0, 4.0, np.pi / 2])
WHEEL_BOUND = 100.0

X0 = np.array([4.0, 4.0, np.pi / 2])
TARGET = np.array([-3.5, -3.5, -np.pi / 4])


def rosbot_model(ts: float):
    """Discrete kinematics ``x+ = A x + B omega`` for sampling time ``ts``."""
    if ts <= 0:
        raise ValueError("sampling time must be positive")
    pattern = np.array([
        [L_AB, L_AB, L_AB, L_AB],
        [L_AB, -L_AB, L_AB, -L_AB],
        [1.0, -1.0, -1.0, 1.0],
    ])
    return np.eye(3), WHEEL_RADIUS * ts / (4 * L_AB) * pattern


def state_set() -> Polytope:
    return Polytope.box(-STATE_BOUND, STATE_BOUND)


def input_set() -> Polytope:
    return Polytope.box(-WHEEL_BOUND * np.ones(4), WHEEL_BOUND * np.ones(4))


def disturbance(alpha: float) -> Zonotope:
    return Zonotope(np.zeros(3), alpha * G_H)


def offline_disturbance() -> Zonotope:
    return Zonotope(OFFLINE_CENTER, OFFLINE_G)
