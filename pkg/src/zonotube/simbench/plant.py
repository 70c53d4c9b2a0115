from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..setops import Polytope, Zonotope, interval_enclosure


@dataclass(eq=False)
class Plant:
    """True linear plant with zonotopic additive disturbance."""

    A_true: np.ndarray
    B_true: np.ndarray
    Zw_true: Zonotope
    state: np.ndarray
    U: Polytope

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float).copy()
        box = interval_enclosure(self.U)
        self.u_lower, self.u_upper = box.lower, box.upper

    def sample_disturbance(self, rng) -> np.ndarray:
        return self.Zw_true.c + self.Zw_true.G @ rng.uniform(-1.0, 1.0, self.Zw_true.n_gen)

    def step(self, u, w) -> np.ndarray:
        self.state = self.A_true @ self.state + self.B_true @ np.asarray(u, dtype=float) + w
        return self.state
