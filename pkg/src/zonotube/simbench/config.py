from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import rosbot

PRIOR_MODES = ("data_only", "data_prior", "exact", "none")
CONTROLLERS = ("elastic", "tzpc")


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop scenario on the mobile robot."""

    T: int = 20
    alpha: float = 0.7
    prior: str = "data_prior"
    controller: str = "elastic"
    seed: int = 0
    ts: float = 1.0
    sigma: float = 1.0
    steps: int = 60
    horizon: int = 10
    Q_scale: float = 20.0
    R_scale: float = 0.1
    x0: tuple = tuple(rosbot.X0)
    target_state: tuple = tuple(rosbot.TARGET)
    # data experiment: fraction of the input box, start pose (None = x0)
    excitation: float = 1.0
    data_start: tuple | None = None
    offline_excitation: float = 1.0
    # run-time disturbances off while identification still uses alpha
    disturbance_free: bool = False
    # initial error x0 - xbar(0|0); must lie in the admissible set
    initial_offset: tuple | None = None
    terminal_recompute_ratio: float = 0.5
    # keep the tube at least this multiple of the smallest scale that stays
    # invariant for the planned nominal pairs (0 disables the floor)
    tube_floor: float = 1.25
    bootstrap_iters: int = 4

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.prior not in PRIOR_MODES:
            raise ValueError(f"prior must be one of {PRIOR_MODES}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.T < 8:
            raise ValueError("T must be at least n+m+1 = 8")
        if self.tube_floor < 0:
            raise ValueError("tube_floor must be nonnegative")
        if self.steps < 0 or self.horizon < 1:
            raise ValueError("steps must be >= 0 and horizon >= 1")

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    def rng_streams(self):
        """Independent generators: online batch, offline prior batch, run disturbances."""
        ss = np.random.SeedSequence(self.seed)
        return [np.random.default_rng(s) for s in ss.spawn(3)]
