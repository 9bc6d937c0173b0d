"""Bias-phase drift processes for the Mach-Zehnder plant."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class DriftKind(enum.Enum):
    NONE = "NONE"
    SINE = "SINE"
    RANDOM_WALK = "RANDOM_WALK"
    COMPOSITE = "COMPOSITE"


@dataclass
class DriftProcess:
    """Phase drift ``phi_drift(t)`` in radians.

    The process is stateful: ``t`` is the current time and ``state`` the
    random-walk accumulator. Random increments come from a generator seeded
    with ``seed``, so a trajectory replays bit-identically for the same
    sequence of advance calls. Use :meth:`copy` to branch a process.
    """

    kind: DriftKind = DriftKind.NONE
    amplitude: float = 0.0
    period: float = 1.0
    walk_sigma: float = 0.0
    seed: int = 0
    state: float = 0.0
    t: float = 0.0
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.kind = DriftKind(self.kind)
        if self.kind in (DriftKind.SINE, DriftKind.COMPOSITE) and not self.period > 0:
            raise ValueError("drift period must be > 0")
        if self.walk_sigma < 0:
            raise ValueError("walk_sigma must be >= 0")
        self._rng = np.random.default_rng(self.seed)

    def copy(self) -> "DriftProcess":
        new = DriftProcess(self.kind, self.amplitude, self.period, self.walk_sigma, self.seed, self.state, self.t)
        new._rng.bit_generator.state = self._rng.bit_generator.state
        return new

    def _sine(self, t):
        if self.kind in (DriftKind.SINE, DriftKind.COMPOSITE):
            return self.amplitude * np.sin(2.0 * np.pi * np.asarray(t) / self.period)
        return np.zeros_like(np.asarray(t, dtype=float))

    @property
    def walks(self) -> bool:
        return self.kind in (DriftKind.RANDOM_WALK, DriftKind.COMPOSITE)

    def value(self) -> float:
        """Drift at the current time."""
        return float(self._sine(self.t)) + (self.state if self.walks else 0.0)

    def trajectory(self, n, dt) -> np.ndarray:
        """Drift at ``t, t + dt, ..., t + (n-1) dt``; leaves the process at ``t + n dt``."""
        if not dt > 0:
            raise ValueError("dt must be > 0")
        n = int(n)
        k = np.arange(n)
        out = self._sine(self.t + k * dt)
        if self.walks:
            steps = self.walk_sigma * math.sqrt(dt) * self._rng.standard_normal(n)
            walk = self.state + np.concatenate(([0.0], np.cumsum(steps[:-1])))
            out = out + walk
            self.state = float(self.state + np.sum(steps)) if n else self.state
        self.t = self.t + n * dt
        return out


def drift_advance(process: DriftProcess, dt) -> float:
    """Advance ``process`` by ``dt`` seconds and return the new drift phase."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if process.walks:
        process.state += process.walk_sigma * math.sqrt(dt) * float(process._rng.standard_normal())
    process.t += dt
    return process.value()
