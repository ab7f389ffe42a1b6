"""Result record shared by every solver."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TracePoint:
    iteration: int
    t_seconds: float
    energy: float
    best_energy: float
    loss: float | None = None


@dataclass(eq=False)
class SolveReport:
    """Best assignment found plus the per-iteration trajectory.

    ``reason`` is one of ``converged``, ``max_iters``, ``time_limit`` or
    ``exact``.
    """

    solver: str
    assignment: np.ndarray
    energy: float
    reason: str
    seed: int | None = None
    trial: int = 0
    loss: float | None = None
    iterations: int = 0
    trace: list[TracePoint] = field(default_factory=list)
    elapsed: float = 0.0

    def best_energies(self):
        return np.array([p.best_energy for p in self.trace])


class BestTracker:
    """Keeps the best decoded assignment seen so far and records the trace."""

    def __init__(self):
        self.x = None
        self.energy = float("inf")
        self.trace = []

    def observe(self, iteration, t, x, e, loss=None):
        if e < self.energy:
            self.x = np.array(x, dtype=np.int64)
            self.energy = e
        self.trace.append(TracePoint(iteration, t, e, self.energy, loss))
