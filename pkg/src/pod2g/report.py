from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field


@dataclass
class SolveReport:
    """Outcome of one iterative solve.

    ``residual_history[k]`` is the relative residual ``|f - K u| / |f|`` after
    ``k`` iterations (entry 0 is the initial guess); ``elapsed[k]`` is the wall
    time in seconds at which that residual was available, measured from the
    start of the solve (setup excluded, see ``setup_time``).
    """

    converged: bool
    iterations: int
    residual_history: list[float]
    wall_time: float
    elapsed: list[float] = field(default_factory=list)
    setup_time: float = 0.0
    solver: str = ""

    def __post_init__(self):
        if not self.residual_history:
            raise ValueError("residual_history must be non-empty")

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]

    def iterations_to(self, tol: float) -> int | None:
        """First iteration count whose relative residual is <= tol, or None."""
        for k, r in enumerate(self.residual_history):
            if r <= tol:
                return k
        return None

    def time_to(self, tol: float) -> float | None:
        k = self.iterations_to(tol)
        if k is None:
            return None
        t = self.elapsed[k] if k < len(self.elapsed) else self.wall_time
        return self.setup_time + t

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class History:
    """Accumulates relative residuals and timestamps during a solve."""

    def __init__(self, fnorm: float):
        self.fnorm = fnorm if fnorm > 0 else 1.0
        self.res: list[float] = []
        self.t: list[float] = []
        self._t0 = time.perf_counter()

    def push(self, rnorm: float) -> float:
        rel = rnorm / self.fnorm
        if not math.isfinite(rel):
            raise FloatingPointError("residual became non-finite")
        self.res.append(rel)
        self.t.append(time.perf_counter() - self._t0)
        return rel

    def report(self, converged: bool, solver: str = "", setup_time: float = 0.0) -> SolveReport:
        return SolveReport(
            converged=converged,
            iterations=len(self.res) - 1,
            residual_history=self.res,
            wall_time=self.t[-1],
            elapsed=self.t,
            setup_time=setup_time,
            solver=solver,
        )
