import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, List, Optional

import numpy as np

from ..utils.ocp import Trajectory

logger = logging.getLogger(__name__)


class SolveStatus(str, Enum):
    MAX_ITERS = "max_iters"
    TOLERANCE_REACHED = "tolerance_reached"
    DIVERGED = "diverged"


@dataclass
class IterationRecord:
    cost: float
    grad_norm: float
    wall_time: float


@dataclass
class SolveResult:
    """Outcome shared by both solvers.

    traj is the last feasible iterate; it is None only when the initial
    guess itself could not be rolled out.
    """
    traj: Optional[Trajectory]
    final_cost: float
    grad_norm: float
    iterations_run: int
    status: SolveStatus
    per_iter_log: List[IterationRecord] = field(default_factory=list)

    @property
    def diverged(self):
        return self.status is SolveStatus.DIVERGED


@dataclass
class WarmStart:
    """Solver memory carried between MPC cycles: controls, plus ADAM moments for AGD"""
    us: np.ndarray
    adam: Optional[Any] = None


class BaseSolver:
    """Base class for both solvers: settings handling, timing and result assembly"""

    name = "base"

    def __init__(self, settings):
        self.settings = settings

    def with_budget(self, max_iters, grad_tol=0.0):
        """Same solver with a fixed iteration budget (MPC mode)"""
        return type(self)(replace(self.settings, max_iters=max_iters, grad_tol=grad_tol))

    def fresh_start(self, ocp, us_init):
        """Start from us_init with fresh solver memory"""
        return WarmStart(us=ocp.controls(us_init).copy())

    def solve_warm(self, ocp, warm):
        """Run the solver from a warm start; returns (SolveResult, WarmStart for the next solve)"""
        raise NotImplementedError

    @staticmethod
    def _clock():
        return time.perf_counter()

    def _record(self, log, cost, grad_norm, started):
        record = IterationRecord(cost=float(cost), grad_norm=float(grad_norm),
                                 wall_time=self._clock() - started)
        log.append(record)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"🔁 {self.name} iter {len(log)}: cost={record.cost:.6e} "
                         f"grad={record.grad_norm:.3e} ({record.wall_time * 1e3:.3f} ms)")

    def _result(self, traj, grad_norm, log, status):
        final_cost = traj.cost if traj is not None else float("inf")
        result = SolveResult(traj=traj, final_cost=final_cost, grad_norm=float(grad_norm),
                             iterations_run=len(log), status=status, per_iter_log=log)
        if status is SolveStatus.DIVERGED:
            logger.warning(f"⚠️ {self.name} diverged after {len(log)} iterations")
        else:
            logger.debug(f"✅ {self.name} finished: {status.value}, {len(log)} iterations, "
                         f"cost={final_cost:.6e}, grad={grad_norm:.3e}")
        return result
