import logging
import math
from dataclasses import dataclass

import numpy as np

from ..utils.errors import DivergenceError, InvalidArgumentError
from ..utils.ocp import ControlGradient, ShootingOps
from .base_solver import BaseSolver, SolveStatus, WarmStart

logger = logging.getLogger(__name__)


@dataclass
class AgdSettings:
    alpha: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 1000
    grad_tol: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise InvalidArgumentError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise InvalidArgumentError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidArgumentError(f"eps must be positive, got {self.eps}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.grad_tol >= 0:
            raise InvalidArgumentError(f"grad_tol must be nonnegative, got {self.grad_tol}")


@dataclass
class AdamState:
    """First/second moment sequences (T, nu) and the bias-correction counter"""
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def fresh(cls, horizon, nu):
        return cls(m=np.zeros((horizon, nu)), v=np.zeros((horizon, nu)), step_count=0)


class AgdSolver(BaseSolver):
    """Single-shooting gradient descent with ADAM steps and no line search.

    Each iteration evaluates one adjoint gradient, takes one ADAM step on
    the control sequence and rolls the new controls out once. The cost is
    never used to accept or reject a step.
    """

    name = "agd"

    @staticmethod
    def adam_update(state, g, settings):
        """One ADAM step: returns (control increment, new AdamState); elementwise only"""
        g = g.g if isinstance(g, ControlGradient) else np.asarray(g, dtype=float)
        if g.shape != state.m.shape or state.v.shape != state.m.shape:
            raise InvalidArgumentError(f"Gradient shape {g.shape} does not match ADAM state {state.m.shape}")

        step_count = state.step_count + 1
        m = settings.beta1 * state.m + (1.0 - settings.beta1) * g
        v = settings.beta2 * state.v + (1.0 - settings.beta2) * (g * g)
        m_hat = m / (1.0 - settings.beta1 ** step_count)
        v_hat = v / (1.0 - settings.beta2 ** step_count)
        delta = -settings.alpha * m_hat / (np.sqrt(v_hat) + settings.eps)
        return delta, AdamState(m=m, v=v, step_count=step_count)

    def step(self, ocp, traj, grad, adam):
        """ADAM step on the controls followed by one rollout; raises DivergenceError"""
        delta, next_adam = self.adam_update(adam, grad, self.settings)
        return ShootingOps.rollout(ocp, traj.us + delta), next_adam

    def fresh_start(self, ocp, us_init):
        return WarmStart(us=ocp.controls(us_init).copy(), adam=AdamState.fresh(ocp.horizon, ocp.nu))

    @staticmethod
    def _stamp_cost(ocp, traj):
        # the warm-start rollout skips the cost; it is paid only when no step follows
        if math.isnan(traj.cost):
            traj.cost = ShootingOps.total_cost(ocp, traj)
        return traj.cost

    def solve(self, ocp, us_init, adam_init=None):
        """Returns (SolveResult, AdamState) for warm-starting the next solve.

        Each iteration costs one gradient and one objective evaluation; its
        log entry holds the cost of the controls it produced.
        """
        settings = self.settings
        us = ocp.controls(us_init)
        adam = adam_init if adam_init is not None else AdamState.fresh(ocp.horizon, ocp.nu)
        if adam.m.shape != us.shape:
            raise InvalidArgumentError(f"ADAM state shape {adam.m.shape} does not match controls {us.shape}")

        log = []
        grad_norm = math.nan
        try:
            traj = ShootingOps.rollout(ocp, us, with_cost=False)
        except DivergenceError as e:
            logger.warning(f"⚠️ Initial guess diverged: {e}")
            return self._result(None, grad_norm, log, SolveStatus.DIVERGED), adam

        status = SolveStatus.MAX_ITERS
        for _ in range(settings.max_iters):
            started = self._clock()
            grad = ShootingOps.adjoint_gradient(ocp, traj, check_feasibility=False)
            grad_norm = grad.norm
            if not math.isfinite(grad_norm):
                self._record(log, self._stamp_cost(ocp, traj), grad_norm, started)
                status = SolveStatus.DIVERGED
                break
            if settings.grad_tol > 0 and grad_norm <= settings.grad_tol:
                self._record(log, self._stamp_cost(ocp, traj), grad_norm, started)
                status = SolveStatus.TOLERANCE_REACHED
                break

            try:
                next_traj, next_adam = self.step(ocp, traj, grad, adam)
            except DivergenceError as e:
                logger.debug(f"Rollout after ADAM step diverged: {e}")
                self._record(log, math.inf, grad_norm, started)
                self._stamp_cost(ocp, traj)
                status = SolveStatus.DIVERGED
                break
            traj, adam = next_traj, next_adam
            self._record(log, traj.cost, grad_norm, started)

        return self._result(traj, grad_norm, log, status), adam

    def solve_warm(self, ocp, warm):
        result, adam = self.solve(ocp, warm.us, warm.adam)
        us = result.traj.us if result.traj is not None else warm.us
        return result, WarmStart(us=us, adam=adam)
