import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..utils.cost import CostFunctions
from ..utils.dynamics import RobotDynamics
from ..utils.errors import DivergenceError, InvalidArgumentError
from ..utils.instrumentation import COUNTERS
from ..utils.ocp import ShootingOps, Trajectory
from .base_solver import BaseSolver, SolveStatus, WarmStart

logger = logging.getLogger(__name__)

# Expected decrease below this fraction of the cost is treated as a stationary point
STATIONARY_RTOL = 1e-14
# First nonzero regularisation when mu is raised from zero
MU_FLOOR = 1e-9


def default_alphas():
    return tuple(2.0 ** -i for i in range(11))


@dataclass
class DdpSettings:
    mu_init: float = 1e-6
    mu_min: float = 1e-9
    mu_max: float = 1e6
    mu_factor: float = 10.0
    alphas: Tuple[float, ...] = field(default_factory=default_alphas)
    armijo_c: float = 1e-4
    max_iters: int = 100
    grad_tol: float = 1e-9

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if not 0.0 <= self.mu_min <= self.mu_init <= self.mu_max:
            raise InvalidArgumentError("Regularisation must satisfy 0 <= mu_min <= mu_init <= mu_max")
        if not self.mu_factor > 1.0:
            raise InvalidArgumentError(f"mu_factor must exceed 1, got {self.mu_factor}")
        if not self.alphas or any(not 0.0 < a <= 1.0 for a in self.alphas):
            raise InvalidArgumentError("alphas must lie in (0, 1]")
        if any(a <= b for a, b in zip(self.alphas, self.alphas[1:])):
            raise InvalidArgumentError("alphas must be strictly decreasing")
        if not 0.0 < self.armijo_c < 1.0:
            raise InvalidArgumentError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.grad_tol >= 0:
            raise InvalidArgumentError(f"grad_tol must be nonnegative, got {self.grad_tol}")


@dataclass
class BackwardPassGains:
    """Feedforward k (T, nu), feedback K (T, nu, nx) and the expected decrease coefficients.

    The model predicts J(alpha) - J(0) = alpha·dV1 + alpha²·dV2; vx and vxx
    hold the value function at the first stage.
    """
    k: np.ndarray
    K: np.ndarray
    dV1: float
    dV2: float
    qu_norm: float
    vx: Optional[np.ndarray] = None
    vxx: Optional[np.ndarray] = None

    def expected_decrease(self, alpha):
        return -(alpha * self.dV1 + alpha * alpha * self.dV2)


class DdpSolver(BaseSolver):
    """iLQR-style DDP: Gauss-Newton Riccati sweep, Levenberg-Marquardt mu on Quu, backtracking Armijo search"""

    name = "ddp"

    @staticmethod
    def backward_pass(ocp, traj, mu):
        """Riccati sweep around traj; returns None when a regularised Quu is not positive definite"""
        COUNTERS.backward_passes += 1
        model, weights, refs = ocp.model, ocp.weights, ocp.refs
        xs, us = traj.xs, traj.us
        a_mats, b_mats = RobotDynamics.jacobians_batch(model, xs[:-1], us, ocp.dt)
        lx, lu = CostFunctions.gradients_batch(weights, refs, model, ocp.times, xs[:-1], us)
        lxx, luu = CostFunctions.cost_gn_hessians(weights, refs, model, ocp.times, xs[:-1])
        vx, _ = CostFunctions.gradients_batch(weights, refs, model, ocp.t_final, xs[-1], terminal=True)
        vxx, _ = CostFunctions.cost_gn_hessians(weights, refs, model, ocp.t_final, xs[-1], terminal=True)

        horizon, nu, nx = ocp.horizon, ocp.nu, ocp.nx
        k = np.empty((horizon, nu))
        K = np.empty((horizon, nu, nx))
        reg = mu * np.eye(nu)
        dv1 = 0.0
        dv2 = 0.0
        qu_norm = 0.0
        for t in range(horizon - 1, -1, -1):
            a, b = a_mats[t], b_mats[t]
            vxx_a = vxx @ a
            qx = lx[t] + a.T @ vx
            qu = lu[t] + b.T @ vx
            qxx = lxx[t] + a.T @ vxx_a
            qux = b.T @ vxx_a
            quu = luu + b.T @ vxx @ b
            try:
                factor = cho_factor(quu + reg)
            except (LinAlgError, ValueError):
                logger.debug(f"Quu not positive definite at t={t} with mu={mu:.1e}")
                return None

            gains = -cho_solve(factor, np.column_stack([qu, qux]))
            kt, Kt = gains[:, 0], gains[:, 1:]
            quu_k = quu @ kt
            vx = qx + Kt.T @ quu_k + Kt.T @ qu + qux.T @ kt
            vxx = qxx + Kt.T @ quu @ Kt + Kt.T @ qux + qux.T @ Kt
            vxx = 0.5 * (vxx + vxx.T)

            k[t] = kt
            K[t] = Kt
            dv1 += float(kt @ qu)
            dv2 += 0.5 * float(kt @ quu_k)
            qu_norm = max(qu_norm, float(np.max(np.abs(qu))))

        return BackwardPassGains(k=k, K=K, dV1=dv1, dV2=dv2, qu_norm=qu_norm, vx=vx, vxx=vxx)

    @staticmethod
    def forward_pass(ocp, traj, gains, alpha):
        """Nonlinear rollout of u = u_bar + alpha·k + K·(x - x_bar); returns None on divergence"""
        if not 0.0 <= alpha <= 1.0:
            raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
        xs = np.empty_like(traj.xs)
        us = np.empty_like(traj.us)
        xs[0] = ocp.x0
        for t in range(ocp.horizon):
            us[t] = traj.us[t] + alpha * gains.k[t] + gains.K[t] @ (xs[t] - traj.xs[t])
            xs[t + 1] = RobotDynamics.step_batch(ocp.model, xs[t], us[t], ocp.dt)
            if not (np.all(np.isfinite(xs[t + 1])) and np.all(np.isfinite(us[t]))):
                return None
        candidate = Trajectory(xs=xs, us=us)
        candidate.cost = ShootingOps.total_cost(ocp, candidate)
        if not math.isfinite(candidate.cost):
            return None
        return candidate

    def _raise_mu(self, mu):
        settings = self.settings
        return mu * settings.mu_factor if mu > 0 else max(settings.mu_min, MU_FLOOR)

    def _lower_mu(self, mu):
        return max(mu / self.settings.mu_factor, self.settings.mu_min)

    def iterate(self, ocp, traj, mu):
        """Produce one accepted step; returns (outcome, traj, gains, mu)"""
        settings = self.settings
        while True:
            gains = self.backward_pass(ocp, traj, mu)
            if gains is None:
                mu = self._raise_mu(mu)
                if mu > settings.mu_max:
                    return SolveStatus.DIVERGED, traj, None, mu
                continue

            if settings.grad_tol > 0 and gains.qu_norm <= settings.grad_tol:
                return SolveStatus.TOLERANCE_REACHED, traj, gains, mu
            if -gains.dV1 <= STATIONARY_RTOL * max(1.0, abs(traj.cost)):
                return None, traj, gains, self._lower_mu(mu)

            for alpha in settings.alphas:
                candidate = self.forward_pass(ocp, traj, gains, alpha)
                if candidate is None:
                    continue
                if traj.cost - candidate.cost >= settings.armijo_c * alpha * (-gains.dV1):
                    return None, candidate, gains, self._lower_mu(mu)

            mu = self._raise_mu(mu)
            logger.debug(f"Line search exhausted, raising mu to {mu:.1e}")
            if mu > settings.mu_max:
                return SolveStatus.DIVERGED, traj, gains, mu

    def solve(self, ocp, us_init):
        """Iterate until max_iters accepted steps, ||Qu||_max <= grad_tol, or mu exceeds mu_max"""
        settings = self.settings
        log = []
        grad_norm = math.nan
        try:
            traj = ShootingOps.rollout(ocp, ocp.controls(us_init))
        except DivergenceError as e:
            logger.warning(f"⚠️ Initial guess diverged: {e}")
            return self._result(None, grad_norm, log, SolveStatus.DIVERGED)

        mu = settings.mu_init
        status = SolveStatus.MAX_ITERS
        for _ in range(settings.max_iters):
            started = self._clock()
            outcome, next_traj, gains, mu = self.iterate(ocp, traj, mu)
            if gains is not None:
                grad_norm = gains.qu_norm
            if outcome is not None:
                status = outcome
                break
            self._record(log, traj.cost, grad_norm, started)
            if next_traj is traj:
                # null step at a stationary point
                logger.debug(f"Stationary point after {len(log)} iterations")
                status = SolveStatus.TOLERANCE_REACHED
                break
            traj = next_traj

        return self._result(traj, grad_norm, log, status)

    def solve_warm(self, ocp, warm):
        result = self.solve(ocp, warm.us)
        us = result.traj.us if result.traj is not None else warm.us
        return result, WarmStart(us=us)
