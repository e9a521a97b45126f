import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .cost import CostFunctions, CostWeights, ReferenceSpec
from .dynamics import ModelSpec, RobotDynamics, as_vector
from .errors import DivergenceError, InvalidArgumentError
from .instrumentation import COUNTERS

logger = logging.getLogger(__name__)

# Largest dynamics residual accepted by adjoint_gradient
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class OcpDef:
    """Single-shooting optimal control problem from a fixed initial state.

    Running term k is evaluated at base_time + k·dt when preview is on,
    and at base_time for the whole horizon when it is off.
    """
    model: ModelSpec
    weights: CostWeights
    refs: ReferenceSpec
    horizon: int
    dt: float
    x0: np.ndarray
    base_time: float = 0.0
    preview: bool = True

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidArgumentError(f"horizon must be a positive integer, got {self.horizon}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        CostFunctions.check_dimensions(self.weights, self.refs, self.model)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "x0", as_vector("x0", self.x0, self.model.nx))

    @property
    def nx(self):
        return self.model.nx

    @property
    def nu(self):
        return self.model.nu

    @property
    def times(self):
        if not self.preview:
            return np.full(self.horizon, self.base_time)
        return self.base_time + self.dt * np.arange(self.horizon)

    @property
    def t_final(self):
        return self.base_time + self.dt * self.horizon if self.preview else self.base_time

    def with_initial_state(self, x0, base_time):
        return replace(self, x0=x0, base_time=base_time)

    def controls(self, us):
        """Validate a control sequence against this problem and return it as a (T, nu) array"""
        us = np.asarray(us, dtype=float)
        if us.ndim == 1 and self.nu == 1:
            us = us.reshape(-1, 1)
        if us.shape != (self.horizon, self.nu):
            raise InvalidArgumentError(f"Control sequence must have shape ({self.horizon}, {self.nu}), got {us.shape}")
        return us


@dataclass
class Trajectory:
    xs: np.ndarray
    us: np.ndarray
    cost: float = math.nan


@dataclass
class CostateSequence:
    lambdas: np.ndarray


@dataclass
class ControlGradient:
    g: np.ndarray
    norm: float


class ShootingOps:
    """Nonlinear rollout and first-order adjoint gradient shared by both solvers"""

    @staticmethod
    def rollout(ocp, us, with_cost=True):
        """Forward pass: integrate the dynamics from x0 and stamp the total cost.

        with_cost=False leaves the cost at NaN without an objective evaluation.
        """
        us = ocp.controls(us)
        xs = RobotDynamics.simulate(ocp.model, ocp.x0, us, ocp.dt)
        finite = np.all(np.isfinite(xs), axis=1)
        if not finite.all():
            step = int(np.argmin(finite))
            logger.debug(f"Non-finite state after step {step} of {ocp.horizon}")
            raise DivergenceError(f"Rollout produced a non-finite state at step {step}", step_index=step)
        traj = Trajectory(xs=xs, us=us.copy())
        if not with_cost:
            return traj
        traj.cost = ShootingOps.total_cost(ocp, traj)
        if not math.isfinite(traj.cost):
            raise DivergenceError("Rollout produced a non-finite cost", step_index=ocp.horizon)
        return traj

    @staticmethod
    def _check_shapes(ocp, traj):
        if traj.xs.shape != (ocp.horizon + 1, ocp.nx) or traj.us.shape != (ocp.horizon, ocp.nu):
            raise InvalidArgumentError(
                f"Trajectory shapes {traj.xs.shape}/{traj.us.shape} do not match horizon {ocp.horizon} "
                f"with nx={ocp.nx}, nu={ocp.nu}")

    @staticmethod
    def total_cost(ocp, traj):
        """Sum of running costs plus the terminal cost"""
        ShootingOps._check_shapes(ocp, traj)
        COUNTERS.objective_evals += 1
        running = CostFunctions.stage_cost_batch(
            ocp.weights, ocp.refs, ocp.model, ocp.times, traj.xs[:-1], traj.us)
        terminal = CostFunctions.terminal_cost_batch(
            ocp.weights, ocp.refs, ocp.model, ocp.t_final, traj.xs[-1])
        return float(np.sum(running) + terminal)

    @staticmethod
    def feasibility_residual(ocp, traj):
        """Max-abs violation of x[t+1] = step(x[t], u[t]) and x[0] = x0"""
        ShootingOps._check_shapes(ocp, traj)
        stepped = RobotDynamics.step_batch(ocp.model, traj.xs[:-1], traj.us, ocp.dt)
        return float(max(np.max(np.abs(stepped - traj.xs[1:])), np.max(np.abs(traj.xs[0] - ocp.x0))))

    @staticmethod
    def adjoint_gradient(ocp, traj, return_costates=False, check_feasibility=True):
        """Backward pass of costates giving dJ/dU with matrix-vector products only.

        Solvers pass check_feasibility=False for trajectories they produced with rollout,
        which skips the extra dynamics pass of the residual check.
        """
        if check_feasibility:
            residual = ShootingOps.feasibility_residual(ocp, traj)
            if not residual <= FEASIBILITY_TOL:
                raise InvalidArgumentError(f"Trajectory is not dynamically feasible (residual {residual:.3e})")
        else:
            ShootingOps._check_shapes(ocp, traj)
        COUNTERS.gradient_evals += 1

        model, weights, refs = ocp.model, ocp.weights, ocp.refs
        a_mats, b_mats = RobotDynamics.jacobians_batch(model, traj.xs[:-1], traj.us, ocp.dt)
        lx, lu = CostFunctions.gradients_batch(weights, refs, model, ocp.times, traj.xs[:-1], traj.us)
        lam_final, _ = CostFunctions.gradients_batch(weights, refs, model, ocp.t_final, traj.xs[-1], terminal=True)

        grad = np.empty_like(traj.us)
        lambdas = np.empty_like(traj.xs) if return_costates else None
        lam = lam_final
        if return_costates:
            lambdas[-1] = lam
        for t in range(ocp.horizon - 1, -1, -1):
            grad[t] = lu[t] + b_mats[t].T @ lam
            lam = lx[t] + a_mats[t].T @ lam
            if return_costates:
                lambdas[t] = lam

        result = ControlGradient(g=grad, norm=float(np.max(np.abs(grad))))
        if return_costates:
            return result, CostateSequence(lambdas=lambdas)
        return result

    @staticmethod
    def rollout_batch(ocp, us_batch):
        """Total costs of a batch of control sequences (B, T, nu) -> (B,); used by finite-difference checks"""
        us_batch = np.asarray(us_batch, dtype=float)
        batch = us_batch.shape[0]
        xs = np.empty((batch, ocp.horizon + 1, ocp.nx))
        xs[:, 0] = ocp.x0
        for t in range(ocp.horizon):
            xs[:, t + 1] = RobotDynamics.step_batch(ocp.model, xs[:, t], us_batch[:, t], ocp.dt)
        running = CostFunctions.stage_cost_batch(
            ocp.weights, ocp.refs, ocp.model, ocp.times, xs[:, :-1], us_batch)
        terminal = CostFunctions.terminal_cost_batch(
            ocp.weights, ocp.refs, ocp.model, ocp.t_final, xs[:, -1])
        return np.sum(running, axis=-1) + terminal
