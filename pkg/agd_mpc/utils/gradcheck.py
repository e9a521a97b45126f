import contextlib
import logging
from dataclasses import dataclass
from unittest import mock

import numpy as np

from .cost import CostFunctions, CostWeights, EeMode, ReferenceSpec
from .dynamics import RobotDynamics
from .ocp import OcpDef, ShootingOps

logger = logging.getLogger(__name__)

CHECKS = ("dynamics_jacobians", "cost_derivatives", "adjoint_gradient")
# Central-difference step of the reference derivatives; differs from the model's own FD step
CHECK_STEP = 1e-5
CHECK_DT = 0.01


@dataclass
class CheckResult:
    model: str
    check: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance

    def line(self):
        flag = "ok" if self.passed else "FAIL"
        return f"{self.model:<18} {self.check:<20} max_rel_err={self.max_rel_error:.3e} [{flag}]"


def relative_error(actual, expected):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    return float(np.max(np.abs(actual - expected)) / max(float(np.max(np.abs(expected))), 1e-8))


@contextlib.contextmanager
def corrupted_jacobians(scale=1.01):
    """Negative control: every B returned by jacobians_batch is scaled"""
    original = RobotDynamics.jacobians_batch

    def corrupted(model, xs, us, dt):
        a, b = original(model, xs, us, dt)
        return a, b * scale

    with mock.patch.object(RobotDynamics, "jacobians_batch", new=staticmethod(corrupted)):
        yield


class GradientChecker:
    """Finite-difference suites for the dynamics Jacobians, cost derivatives and the adjoint gradient"""

    @staticmethod
    def random_problem(model, rng, horizon):
        """Seeded OCP instance with random weights, references, x0 and controls"""
        nx, nu = model.nx, model.nu
        weights = CostWeights(q_diag=rng.uniform(0.1, 1.0, nx), r_diag=rng.uniform(0.01, 0.1, nu),
                              w_ee=10.0 if model.has_end_effector else 0.0,
                              terminal_scale=rng.uniform(1.0, 5.0), qf_diag=rng.uniform(0.1, 1.0, nx))
        refs = ReferenceSpec(
            x_ref=rng.uniform(-0.5, 0.5, nx), u_ref=rng.uniform(-0.5, 0.5, nu),
            ee_mode=EeMode.CIRCLE if model.has_end_effector else EeMode.OFF,
            circle_center=rng.uniform(0.2, 0.5, 2), circle_radius=rng.uniform(0.05, 0.15),
            circle_omega=rng.uniform(1.0, 4.0), circle_phase=rng.uniform(0.0, 2 * np.pi))
        if model.n_dof is None:
            x0 = rng.uniform(-1.0, 1.0, nx)
        else:
            x0 = np.concatenate([rng.uniform(-1.0, 1.0, model.n_dof), rng.uniform(-0.5, 0.5, model.n_dof)])
        ocp = OcpDef(model=model, weights=weights, refs=refs, horizon=horizon, dt=CHECK_DT,
                     x0=x0, base_time=rng.uniform(0.0, 1.0))
        us = rng.normal(0.0, 0.5, (horizon, nu))
        return ocp, us

    @staticmethod
    def check_dynamics_jacobians(model, rng, instances, horizon, h=CHECK_STEP):
        worst = 0.0
        for _ in range(instances):
            ocp, us = GradientChecker.random_problem(model, rng, horizon)
            traj = ShootingOps.rollout(ocp, us)
            xs, us = traj.xs[:-1], traj.us
            a, b = RobotDynamics.jacobians_batch(model, xs, us, ocp.dt)

            nx = model.nx
            z = np.concatenate([xs, us], axis=-1)
            offsets = np.eye(z.shape[-1]) * h
            plus = z[:, None, :] + offsets
            minus = z[:, None, :] - offsets
            diff = (RobotDynamics.step_batch(model, plus[..., :nx], plus[..., nx:], ocp.dt)
                    - RobotDynamics.step_batch(model, minus[..., :nx], minus[..., nx:], ocp.dt)) / (2.0 * h)
            reference = np.swapaxes(diff, -1, -2)
            worst = max(worst, relative_error(np.concatenate([a, b], axis=-1), reference))
        return worst

    @staticmethod
    def check_cost_derivatives(model, rng, instances, horizon, h=CHECK_STEP):
        worst = 0.0
        for _ in range(instances):
            ocp, us = GradientChecker.random_problem(model, rng, horizon)
            traj = ShootingOps.rollout(ocp, us)
            weights, refs = ocp.weights, ocp.refs
            xs, times = traj.xs[:-1], ocp.times

            lx, lu = CostFunctions.gradients_batch(weights, refs, model, times, xs, traj.us)
            nx = model.nx
            z = np.concatenate([xs, traj.us], axis=-1)
            offsets = np.eye(z.shape[-1]) * h
            plus = z[:, None, :] + offsets
            minus = z[:, None, :] - offsets

            def stage(p):
                return CostFunctions.stage_cost_batch(weights, refs, model, times[:, None], p[..., :nx], p[..., nx:])

            reference = (stage(plus) - stage(minus)) / (2.0 * h)
            worst = max(worst, relative_error(np.concatenate([lx, lu], axis=-1), reference))

            x_final = traj.xs[-1]
            lx_final, _ = CostFunctions.gradients_batch(weights, refs, model, ocp.t_final, x_final, terminal=True)
            state_offsets = np.eye(nx) * h

            def terminal(p):
                return CostFunctions.terminal_cost_batch(weights, refs, model, ocp.t_final, p)

            reference = (terminal(x_final + state_offsets) - terminal(x_final - state_offsets)) / (2.0 * h)
            worst = max(worst, relative_error(lx_final, reference))
        return worst

    @staticmethod
    def check_adjoint_gradient(model, rng, instances, horizon, h=CHECK_STEP):
        worst = 0.0
        for _ in range(instances):
            ocp, us = GradientChecker.random_problem(model, rng, horizon)
            traj = ShootingOps.rollout(ocp, us)
            grad = ShootingOps.adjoint_gradient(ocp, traj).g

            count = us.size
            offsets = (np.eye(count) * h).reshape(count, *us.shape)
            costs_plus = ShootingOps.rollout_batch(ocp, traj.us[None] + offsets)
            costs_minus = ShootingOps.rollout_batch(ocp, traj.us[None] - offsets)
            reference = ((costs_plus - costs_minus) / (2.0 * h)).reshape(us.shape)
            worst = max(worst, relative_error(grad, reference))
        return worst

    @staticmethod
    def run_suite(models, instances=20, horizon=30, tolerance=1e-4, seed=0, corrupt_jacobian=False):
        """Every check on every (name, ModelSpec) pair; one CheckResult per (model, check)"""
        suites = {
            "dynamics_jacobians": GradientChecker.check_dynamics_jacobians,
            "cost_derivatives": GradientChecker.check_cost_derivatives,
            "adjoint_gradient": GradientChecker.check_adjoint_gradient,
        }
        guard = corrupted_jacobians() if corrupt_jacobian else contextlib.nullcontext()
        results = []
        with guard:
            for name, model in models:
                for check in CHECKS:
                    rng = np.random.default_rng(seed)
                    error = suites[check](model, rng, instances, horizon)
                    result = CheckResult(model=name, check=check, max_rel_error=error, tolerance=tolerance)
                    results.append(result)
                    if result.passed:
                        logger.debug(f"✅ {result.line()}")
                    else:
                        logger.warning(f"⚠️ {result.line()}")
        return results
