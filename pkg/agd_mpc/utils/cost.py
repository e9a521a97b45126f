import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from .dynamics import RobotDynamics, as_vector
from .errors import InvalidArgumentError
from .instrumentation import COUNTERS


class EeMode(str, Enum):
    OFF = "off"
    FIXED_POINT = "fixed_point"
    CIRCLE = "circle"


def _finite_tuple(name, values):
    out = tuple(float(v) for v in values)
    if not all(math.isfinite(v) for v in out):
        raise InvalidArgumentError(f"{name} must be finite")
    return out


@dataclass(frozen=True)
class CostWeights:
    """Diagonal state/torque regularisation weights and the end-effector tracking weight"""
    q_diag: Tuple[float, ...]
    r_diag: Tuple[float, ...]
    w_ee: float = 0.0
    terminal_scale: float = 1.0
    qf_diag: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "q_diag", _finite_tuple("q_diag", self.q_diag))
        object.__setattr__(self, "r_diag", _finite_tuple("r_diag", self.r_diag))
        if self.qf_diag is not None:
            object.__setattr__(self, "qf_diag", _finite_tuple("qf_diag", self.qf_diag))
            if len(self.qf_diag) != len(self.q_diag):
                raise InvalidArgumentError("qf_diag must have the same length as q_diag")
            if min(self.qf_diag) < 0:
                raise InvalidArgumentError("qf_diag must be nonnegative")
        if self.q_diag and min(self.q_diag) < 0:
            raise InvalidArgumentError("q_diag must be nonnegative")
        if not self.r_diag or min(self.r_diag) <= 0:
            raise InvalidArgumentError("r_diag must be strictly positive")
        for name in ("w_ee", "terminal_scale"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value >= 0):
                raise InvalidArgumentError(f"{name} must be a finite nonnegative number")
            object.__setattr__(self, name, value)

    @cached_property
    def q(self):
        return np.asarray(self.q_diag)

    @cached_property
    def r(self):
        return np.asarray(self.r_diag)

    @cached_property
    def qf(self):
        return np.asarray(self.q_diag if self.qf_diag is None else self.qf_diag)


@dataclass(frozen=True)
class ReferenceSpec:
    """State/torque references and the end-effector target (off, fixed point or moving circle)"""
    x_ref: Tuple[float, ...]
    u_ref: Tuple[float, ...]
    ee_mode: EeMode = EeMode.OFF
    fixed_point: Tuple[float, float] = (0.0, 0.0)
    circle_center: Tuple[float, float] = (0.0, 0.0)
    circle_radius: float = 0.0
    circle_omega: float = 0.0
    circle_phase: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "ee_mode", EeMode(self.ee_mode))
        except ValueError:
            raise InvalidArgumentError(f"Unknown ee_mode: {self.ee_mode!r}")
        object.__setattr__(self, "x_ref", _finite_tuple("x_ref", self.x_ref))
        object.__setattr__(self, "u_ref", _finite_tuple("u_ref", self.u_ref))
        for name in ("fixed_point", "circle_center"):
            value = _finite_tuple(name, getattr(self, name))
            if len(value) != 2:
                raise InvalidArgumentError(f"{name} must be a 2-vector")
            object.__setattr__(self, name, value)
        for name in ("circle_radius", "circle_omega", "circle_phase"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidArgumentError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.circle_radius < 0:
            raise InvalidArgumentError("circle_radius must be nonnegative")

    @cached_property
    def x(self):
        return np.asarray(self.x_ref)

    @cached_property
    def u(self):
        return np.asarray(self.u_ref)


@dataclass
class CostDerivatives:
    lx: np.ndarray
    lu: np.ndarray
    lxx_gn: np.ndarray
    luu_gn: np.ndarray


class CostFunctions:
    """Separable quadratic costs with a Gauss-Newton end-effector tracking term.

    The *_batch helpers broadcast over leading dimensions: times has the
    shape of xs.shape[:-1] (or broadcasts to it).
    """

    @staticmethod
    def check_dimensions(weights, ref, model):
        nx, nu = model.nx, model.nu
        for name, value, dim in (("q_diag", weights.q_diag, nx), ("r_diag", weights.r_diag, nu),
                                 ("x_ref", ref.x_ref, nx), ("u_ref", ref.u_ref, nu)):
            if len(value) != dim:
                raise InvalidArgumentError(f"{name} has {len(value)} entries, model needs {dim}")

    @staticmethod
    def circle_reference(ref, t):
        """Point on the reference circle at time t"""
        if ref.ee_mode is not EeMode.CIRCLE:
            raise InvalidArgumentError(f"circle_reference needs ee_mode=circle, got {ref.ee_mode.value}")
        return CostFunctions._circle(ref, np.asarray(t, dtype=float))

    @staticmethod
    def _circle(ref, t):
        angle = ref.circle_omega * t + ref.circle_phase
        return np.stack([
            ref.circle_center[0] + ref.circle_radius * np.cos(angle),
            ref.circle_center[1] + ref.circle_radius * np.sin(angle),
        ], axis=-1)

    @staticmethod
    def ee_target(ref, t):
        """p*(t) with shape t.shape + (2,), or None when tracking is off"""
        t = np.asarray(t, dtype=float)
        if ref.ee_mode is EeMode.CIRCLE:
            return CostFunctions._circle(ref, t)
        if ref.ee_mode is EeMode.FIXED_POINT:
            return np.broadcast_to(np.asarray(ref.fixed_point), t.shape + (2,))
        return None

    @staticmethod
    def _tracking_active(ref, model):
        return model.has_end_effector and ref.ee_mode is not EeMode.OFF

    @staticmethod
    def _ee_residual(ref, model, times, q):
        target = CostFunctions.ee_target(ref, np.broadcast_to(times, q.shape[:-1]))
        return RobotDynamics.ee_position_batch(model, q) - target

    @staticmethod
    def ee_error_batch(ref, model, times, xs):
        """Euclidean end-effector tracking error in meters (zero without tracking)"""
        if not CostFunctions._tracking_active(ref, model):
            return np.zeros(xs.shape[:-1])
        residual = CostFunctions._ee_residual(ref, model, times, xs[..., :model.n_dof])
        return np.linalg.norm(residual, axis=-1)

    @staticmethod
    def _tracking_cost(weights, ref, model, times, xs):
        if not CostFunctions._tracking_active(ref, model):
            return 0.0
        residual = CostFunctions._ee_residual(ref, model, times, xs[..., :model.n_dof])
        return 0.5 * weights.w_ee * np.sum(residual * residual, axis=-1)

    @staticmethod
    def stage_cost_batch(weights, ref, model, times, xs, us):
        dx = xs - ref.x
        du = us - ref.u
        return (0.5 * np.sum(weights.q * dx * dx, axis=-1)
                + 0.5 * np.sum(weights.r * du * du, axis=-1)
                + CostFunctions._tracking_cost(weights, ref, model, times, xs))

    @staticmethod
    def terminal_cost_batch(weights, ref, model, t_final, xs):
        dx = xs - ref.x
        return weights.terminal_scale * (0.5 * np.sum(weights.qf * dx * dx, axis=-1)
                                         + CostFunctions._tracking_cost(weights, ref, model, t_final, xs))

    @staticmethod
    def _augmented_ee_jacobian(model, xs):
        """[ee_jacobian(q), 0] over (q, qd): shape (..., 2, nx)"""
        n = model.n_dof
        jac = np.zeros(xs.shape[:-1] + (2, model.nx))
        jac[..., :, :n] = RobotDynamics.ee_jacobian_batch(model, xs[..., :n])
        return jac

    @staticmethod
    def gradients_batch(weights, ref, model, times, xs, us=None, terminal=False):
        """(lx, lu); lu is None for the terminal stage"""
        state_weights = weights.qf if terminal else weights.q
        lx = state_weights * (xs - ref.x)
        if CostFunctions._tracking_active(ref, model):
            residual = CostFunctions._ee_residual(ref, model, times, xs[..., :model.n_dof])
            jac = CostFunctions._augmented_ee_jacobian(model, xs)
            lx = lx + weights.w_ee * np.einsum("...ij,...i->...j", jac, residual)
        if terminal:
            return weights.terminal_scale * lx, None
        return lx, weights.r * (us - ref.u)

    @staticmethod
    def cost_gn_hessians(weights, ref, model, times, xs, terminal=False):
        """Gauss-Newton Hessians (lxx_gn of shape (..., nx, nx), luu_gn of shape (nu, nu))"""
        COUNTERS.gn_hessian_evals += 1
        state_weights = weights.qf if terminal else weights.q
        lxx = np.zeros(xs.shape[:-1] + (model.nx, model.nx))
        lxx[...] = np.diag(state_weights)
        if CostFunctions._tracking_active(ref, model):
            jac = CostFunctions._augmented_ee_jacobian(model, xs)
            lxx = lxx + weights.w_ee * np.einsum("...ki,...kj->...ij", jac, jac)
        if terminal:
            return weights.terminal_scale * lxx, np.zeros((model.nu, model.nu))
        return lxx, np.diag(weights.r)

    @staticmethod
    def _validated(weights, ref, model, x, u=None):
        CostFunctions.check_dimensions(weights, ref, model)
        x = as_vector("x", x, model.nx)
        if u is not None:
            u = as_vector("u", u, model.nu)
        return x, u

    @staticmethod
    def running_cost(weights, ref, model, t, x, u):
        """Stage cost l(x, u) at time t"""
        x, u = CostFunctions._validated(weights, ref, model, x, u)
        return float(CostFunctions.stage_cost_batch(weights, ref, model, float(t), x, u))

    @staticmethod
    def terminal_cost(weights, ref, model, t_final, x):
        x, _ = CostFunctions._validated(weights, ref, model, x)
        return float(CostFunctions.terminal_cost_batch(weights, ref, model, float(t_final), x))

    @staticmethod
    def cost_derivatives(weights, ref, model, t, x, u, is_terminal=False):
        """First derivatives and Gauss-Newton Hessians; the cross term l_ux is identically zero"""
        x, u = CostFunctions._validated(weights, ref, model, x, None if is_terminal else u)
        t = float(t)
        lx, lu = CostFunctions.gradients_batch(weights, ref, model, t, x, u, terminal=is_terminal)
        lxx, luu = CostFunctions.cost_gn_hessians(weights, ref, model, t, x, terminal=is_terminal)
        if is_terminal:
            lu = np.zeros(model.nu)
        return CostDerivatives(lx=lx, lu=lu, lxx_gn=lxx, luu_gn=luu)
