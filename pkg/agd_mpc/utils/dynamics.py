import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Tuple

import numba
import numpy as np

from .errors import InvalidArgumentError, NumericalError
from .instrumentation import COUNTERS

logger = logging.getLogger(__name__)

# Central-difference perturbation for the planar arm Jacobians
FD_STEP = 1e-6


class ModelKind(str, Enum):
    DOUBLE_INTEGRATOR = "double_integrator"
    PENDULUM = "pendulum"
    PLANAR_ARM = "planar_arm"
    LINEAR = "linear"


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of a discrete-time robot model.

    Articulated models order the state as (q[0..n], qd[0..n]). Links are
    point masses placed at com_ratio along each link, gravity acts along -y.
    """
    kind: ModelKind
    n_links: int = 1
    link_lengths: Tuple[float, ...] = (1.0,)
    link_masses: Tuple[float, ...] = (1.0,)
    com_ratios: Tuple[float, ...] = (1.0,)
    gravity: float = 9.81
    viscous_damping: float = 0.1
    a_matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    b_matrix: Optional[Tuple[Tuple[float, ...], ...]] = None

    def __post_init__(self):
        try:
            kind = ModelKind(self.kind)
        except ValueError:
            raise InvalidArgumentError(f"Unknown model kind: {self.kind!r}")
        object.__setattr__(self, "kind", kind)

        for name in ("link_lengths", "link_masses", "com_ratios"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

        if kind is ModelKind.LINEAR:
            self._validate_linear()
            return
        if kind is ModelKind.PLANAR_ARM:
            if self.n_links not in (2, 3):
                raise InvalidArgumentError(f"planar_arm supports 2 or 3 links, got {self.n_links}")
        else:
            object.__setattr__(self, "n_links", 1)
        if kind is ModelKind.DOUBLE_INTEGRATOR:
            return

        n = self.n_links
        for name in ("link_lengths", "link_masses", "com_ratios"):
            if len(getattr(self, name)) != n:
                raise InvalidArgumentError(f"{name} must have {n} entries, got {len(getattr(self, name))}")
        if min(self.link_lengths) <= 0 or min(self.link_masses) <= 0:
            raise InvalidArgumentError("Link lengths and masses must be strictly positive")
        if any(not 0.0 < c <= 1.0 for c in self.com_ratios):
            raise InvalidArgumentError("com_ratios must lie in (0, 1]")
        if not math.isfinite(self.gravity):
            raise InvalidArgumentError("gravity must be finite")
        if not (math.isfinite(self.viscous_damping) and self.viscous_damping >= 0.0):
            raise InvalidArgumentError("viscous_damping must be a finite nonnegative number")

    def _validate_linear(self):
        if self.a_matrix is None or self.b_matrix is None:
            raise InvalidArgumentError("linear models need a_matrix and b_matrix")
        a = np.asarray(self.a_matrix, dtype=float)
        b = np.asarray(self.b_matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgumentError(f"a_matrix must be square, got shape {a.shape}")
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise InvalidArgumentError(f"b_matrix must have {a.shape[0]} rows, got shape {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidArgumentError("a_matrix and b_matrix must be finite")
        object.__setattr__(self, "a_matrix", tuple(tuple(row) for row in a.tolist()))
        object.__setattr__(self, "b_matrix", tuple(tuple(row) for row in b.tolist()))

    @property
    def n_dof(self):
        return None if self.kind is ModelKind.LINEAR else self.n_links

    @property
    def nx(self):
        if self.kind is ModelKind.LINEAR:
            return len(self.a_matrix)
        return 2 * self.n_links

    @property
    def nu(self):
        if self.kind is ModelKind.LINEAR:
            return len(self.b_matrix[0])
        return self.n_links

    @property
    def has_end_effector(self):
        return self.kind is ModelKind.PLANAR_ARM

    @cached_property
    def lengths(self):
        return np.asarray(self.link_lengths, dtype=float)

    @cached_property
    def masses(self):
        return np.asarray(self.link_masses, dtype=float)

    @cached_property
    def com_distances(self):
        return np.asarray(self.com_ratios, dtype=float) * self.lengths

    @cached_property
    def A(self):
        return np.asarray(self.a_matrix, dtype=float)

    @cached_property
    def B(self):
        return np.asarray(self.b_matrix, dtype=float)

    @property
    def base_angle(self):
        # pendulum angles are measured from the downward vertical
        return -0.5 * math.pi if self.kind is ModelKind.PENDULUM else 0.0


@dataclass
class DynamicsJacobians:
    A: np.ndarray
    B: np.ndarray


def as_vector(name, value, dim):
    """Coerce to a finite float vector of the given dimension"""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0 and dim == 1:
        arr = arr.reshape(1)
    if arr.shape != (dim,):
        raise InvalidArgumentError(f"{name} must have shape ({dim},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return arr


@numba.njit(cache=True)
def _rnea_kernel(q, qd, qdd, gravity, lengths, com, masses, base_angle):
    """Planar point-mass recursive Newton-Euler for one configuration, without damping.

    Gravity is modelled as the base accelerating upward.
    """
    n = q.shape[0]
    cos_t = np.empty(n)
    sin_t = np.empty(n)
    omega_sq = np.empty(n)
    alpha = np.empty(n)
    theta = 0.0
    omega = 0.0
    acc = 0.0
    for i in range(n):
        theta += q[i]
        omega += qd[i]
        acc += qdd[i]
        cos_t[i] = np.cos(theta + base_angle)
        sin_t[i] = np.sin(theta + base_angle)
        omega_sq[i] = omega * omega
        alpha[i] = acc

    forces_x = np.empty(n)
    forces_y = np.empty(n)
    ax = 0.0
    ay = gravity
    for i in range(n):
        c = cos_t[i]
        s = sin_t[i]
        tangential_x = -(alpha[i] * s + omega_sq[i] * c)
        tangential_y = alpha[i] * c - omega_sq[i] * s
        forces_x[i] = masses[i] * (ax + com[i] * tangential_x)
        forces_y[i] = masses[i] * (ay + com[i] * tangential_y)
        ax += lengths[i] * tangential_x
        ay += lengths[i] * tangential_y

    tau = np.empty(n)
    fx = 0.0
    fy = 0.0
    moment = 0.0
    for i in range(n - 1, -1, -1):
        c = cos_t[i]
        s = sin_t[i]
        moment += com[i] * (c * forces_y[i] - s * forces_x[i]) + lengths[i] * (c * fy - s * fx)
        fx += forces_x[i]
        fy += forces_y[i]
        tau[i] = moment
    return tau


@numba.njit(cache=True)
def _mass_matrix_kernel(q, lengths, com, masses, base_angle):
    n = q.shape[0]
    zeros = np.zeros(n)
    mass = np.empty((n, n))
    for j in range(n):
        unit = np.zeros(n)
        unit[j] = 1.0
        mass[:, j] = _rnea_kernel(q, zeros, unit, 0.0, lengths, com, masses, base_angle)
    return mass


@numba.njit(cache=True)
def _accel_kernel(q, qd, tau, gravity, damping, lengths, com, masses, base_angle):
    n = q.shape[0]
    mass = _mass_matrix_kernel(q, lengths, com, masses, base_angle)
    bias = _rnea_kernel(q, qd, np.zeros(n), gravity, lengths, com, masses, base_angle) + damping * qd
    rhs = tau - bias
    # compiled linalg rejects non-finite input; let the rollout flag the divergence
    if not (np.all(np.isfinite(mass)) and np.all(np.isfinite(rhs))):
        return np.full(n, np.nan)
    return np.linalg.solve(mass, rhs)


@numba.njit(cache=True)
def _arm_step_kernel(xs, us, dt, gravity, damping, lengths, com, masses, base_angle):
    count = xs.shape[0]
    n = us.shape[1]
    out = np.empty_like(xs)
    for k in range(count):
        q = xs[k, :n].copy()
        qd = xs[k, n:].copy()
        qdd = _accel_kernel(q, qd, us[k].copy(), gravity, damping, lengths, com, masses, base_angle)
        qd_next = qd + dt * qdd
        out[k, n:] = qd_next
        out[k, :n] = q + dt * qd_next
    return out


@numba.njit(cache=True)
def _arm_rollout_kernel(x0, us, dt, gravity, damping, lengths, com, masses, base_angle):
    horizon, n = us.shape
    xs = np.full((horizon + 1, x0.shape[0]), np.nan)
    xs[0] = x0
    for t in range(horizon):
        q = xs[t, :n].copy()
        qd = xs[t, n:].copy()
        qdd = _accel_kernel(q, qd, us[t].copy(), gravity, damping, lengths, com, masses, base_angle)
        qd_next = qd + dt * qdd
        xs[t + 1, n:] = qd_next
        xs[t + 1, :n] = q + dt * qd_next
        if not np.all(np.isfinite(xs[t + 1])):
            break
    return xs


@numba.njit(cache=True)
def _arm_jacobians_kernel(xs, us, dt, h, gravity, damping, lengths, com, masses, base_angle):
    """Step Jacobians from M^-1 and central differences of the inverse dynamics at fixed qdd"""
    count, nx = xs.shape
    n = us.shape[1]
    a_out = np.empty((count, nx, nx))
    b_out = np.empty((count, nx, n))
    for k in range(count):
        q = xs[k, :n].copy()
        qd = xs[k, n:].copy()
        mass = _mass_matrix_kernel(q, lengths, com, masses, base_angle)
        if not (np.all(np.isfinite(mass)) and np.all(np.isfinite(qd)) and np.all(np.isfinite(us[k]))):
            a_out[k] = np.nan
            b_out[k] = np.nan
            continue
        mass_inv = np.linalg.inv(mass)
        bias = _rnea_kernel(q, qd, np.zeros(n), gravity, lengths, com, masses, base_angle) + damping * qd
        qdd = mass_inv @ (us[k] - bias)

        d_id = np.empty((n, nx))
        for j in range(n):
            plus = q.copy()
            minus = q.copy()
            plus[j] += h
            minus[j] -= h
            d_id[:, j] = (_rnea_kernel(plus, qd, qdd, gravity, lengths, com, masses, base_angle)
                          - _rnea_kernel(minus, qd, qdd, gravity, lengths, com, masses, base_angle)) / (2.0 * h)
            plus = qd.copy()
            minus = qd.copy()
            plus[j] += h
            minus[j] -= h
            d_id[:, n + j] = (_rnea_kernel(q, plus, qdd, gravity, lengths, com, masses, base_angle)
                              - _rnea_kernel(q, minus, qdd, gravity, lengths, com, masses, base_angle)) / (2.0 * h)
            d_id[j, n + j] += damping
        dqdd = -(mass_inv @ d_id)

        for i in range(n):
            for j in range(nx):
                a_out[k, n + i, j] = dt * dqdd[i, j] + (1.0 if j == n + i else 0.0)
            for j in range(nx):
                a_out[k, i, j] = (1.0 if i == j else 0.0) + dt * a_out[k, n + i, j]
            for j in range(n):
                b_out[k, n + i, j] = dt * mass_inv[i, j]
                b_out[k, i, j] = dt * b_out[k, n + i, j]
    return a_out, b_out


class RobotDynamics:
    """Forward/inverse dynamics, discretisation and kinematics of the supported models.

    The *_batch helpers accept arbitrary leading batch dimensions and skip
    input validation; the single-sample operations validate their inputs.
    Arm steps, rollouts and Jacobians, and the RNEA operations of both articulated
    models, run through the compiled per-configuration kernels above.
    """

    @staticmethod
    def _geometry(model):
        return model.lengths, model.com_distances, model.masses, float(model.base_angle)

    @staticmethod
    def _require_articulated(model, operation):
        if model.kind not in (ModelKind.PENDULUM, ModelKind.PLANAR_ARM):
            raise InvalidArgumentError(f"{operation} needs a pendulum or planar_arm model, got {model.kind.value}")

    @staticmethod
    def _require_arm(model, operation):
        if model.kind is not ModelKind.PLANAR_ARM:
            raise InvalidArgumentError(f"{operation} needs a planar_arm model, got {model.kind.value}")

    @staticmethod
    def inverse_dynamics(model, q, qd, qdd):
        """Joint torques for the given motion, including gravity and viscous damping"""
        RobotDynamics._require_articulated(model, "inverse_dynamics")
        n = model.n_dof
        q = as_vector("q", q, n)
        qd = as_vector("qd", qd, n)
        qdd = as_vector("qdd", qdd, n)
        tau = _rnea_kernel(q, qd, qdd, float(model.gravity), *RobotDynamics._geometry(model))
        return tau + model.viscous_damping * qd

    @staticmethod
    def gravity_torque(model, q):
        """Torque holding the model at rest in configuration q"""
        n = model.n_dof
        return RobotDynamics.inverse_dynamics(model, q, np.zeros(n), np.zeros(n))

    @staticmethod
    def mass_matrix(model, q):
        """M(q) assembled column by column from unit accelerations"""
        RobotDynamics._require_articulated(model, "mass_matrix")
        q = as_vector("q", q, model.n_dof)
        return _mass_matrix_kernel(q, *RobotDynamics._geometry(model))

    @staticmethod
    def accel(model, q, qd, tau):
        """Joint accelerations solving M(q)·qdd = tau - h(q, qd)"""
        RobotDynamics._require_articulated(model, "accel")
        n = model.n_dof
        q = as_vector("q", q, n)
        qd = as_vector("qd", qd, n)
        tau = as_vector("tau", tau, n)
        try:
            return _accel_kernel(q, qd, tau, float(model.gravity), float(model.viscous_damping),
                                 *RobotDynamics._geometry(model))
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"Mass matrix is singular: {e}") from e

    @staticmethod
    def _flatten(model, x, u):
        batch = x.shape[:-1]
        xs = np.ascontiguousarray(np.reshape(x, (-1, model.nx)), dtype=float)
        us = np.ascontiguousarray(np.broadcast_to(u, batch + (model.nu,)).reshape(-1, model.nu), dtype=float)
        return batch, xs, us

    @staticmethod
    def step_batch(model, x, u, dt):
        """Semi-implicit Euler step (x' = A·x + B·u for linear models); no validation"""
        if model.kind is ModelKind.LINEAR:
            return x @ model.A.T + u @ model.B.T

        if model.kind is ModelKind.PLANAR_ARM:
            batch, xs, us = RobotDynamics._flatten(model, np.asarray(x), np.asarray(u))
            try:
                out = _arm_step_kernel(xs, us, float(dt), float(model.gravity), float(model.viscous_damping),
                                       *RobotDynamics._geometry(model))
            except np.linalg.LinAlgError as e:
                raise NumericalError(f"Mass matrix is singular: {e}") from e
            return out.reshape(batch + (model.nx,))

        q = x[..., :1]
        qd = x[..., 1:]
        if model.kind is ModelKind.DOUBLE_INTEGRATOR:
            qdd = u
        else:
            inertia = model.masses[0] * model.com_distances[0] ** 2
            gravity_gain = model.masses[0] * model.gravity * model.com_distances[0]
            qdd = (u - gravity_gain * np.sin(q) - model.viscous_damping * qd) / inertia

        qd_next = qd + dt * qdd
        q_next = q + dt * qd_next
        return np.concatenate([q_next, qd_next], axis=-1)

    @staticmethod
    def _check_step_inputs(model, x, u, dt):
        if not (math.isfinite(dt) and dt > 0):
            raise InvalidArgumentError(f"dt must be a positive finite number, got {dt}")
        return as_vector("x", x, model.nx), as_vector("u", u, model.nu)

    @staticmethod
    def step(model, x, u, dt):
        """One discrete-time step of the model"""
        x, u = RobotDynamics._check_step_inputs(model, x, u, dt)
        return RobotDynamics.step_batch(model, x, u, dt)

    @staticmethod
    def simulate(model, x0, us, dt):
        """States x[0..T] from x0 under us (T, nu); rows after the first non-finite state are NaN"""
        if model.kind is ModelKind.PLANAR_ARM:
            try:
                return _arm_rollout_kernel(np.ascontiguousarray(x0, dtype=float), np.ascontiguousarray(us, dtype=float),
                                           float(dt), float(model.gravity), float(model.viscous_damping),
                                           *RobotDynamics._geometry(model))
            except np.linalg.LinAlgError as e:
                raise NumericalError(f"Mass matrix is singular: {e}") from e

        xs = np.full((us.shape[0] + 1, model.nx), np.nan)
        xs[0] = x0
        for t in range(us.shape[0]):
            xs[t + 1] = RobotDynamics.step_batch(model, xs[t], us[t], dt)
            if not np.all(np.isfinite(xs[t + 1])):
                break
        return xs

    @staticmethod
    def jacobians_batch(model, xs, us, dt):
        """Step Jacobians at N points at once: xs (N, nx), us (N, nu) -> A (N, nx, nx), B (N, nx, nu)"""
        count = xs.shape[0]
        COUNTERS.jacobian_evals += count
        kind = model.kind

        if kind is ModelKind.LINEAR:
            return (np.broadcast_to(model.A, (count,) + model.A.shape).copy(),
                    np.broadcast_to(model.B, (count,) + model.B.shape).copy())

        if kind is ModelKind.DOUBLE_INTEGRATOR:
            a = np.array([[1.0, dt], [0.0, 1.0]])
            b = np.array([[dt * dt], [dt]])
            return (np.broadcast_to(a, (count, 2, 2)).copy(),
                    np.broadcast_to(b, (count, 2, 1)).copy())

        if kind is ModelKind.PENDULUM:
            inertia = model.masses[0] * model.com_distances[0] ** 2
            gravity_gain = model.masses[0] * model.gravity * model.com_distances[0]
            dqdd_dq = -gravity_gain * np.cos(xs[:, 0]) / inertia
            dqdd_dqd = -model.viscous_damping / inertia
            a = np.empty((count, 2, 2))
            a[:, 1, 0] = dt * dqdd_dq
            a[:, 1, 1] = 1.0 + dt * dqdd_dqd
            a[:, 0, 0] = 1.0 + dt * a[:, 1, 0]
            a[:, 0, 1] = dt * a[:, 1, 1]
            b = np.empty((count, 2, 1))
            b[:, 1, 0] = dt / inertia
            b[:, 0, 0] = dt * dt / inertia
            return a, b

        xs = np.ascontiguousarray(xs, dtype=float)
        us = np.ascontiguousarray(us, dtype=float)
        try:
            return _arm_jacobians_kernel(xs, us, float(dt), FD_STEP, float(model.gravity),
                                         float(model.viscous_damping), *RobotDynamics._geometry(model))
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"Mass matrix is singular: {e}") from e

    @staticmethod
    def jacobians(model, x, u, dt):
        """A = d(step)/dx and B = d(step)/du at a single (x, u)"""
        x, u = RobotDynamics._check_step_inputs(model, x, u, dt)
        a, b = RobotDynamics.jacobians_batch(model, x[None], u[None], dt)
        return DynamicsJacobians(A=a[0], B=b[0])

    @staticmethod
    def ee_position_batch(model, q):
        theta = np.cumsum(q, axis=-1)
        return np.stack([
            np.sum(model.lengths * np.cos(theta), axis=-1),
            np.sum(model.lengths * np.sin(theta), axis=-1),
        ], axis=-1)

    @staticmethod
    def ee_jacobian_batch(model, q):
        theta = np.cumsum(q, axis=-1)
        # column j sums the contributions of links j..n-1
        x_part = np.flip(np.cumsum(np.flip(model.lengths * np.cos(theta), -1), -1), -1)
        y_part = np.flip(np.cumsum(np.flip(model.lengths * np.sin(theta), -1), -1), -1)
        return np.stack([-y_part, x_part], axis=-2)

    @staticmethod
    def ee_position(model, q):
        """End-effector position in meters"""
        RobotDynamics._require_arm(model, "ee_position")
        return RobotDynamics.ee_position_batch(model, as_vector("q", q, model.n_dof))

    @staticmethod
    def ee_jacobian(model, q):
        """2×n analytic Jacobian of ee_position"""
        RobotDynamics._require_arm(model, "ee_jacobian")
        return RobotDynamics.ee_jacobian_batch(model, as_vector("q", q, model.n_dof))

    @staticmethod
    def inverse_kinematics(model, target, q_init, damping=1e-6, max_iter=200, tol=1e-12):
        """Damped least-squares (Levenberg-Marquardt) joint solution placing the end effector at target"""
        RobotDynamics._require_arm(model, "inverse_kinematics")
        target = as_vector("target", target, 2)
        q = as_vector("q_init", q_init, model.n_dof).copy()
        eye = np.eye(model.n_dof)

        residual = RobotDynamics.ee_position_batch(model, q) - target
        for _ in range(max_iter):
            if np.linalg.norm(residual) < tol:
                break
            jac = RobotDynamics.ee_jacobian_batch(model, q)
            delta = np.linalg.solve(jac.T @ jac + damping * eye, jac.T @ residual)
            q = q - delta
            residual = RobotDynamics.ee_position_batch(model, q) - target
            if np.linalg.norm(delta) < 1e-14:
                break

        error = float(np.linalg.norm(residual))
        if error > 1e-6:
            logger.warning(f"⚠️ Inverse kinematics stopped {error:.3e} m from the target {target.tolist()}")
        return q
