import logging
import math
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from tqdm import tqdm

from .solvers.agd_solver import AdamState, AgdSettings, AgdSolver
from .solvers.ddp_solver import DdpSettings, DdpSolver
from .utils.cost import CostFunctions
from .utils.dynamics import RobotDynamics, as_vector
from .utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


class SolverKind(str, Enum):
    AGD = "agd"
    DDP = "ddp"


class ShiftPolicy(str, Enum):
    TIME_ALIGNED = "time_aligned"
    EVERY_CYCLE = "every_cycle"


# Iterations per control cycle when the config does not say
DEFAULT_ITERS_PER_CYCLE = {SolverKind.AGD: 8, SolverKind.DDP: 2}


@dataclass
class MpcConfig:
    sim_duration: float = 10.0
    control_dt: float = 0.001
    iters_per_cycle: Optional[int] = None
    solver: SolverKind = SolverKind.AGD
    preview_reference: bool = True
    seed: int = 0
    warm_start: bool = True
    shift_policy: ShiftPolicy = ShiftPolicy.TIME_ALIGNED
    record_wall_time: bool = True
    progress: bool = False

    def __post_init__(self):
        try:
            self.solver = SolverKind(self.solver)
            self.shift_policy = ShiftPolicy(self.shift_policy)
        except ValueError as e:
            raise InvalidArgumentError(str(e))
        if not (math.isfinite(self.sim_duration) and self.sim_duration > 0):
            raise InvalidArgumentError(f"sim_duration must be positive, got {self.sim_duration}")
        if not (math.isfinite(self.control_dt) and self.control_dt > 0):
            raise InvalidArgumentError(f"control_dt must be positive, got {self.control_dt}")
        if self.iters_per_cycle is None:
            self.iters_per_cycle = DEFAULT_ITERS_PER_CYCLE[self.solver]
        if int(self.iters_per_cycle) != self.iters_per_cycle or self.iters_per_cycle < 1:
            raise InvalidArgumentError(f"iters_per_cycle must be a positive integer, got {self.iters_per_cycle}")

    @property
    def n_cycles(self):
        return int(math.floor(self.sim_duration / self.control_dt + 1e-9))


@dataclass(frozen=True)
class DisturbanceEvent:
    """Extra joint torque applied to the plant only, for t in [t_start, t_end)"""
    t_start: float
    t_end: float
    tau_extra: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tau_extra", tuple(float(v) for v in self.tau_extra))
        values = (self.t_start, self.t_end) + self.tau_extra
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgumentError("Disturbance times and torques must be finite")
        if not self.t_start < self.t_end:
            raise InvalidArgumentError(f"Disturbance needs t_start < t_end, got {self.t_start} >= {self.t_end}")

    def active(self, t):
        return self.t_start <= t < self.t_end


@dataclass
class MpcLog:
    """Per-cycle closed-loop records; arrays share the cycle index"""
    solver: str
    control_dt: float
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    running_cost: np.ndarray
    ee_error: np.ndarray
    grad_norm: np.ndarray
    solve_time: np.ndarray
    iterations: np.ndarray
    divergence_count: int = 0
    status: str = "ok"

    def __len__(self):
        return len(self.t)

    def truncated(self, count):
        return replace(self, t=self.t[:count], x=self.x[:count], u=self.u[:count],
                       running_cost=self.running_cost[:count], ee_error=self.ee_error[:count],
                       grad_norm=self.grad_norm[:count], solve_time=self.solve_time[:count],
                       iterations=self.iterations[:count])


class MpcSimulator:
    """Receding-horizon loop: re-solve from the measured state, apply the first control, shift the warm start"""

    @staticmethod
    def make_solver(kind, settings):
        kind = SolverKind(kind)
        if kind is SolverKind.AGD:
            if not isinstance(settings, AgdSettings):
                raise InvalidArgumentError("AGD runs need AgdSettings")
            return AgdSolver(settings)
        if not isinstance(settings, DdpSettings):
            raise InvalidArgumentError("DDP runs need DdpSettings")
        return DdpSolver(settings)

    @staticmethod
    def _shift(seq, steps):
        index = np.minimum(np.arange(len(seq)) + steps, len(seq) - 1)
        return seq[index]

    @staticmethod
    def shift_warm_start(us, adam=None, steps=1):
        """Advance controls (and ADAM moments) by `steps` nodes, holding the last entry"""
        us = np.asarray(us, dtype=float)
        if adam is not None and adam.m.shape != us.shape:
            raise InvalidArgumentError(f"ADAM moments {adam.m.shape} do not match controls {us.shape}")
        shifted_us = MpcSimulator._shift(us, steps)
        if adam is None:
            return shifted_us, None
        shifted_adam = AdamState(m=MpcSimulator._shift(adam.m, steps),
                                 v=MpcSimulator._shift(adam.v, steps),
                                 step_count=adam.step_count)
        return shifted_us, shifted_adam

    @staticmethod
    def plant_step(model, x, u_applied, events, t, control_dt):
        """Simulated robot: the model driven by the applied torque plus any active disturbance"""
        tau = as_vector("u_applied", u_applied, model.nu).copy()
        for event in events:
            if event.active(t):
                tau += as_vector("tau_extra", event.tau_extra, model.nu)
        return RobotDynamics.step(model, x, tau, control_dt)

    @staticmethod
    def _nodes_crossed(cycle, control_dt, ocp_dt, policy):
        if policy is ShiftPolicy.EVERY_CYCLE:
            return 1
        before = math.floor(cycle * control_dt / ocp_dt + 1e-9)
        after = math.floor((cycle + 1) * control_dt / ocp_dt + 1e-9)
        return after - before

    @staticmethod
    def run_mpc(ocp_template, cfg, solver_settings, events=(), us_init=None):
        """Closed-loop simulation; the solver never sees the disturbance events"""
        model = ocp_template.model
        if ocp_template.dt < cfg.control_dt - 1e-12:
            raise InvalidArgumentError(f"OCP dt {ocp_template.dt} is shorter than control_dt {cfg.control_dt}")
        for event in events:
            if len(event.tau_extra) != model.nu:
                raise InvalidArgumentError(f"Disturbance torque has {len(event.tau_extra)} entries, model needs {model.nu}")

        solver = MpcSimulator.make_solver(cfg.solver, solver_settings).with_budget(cfg.iters_per_cycle, 0.0)
        ocp_base = replace(ocp_template, preview=cfg.preview_reference)
        if us_init is None:
            us_init = np.tile(ocp_template.refs.u, (ocp_template.horizon, 1))
        us_init = ocp_base.controls(us_init)
        warm = solver.fresh_start(ocp_base, us_init)

        n_cycles = cfg.n_cycles
        nx, nu = model.nx, model.nu
        log = MpcLog(solver=cfg.solver.value, control_dt=cfg.control_dt,
                     t=np.arange(n_cycles) * cfg.control_dt,
                     x=np.empty((n_cycles, nx)), u=np.empty((n_cycles, nu)),
                     running_cost=np.empty(n_cycles), ee_error=np.empty(n_cycles),
                     grad_norm=np.empty(n_cycles), solve_time=np.zeros(n_cycles),
                     iterations=np.zeros(n_cycles, dtype=int))

        logger.info(f"🚀 Closed-loop {cfg.solver.value.upper()} run: {n_cycles} cycles at "
                    f"{cfg.control_dt * 1e3:g} ms, {cfg.iters_per_cycle} iterations per cycle")
        x = ocp_template.x0.copy()
        u_prev = us_init[0].copy()
        weights, refs = ocp_template.weights, ocp_template.refs
        completed = n_cycles
        for k in tqdm(range(n_cycles), disable=not cfg.progress, desc=f"{cfg.solver.value} MPC", unit="cycle"):
            t = log.t[k]
            ocp = ocp_base.with_initial_state(x, t)
            if not cfg.warm_start:
                warm = solver.fresh_start(ocp, us_init)

            started = time.perf_counter()
            result, next_warm = solver.solve_warm(ocp, warm)
            elapsed = time.perf_counter() - started

            if result.diverged:
                log.divergence_count += 1
                u_apply = u_prev
                logger.warning(f"⚠️ Solver diverged at t={t:.3f}s, holding the previous control")
            else:
                u_apply = result.traj.us[0].copy()

            log.x[k] = x
            log.u[k] = u_apply
            log.running_cost[k] = CostFunctions.stage_cost_batch(weights, refs, model, t, x, u_apply)
            log.ee_error[k] = CostFunctions.ee_error_batch(refs, model, t, x)
            log.grad_norm[k] = result.grad_norm
            log.iterations[k] = result.iterations_run
            if cfg.record_wall_time:
                log.solve_time[k] = elapsed

            x_next = MpcSimulator.plant_step(model, x, u_apply, events, t, cfg.control_dt)
            if not np.all(np.isfinite(x_next)):
                logger.error(f"❌ Plant state became non-finite at t={t:.3f}s, aborting the run")
                log.status = "plant_diverged"
                completed = k + 1
                break

            steps = MpcSimulator._nodes_crossed(k, cfg.control_dt, ocp_template.dt, cfg.shift_policy)
            us_next, adam_next = MpcSimulator.shift_warm_start(next_warm.us, next_warm.adam, steps)
            warm = replace(next_warm, us=us_next, adam=adam_next)
            x = x_next
            u_prev = u_apply

        if completed < n_cycles:
            log = log.truncated(completed)
        logger.info(f"✅ Closed-loop run finished: {len(log)} cycles, {log.divergence_count} divergences")
        return log
