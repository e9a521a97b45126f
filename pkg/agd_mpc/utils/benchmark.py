import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from ..mpc import SolverKind
from ..solvers.agd_solver import AdamState, AgdSolver
from ..solvers.ddp_solver import DdpSolver
from .dynamics import ModelKind, RobotDynamics
from .errors import DivergenceError
from .ocp import ShootingOps

logger = logging.getLogger(__name__)


@dataclass
class BenchRow:
    solver: str
    horizon: int
    median_iter_time: float
    iters_timed: int


class SolverBenchmark:
    """Median per-iteration wall time of each solver across horizons.

    Every timed iteration starts from the same rolled-out initial guess so
    all samples of a cell do identical work.
    """

    @staticmethod
    def _agd_iteration(solver, ocp, traj):
        adam = AdamState.fresh(ocp.horizon, ocp.nu)

        def run():
            grad = ShootingOps.adjoint_gradient(ocp, traj, check_feasibility=False)
            solver.step(ocp, traj, grad, adam)
        return run

    @staticmethod
    def _ddp_iteration(solver, ocp, traj):
        mu = solver.settings.mu_init

        def run():
            solver.iterate(ocp, traj, mu)
        return run

    @staticmethod
    def initial_controls(ocp, damping_gain=0.5):
        """Bounded initial guess: gravity compensation plus joint damping, rolled out from x0.

        Models without gravity fall back to repeating u_ref.
        """
        model = ocp.model
        if model.kind not in (ModelKind.PENDULUM, ModelKind.PLANAR_ARM):
            return np.tile(ocp.refs.u, (ocp.horizon, 1))
        n = model.n_dof
        us = np.empty((ocp.horizon, ocp.nu))
        x = ocp.x0.copy()
        for t in range(ocp.horizon):
            us[t] = RobotDynamics.gravity_torque(model, x[:n]) - damping_gain * x[n:]
            x = RobotDynamics.step_batch(model, x, us[t], ocp.dt)
        return us

    @staticmethod
    def time_cell(solver_kind, ocp, settings, us_init, iters, warmup):
        """Median time of one iteration; a cell whose initial guess diverges yields a NaN row"""
        solver_kind = SolverKind(solver_kind)
        try:
            traj = ShootingOps.rollout(ocp, us_init)
        except DivergenceError as e:
            logger.warning(f"⚠️ {solver_kind.value} T={ocp.horizon}: initial guess diverged ({e}), cell skipped")
            return BenchRow(solver=solver_kind.value, horizon=ocp.horizon, median_iter_time=math.nan, iters_timed=0)
        if solver_kind is SolverKind.AGD:
            run = SolverBenchmark._agd_iteration(AgdSolver(settings), ocp, traj)
        else:
            run = SolverBenchmark._ddp_iteration(DdpSolver(settings), ocp, traj)

        for _ in range(warmup):
            run()
        samples = np.empty(iters)
        for i in range(iters):
            started = time.perf_counter()
            run()
            samples[i] = time.perf_counter() - started
        row = BenchRow(solver=solver_kind.value, horizon=ocp.horizon,
                       median_iter_time=float(np.median(samples)), iters_timed=iters)
        logger.info(f"⏱️ {row.solver} T={row.horizon}: {row.median_iter_time * 1e3:.4f} ms/iter "
                    f"over {iters} iterations")
        return row

    @staticmethod
    def run(cfg, horizons, n_jobs=None):
        """One row per (solver, horizon), AGD rows first"""
        bench = cfg.bench
        n_jobs = bench.n_jobs if n_jobs is None else n_jobs
        cells = []
        for solver_kind, iters in ((SolverKind.AGD, bench.agd_iters), (SolverKind.DDP, bench.ddp_iters)):
            for horizon in horizons:
                ocp = replace(cfg.ocp, horizon=int(horizon))
                us_init = SolverBenchmark.initial_controls(ocp)
                cells.append((solver_kind, ocp, cfg.solver_settings(solver_kind), us_init, iters, bench.warmup_iters))

        logger.info(f"🚀 Benchmarking {len(cells)} cells with n_jobs={n_jobs}")
        return Parallel(n_jobs=n_jobs)(delayed(SolverBenchmark.time_cell)(*cell) for cell in cells)

    @staticmethod
    def ratios(rows):
        """AGD:DDP time ratio per horizon and consecutive-horizon ratios per solver"""
        by_key = {(row.solver, row.horizon): row.median_iter_time for row in rows
                  if math.isfinite(row.median_iter_time)}
        horizons = sorted({row.horizon for row in rows})
        solver_ratio = {h: by_key[("agd", h)] / by_key[("ddp", h)]
                        for h in horizons if ("agd", h) in by_key and ("ddp", h) in by_key}
        scaling = {}
        for solver in ("agd", "ddp"):
            scaling[solver] = [(h0, h1, by_key[(solver, h1)] / by_key[(solver, h0)])
                               for h0, h1 in zip(horizons, horizons[1:])
                               if (solver, h0) in by_key and (solver, h1) in by_key]
        return solver_ratio, scaling
