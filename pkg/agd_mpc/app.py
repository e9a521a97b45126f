import functools
import logging
import os

import click
import numpy as np

from .mpc import MpcSimulator, SolverKind
from .utils.benchmark import SolverBenchmark
from .utils.config_utils import ConfigLoader
from .utils.errors import AgdMpcError, ConfigError, DivergenceError, ExitCode, InvalidArgumentError
from .utils.gradcheck import GradientChecker
from .utils.instrumentation import COUNTERS
from .utils.io_utils import IoUtils
from .utils.metrics import MpcMetrics

logger = logging.getLogger("agd_mpc")

config_option = click.option("--config", "config_path", required=True,
                             type=click.Path(dir_okay=False), help="Experiment config (JSON).")
solver_option = click.option("--solver", type=click.Choice([kind.value for kind in SolverKind]),
                             default=SolverKind.AGD.value, show_default=True)
out_option = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                          help="Output directory (overrides output_dir).")
seed_option = click.option("--seed", type=int, default=None, help="Seed (overrides the config seed).")


def handle_errors(command):
    """Map package errors onto the documented exit codes"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except ConfigError as e:
            click.echo(f"❌ {e}", err=True)
            ctx.exit(int(ExitCode.INVALID_INPUT))
        except InvalidArgumentError as e:
            click.echo(f"❌ Invalid input: {e}", err=True)
            ctx.exit(int(ExitCode.INVALID_INPUT))
        except DivergenceError as e:
            click.echo(f"❌ Diverged: {e}", err=True)
            ctx.exit(int(ExitCode.DIVERGED))
        except AgdMpcError as e:
            logger.error(f"❌ {e}", exc_info=True)
            ctx.exit(int(ExitCode.DIVERGED))
    return wrapper


def load_config(config_path, out_dir, seed):
    cfg = ConfigLoader.load(config_path)
    if out_dir is not None or seed is not None:
        cfg = ConfigLoader.with_overrides(cfg, output_dir=out_dir, seed=seed)
    return cfg


def parse_horizons(ctx, param, value):
    if value is None:
        return None
    try:
        horizons = [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated integers, e.g. 100,400")
    if len(horizons) < 2:
        raise click.BadParameter("at least two horizons are needed")
    if any(h < 1 for h in horizons) or any(a >= b for a, b in zip(horizons, horizons[1:])):
        raise click.BadParameter("horizons must be positive and strictly ascending")
    return horizons


def run_summary(cfg, **fields):
    return {**fields, "seed": cfg.seed, "config_hash": ConfigLoader.config_hash(cfg),
            "counters": COUNTERS.snapshot()}


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging (per-iteration records).")
@click.option("-q", "--quiet", is_flag=True, help="Warnings and errors only.")
def cli(verbose, quiet):
    """AGD vs DDP model predictive control experiments."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("agd_mpc").setLevel(level)


@cli.command()
@config_option
@solver_option
@out_option
@seed_option
@handle_errors
def solve(config_path, solver, out_dir, seed):
    """Open-loop solve: trajectory.csv, convergence.csv and summary.json."""
    cfg = load_config(config_path, out_dir, seed)
    kind = SolverKind(solver)
    engine = MpcSimulator.make_solver(kind, cfg.solver_settings(kind))
    us_init = np.tile(cfg.ocp.refs.u, (cfg.ocp.horizon, 1))

    COUNTERS.reset()
    logger.info(f"🚀 Open-loop {kind.value.upper()} solve, T={cfg.ocp.horizon}, dt={cfg.ocp.dt:g}")
    if kind is SolverKind.AGD:
        result, _ = engine.solve(cfg.ocp, us_init)
    else:
        result = engine.solve(cfg.ocp, us_init)

    out = cfg.output_dir
    if result.traj is not None:
        IoUtils.write_trajectory(os.path.join(out, "trajectory.csv"), cfg.ocp, result.traj)
    IoUtils.write_convergence(os.path.join(out, "convergence.csv"), result)
    IoUtils.write_json(os.path.join(out, "summary.json"), run_summary(
        cfg, solver=kind.value, status=result.status.value, final_cost=result.final_cost,
        grad_norm=result.grad_norm, iterations=result.iterations_run))

    click.echo(f"{kind.value}: status={result.status.value} iterations={result.iterations_run} "
               f"final_cost={IoUtils.format_real(result.final_cost)} grad_norm={result.grad_norm:.3e}")
    if result.diverged:
        click.get_current_context().exit(int(ExitCode.DIVERGED))


@cli.command()
@config_option
@solver_option
@click.option("--disturb/--no-disturb", default=False, show_default=True,
              help="Apply the config's disturbance events to the plant.")
@out_option
@seed_option
@handle_errors
def mpc(config_path, solver, disturb, out_dir, seed):
    """Closed-loop run: mpc_log.csv and summary.json."""
    cfg = load_config(config_path, out_dir, seed)
    kind = SolverKind(solver)
    events = list(cfg.events) if disturb else []

    COUNTERS.reset()
    log = MpcSimulator.run_mpc(cfg.ocp, cfg.mpc_config(kind), cfg.solver_settings(kind), events)
    summary = MpcMetrics.metrics(log, events)

    out = cfg.output_dir
    IoUtils.write_mpc_log(os.path.join(out, "mpc_log.csv"), log)
    IoUtils.write_json(os.path.join(out, "summary.json"), run_summary(
        cfg, solver=kind.value, status=log.status, cycles=len(log), **summary.to_dict()))

    click.echo(f"{kind.value}: cycles={len(log)} mean_running_cost={summary.mean_running_cost:.6e} "
               f"rms_ee_error={summary.rms_ee_error:.6e} divergences={summary.divergence_count}")
    for record in summary.recovery:
        recovery = "not recovered" if record.recovery_time is None else f"{record.recovery_time:.3f} s"
        click.echo(f"  disturbance {record.t_start:g}-{record.t_end:g} s: recovery {recovery}")
    if log.status != "ok":
        click.get_current_context().exit(int(ExitCode.DIVERGED))


@cli.command()
@config_option
@out_option
@seed_option
@click.option("--corrupt-jacobian", is_flag=True, hidden=True)
@handle_errors
def gradcheck(config_path, out_dir, seed, corrupt_jacobian):
    """Finite-difference checks of Jacobians, cost derivatives and adjoint gradients."""
    cfg = load_config(config_path, out_dir, seed)
    check = cfg.gradcheck
    models = [(name, ConfigLoader.preset_model(name)) for name in check.models]
    models.append(("config", cfg.model))

    results = GradientChecker.run_suite(models, instances=check.instances, horizon=check.horizon,
                                        tolerance=check.tolerance, seed=cfg.seed,
                                        corrupt_jacobian=corrupt_jacobian)
    for result in results:
        click.echo(result.line())

    offenders = [result for result in results if not result.passed]
    if offenders:
        click.echo(f"❌ {len(offenders)} check(s) above tolerance {check.tolerance:g}:", err=True)
        for result in offenders:
            click.echo(f"  {result.model}/{result.check}: {result.max_rel_error:.3e}", err=True)
        click.get_current_context().exit(int(ExitCode.CHECK_FAILED))
    click.echo(f"✅ All {len(results)} checks within {check.tolerance:g}")


@cli.command()
@config_option
@click.option("--horizons", callback=parse_horizons, default=None,
              help="Comma-separated ascending horizons, e.g. 100,400.")
@out_option
@seed_option
@handle_errors
def bench(config_path, horizons, out_dir, seed):
    """Median per-iteration time of both solvers per horizon: bench.csv."""
    cfg = load_config(config_path, out_dir, seed)
    if horizons is None:
        try:
            horizons = parse_horizons(None, None, ",".join(str(h) for h in cfg.bench.horizons))
        except click.BadParameter as e:
            raise ConfigError(f"bench.horizons: {e.message}", path=cfg.path, key="bench.horizons")

    rows = SolverBenchmark.run(cfg, horizons)
    IoUtils.write_csv(os.path.join(cfg.output_dir, "bench.csv"),
                      ["solver", "T", "median_iter_time_s", "iters_timed"],
                      [[row.solver, str(row.horizon), IoUtils.format_real(row.median_iter_time),
                        str(row.iters_timed)] for row in rows])

    failed = [f"{row.solver} T={row.horizon}" for row in rows if row.iters_timed == 0]
    if failed:
        logger.warning(f"⚠️ {len(failed)} benchmark cells could not be timed: {', '.join(failed)}")

    solver_ratio, scaling = SolverBenchmark.ratios(rows)
    for horizon, ratio in solver_ratio.items():
        click.echo(f"T={horizon}: AGD:DDP per-iteration time = {ratio:.3f}")
    for solver, pairs in scaling.items():
        for h0, h1, ratio in pairs:
            click.echo(f"{solver}: time(T={h1}) / time(T={h0}) = {ratio:.3f}")


def main():
    cli(prog_name="agd_mpc")
