import numpy as np
import pytest

from conftest import circle_problem, lqr_problem, lqr_reference_solution

from agd_mpc.utils.cost import CostFunctions, CostWeights, ReferenceSpec
from agd_mpc.utils.dynamics import ModelKind, ModelSpec, RobotDynamics
from agd_mpc.utils.errors import DivergenceError, InvalidArgumentError
from agd_mpc.utils.instrumentation import COUNTERS
from agd_mpc.utils.ocp import OcpDef, ShootingOps, Trajectory


def one_step_problem():
    model = ModelSpec(kind=ModelKind.DOUBLE_INTEGRATOR)
    weights = CostWeights(q_diag=(0.0, 0.0), r_diag=(1.0,), qf_diag=(1.0, 1.0), terminal_scale=1.0)
    refs = ReferenceSpec(x_ref=(0.0, 0.0), u_ref=(0.0,))
    return OcpDef(model=model, weights=weights, refs=refs, horizon=1, dt=0.1, x0=[0.0, 0.0])


def pendulum_problem(pendulum, horizon=30, x0=(0.4, -0.2), base_time=0.0):
    weights = CostWeights(q_diag=(1.0, 0.1), r_diag=(0.05,), qf_diag=(5.0, 0.5))
    refs = ReferenceSpec(x_ref=(0.2, 0.0), u_ref=(0.1,))
    return OcpDef(model=pendulum, weights=weights, refs=refs, horizon=horizon, dt=0.01, x0=x0, base_time=base_time)


def test_rollout_at_equilibrium():
    ocp = lqr_problem(x0=(0.0, 0.0))
    traj = ShootingOps.rollout(ocp, np.zeros((ocp.horizon, 1)))
    np.testing.assert_array_equal(traj.xs, 0.0)
    assert traj.cost == 0.0


def test_rollout_one_step():
    ocp = one_step_problem()
    traj = ShootingOps.rollout(ocp, [[1.0]])
    np.testing.assert_allclose(traj.xs[1], [0.01, 0.1], atol=1e-15)


def test_rollout_matches_step_by_step_oracle(pendulum):
    rng = np.random.default_rng(7)
    ocp = pendulum_problem(pendulum)
    for _ in range(100):
        us = rng.normal(0.0, 2.0, (ocp.horizon, 1))
        traj = ShootingOps.rollout(ocp, us)
        x = ocp.x0
        for t in range(ocp.horizon):
            x = RobotDynamics.step(pendulum, x, us[t], ocp.dt)
            assert np.array_equal(traj.xs[t + 1], x)
        assert ShootingOps.feasibility_residual(ocp, traj) <= 1e-12


def test_total_cost_one_step_hand_value():
    ocp = one_step_problem()
    traj = ShootingOps.rollout(ocp, [[1.0]])
    assert traj.cost == pytest.approx(0.50505, rel=1e-12)


def test_total_cost_matches_brute_force_summation(arm3):
    rng = np.random.default_rng(8)
    ocp = circle_problem(arm3, horizon=20)
    ocp = ocp.with_initial_state(ocp.x0, 1.3)
    for _ in range(100):
        us = np.asarray(ocp.refs.u) + rng.normal(0.0, 1.0, (ocp.horizon, 3))
        traj = ShootingOps.rollout(ocp, us)
        expected = sum(CostFunctions.running_cost(ocp.weights, ocp.refs, arm3, ocp.base_time + k * ocp.dt,
                                                  traj.xs[k], traj.us[k]) for k in range(ocp.horizon))
        expected += CostFunctions.terminal_cost(ocp.weights, ocp.refs, arm3,
                                                ocp.base_time + ocp.horizon * ocp.dt, traj.xs[-1])
        assert ShootingOps.total_cost(ocp, traj) == pytest.approx(expected, rel=1e-12)


def test_reference_preview_switch(arm2):
    ocp = circle_problem(arm2, horizon=5)
    ocp = ocp.with_initial_state(ocp.x0, 2.0)
    np.testing.assert_allclose(ocp.times, 2.0 + 0.01 * np.arange(5))
    assert ocp.t_final == pytest.approx(2.05)

    frozen = OcpDef(model=ocp.model, weights=ocp.weights, refs=ocp.refs, horizon=5, dt=0.01,
                    x0=ocp.x0, base_time=2.0, preview=False)
    np.testing.assert_array_equal(frozen.times, 2.0)
    assert frozen.t_final == 2.0


def test_total_cost_rejects_dimension_mismatch(lqr_ocp):
    traj = ShootingOps.rollout(lqr_ocp, np.zeros((lqr_ocp.horizon, 1)))
    with pytest.raises(InvalidArgumentError):
        ShootingOps.total_cost(lqr_ocp, Trajectory(xs=traj.xs[:-1], us=traj.us))


def test_rollout_divergence_names_step():
    model = ModelSpec(kind=ModelKind.LINEAR, a_matrix=((1e300,),), b_matrix=((1.0,),))
    ocp = OcpDef(model=model, weights=CostWeights(q_diag=(1.0,), r_diag=(1.0,)),
                 refs=ReferenceSpec(x_ref=(0.0,), u_ref=(0.0,)), horizon=5, dt=0.1, x0=[1.0])
    with np.errstate(over="ignore"), pytest.raises(DivergenceError) as info:
        ShootingOps.rollout(ocp, np.zeros((5, 1)))
    assert info.value.step_index == 2


def test_adjoint_gradient_one_step_hand_value():
    ocp = one_step_problem()
    traj = ShootingOps.rollout(ocp, [[1.0]])
    grad, costates = ShootingOps.adjoint_gradient(ocp, traj, return_costates=True)
    assert grad.g[0, 0] == pytest.approx(1.0101, rel=1e-12)
    np.testing.assert_allclose(costates.lambdas[-1], [0.01, 0.1], rtol=1e-12)


def test_adjoint_gradient_vanishes_at_lqr_optimum():
    ocp = lqr_problem()
    traj = ShootingOps.rollout(ocp, lqr_reference_solution(ocp))
    assert ShootingOps.adjoint_gradient(ocp, traj).norm <= 1e-10


@pytest.mark.parametrize("name", ["double_integrator", "pendulum", "arm3"])
def test_adjoint_gradient_matches_finite_differences(name, request):
    model = request.getfixturevalue(name)
    rng = np.random.default_rng(9)
    h = 1e-6
    for _ in range(5):
        if model.has_end_effector:
            ocp = circle_problem(model, horizon=30, w_ee=50.0)
        else:
            weights = CostWeights(q_diag=rng.uniform(0.1, 1.0, 2), r_diag=rng.uniform(0.01, 0.1, 1))
            ocp = OcpDef(model=model, weights=weights, refs=ReferenceSpec(x_ref=(0.1, 0.0), u_ref=(0.0,)),
                         horizon=30, dt=0.01, x0=rng.uniform(-1, 1, 2))
        us = np.asarray(ocp.refs.u) + rng.normal(0.0, 0.5, (ocp.horizon, ocp.nu))
        grad = ShootingOps.adjoint_gradient(ocp, ShootingOps.rollout(ocp, us)).g
        fd = np.empty_like(us)
        for t in range(ocp.horizon):
            for i in range(ocp.nu):
                e = np.zeros_like(us)
                e[t, i] = h
                fd[t, i] = (ShootingOps.rollout(ocp, us + e).cost - ShootingOps.rollout(ocp, us - e).cost) / (2 * h)
        assert np.max(np.abs(grad - fd)) / max(np.max(np.abs(fd)), 1e-8) <= 1e-4


def test_adjoint_gradient_uses_one_jacobian_per_step(lqr_ocp):
    traj = ShootingOps.rollout(lqr_ocp, np.zeros((lqr_ocp.horizon, 1)))
    COUNTERS.reset()
    ShootingOps.adjoint_gradient(lqr_ocp, traj)
    assert COUNTERS.jacobian_evals == lqr_ocp.horizon
    assert COUNTERS.gradient_evals == 1
    assert COUNTERS.gn_hessian_evals == 0


def test_adjoint_gradient_rejects_infeasible_trajectory(lqr_ocp):
    traj = ShootingOps.rollout(lqr_ocp, np.zeros((lqr_ocp.horizon, 1)))
    xs = traj.xs.copy()
    xs[5, 0] += 1e-6
    with pytest.raises(InvalidArgumentError):
        ShootingOps.adjoint_gradient(lqr_ocp, Trajectory(xs=xs, us=traj.us))


def test_adjoint_gradient_can_skip_the_feasibility_pass(lqr_ocp, monkeypatch):
    traj = ShootingOps.rollout(lqr_ocp, np.zeros((lqr_ocp.horizon, 1)))
    expected = ShootingOps.adjoint_gradient(lqr_ocp, traj).g

    def fail(*args):
        raise AssertionError("feasibility_residual should not run")

    monkeypatch.setattr(ShootingOps, "feasibility_residual", staticmethod(fail))
    grad = ShootingOps.adjoint_gradient(lqr_ocp, traj, check_feasibility=False)
    np.testing.assert_array_equal(grad.g, expected)
    with pytest.raises(AssertionError):
        ShootingOps.adjoint_gradient(lqr_ocp, traj)


def test_rollout_without_cost_skips_the_objective(arm3):
    ocp = circle_problem(arm3, horizon=10)
    us = np.tile(ocp.refs.u, (ocp.horizon, 1))
    traj = ShootingOps.rollout(ocp, us, with_cost=False)
    assert np.isnan(traj.cost)
    assert COUNTERS.objective_evals == 0
    full = ShootingOps.rollout(ocp, us)
    np.testing.assert_array_equal(traj.xs, full.xs)
    assert COUNTERS.objective_evals == 1


def test_arm_rollout_matches_step_by_step(arm3):
    rng = np.random.default_rng(11)
    ocp = circle_problem(arm3, horizon=15)
    us = np.tile(ocp.refs.u, (ocp.horizon, 1)) + rng.normal(0.0, 0.5, (ocp.horizon, 3))
    traj = ShootingOps.rollout(ocp, us)
    x = ocp.x0
    for t in range(ocp.horizon):
        x = RobotDynamics.step(arm3, x, us[t], ocp.dt)
        assert np.array_equal(traj.xs[t + 1], x)
    assert ShootingOps.feasibility_residual(ocp, traj) == 0.0


def test_rollout_batch_matches_single_rollouts(pendulum):
    rng = np.random.default_rng(10)
    ocp = pendulum_problem(pendulum, horizon=15)
    batch = rng.normal(0.0, 1.0, (6, 15, 1))
    costs = ShootingOps.rollout_batch(ocp, batch)
    expected = [ShootingOps.rollout(ocp, us).cost for us in batch]
    np.testing.assert_allclose(costs, expected, rtol=1e-12)


def test_ocp_validation(double_integrator):
    weights = CostWeights(q_diag=(1.0, 1.0), r_diag=(1.0,))
    refs = ReferenceSpec(x_ref=(0.0, 0.0), u_ref=(0.0,))
    with pytest.raises(InvalidArgumentError):
        OcpDef(model=double_integrator, weights=weights, refs=refs, horizon=0, dt=0.1, x0=[0.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        OcpDef(model=double_integrator, weights=weights, refs=refs, horizon=5, dt=-0.1, x0=[0.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        OcpDef(model=double_integrator, weights=weights, refs=refs, horizon=5, dt=0.1, x0=[0.0])
    ocp = OcpDef(model=double_integrator, weights=weights, refs=refs, horizon=5, dt=0.1, x0=[0.0, 0.0])
    with pytest.raises(InvalidArgumentError):
        ShootingOps.rollout(ocp, np.zeros((4, 1)))
