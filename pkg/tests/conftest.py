import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from agd_mpc.utils.config_utils import ConfigLoader  # noqa: E402
from agd_mpc.utils.cost import CostWeights, EeMode, ReferenceSpec  # noqa: E402
from agd_mpc.utils.dynamics import ModelKind, ModelSpec  # noqa: E402
from agd_mpc.utils.instrumentation import COUNTERS  # noqa: E402
from agd_mpc.utils.ocp import OcpDef  # noqa: E402

PRESETS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "presets")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def reset_counters():
    COUNTERS.reset()
    yield


def preset_path(name):
    return os.path.join(PRESETS_DIR, f"{name}.json")


@pytest.fixture
def double_integrator():
    return ModelSpec(kind=ModelKind.DOUBLE_INTEGRATOR)


@pytest.fixture
def pendulum():
    return ConfigLoader.preset_model("pendulum")


@pytest.fixture
def arm2():
    return ConfigLoader.preset_model("planar_arm2")


@pytest.fixture
def arm3():
    return ConfigLoader.preset_model("planar_arm3")


def lqr_problem(horizon=20, dt=0.1, x0=(1.0, 0.0)):
    model = ModelSpec(kind=ModelKind.DOUBLE_INTEGRATOR)
    weights = CostWeights(q_diag=(1.0, 1.0), r_diag=(0.1,), qf_diag=(1.0, 1.0))
    refs = ReferenceSpec(x_ref=(0.0, 0.0), u_ref=(0.0,))
    return OcpDef(model=model, weights=weights, refs=refs, horizon=horizon, dt=dt, x0=np.asarray(x0))


def lqr_reference_solution(ocp):
    """Batch least squares over the stacked controls: an LQR oracle independent of any Riccati sweep"""
    model, horizon, nx, nu = ocp.model, ocp.horizon, ocp.nx, ocp.nu
    a = np.array([[1.0, ocp.dt], [0.0, 1.0]]) if model.kind is ModelKind.DOUBLE_INTEGRATOR else model.A
    b = np.array([[ocp.dt ** 2], [ocp.dt]]) if model.kind is ModelKind.DOUBLE_INTEGRATOR else model.B
    # x_{k} = Phi_k x0 + Gamma_k U
    phi = np.empty((horizon + 1, nx, nx))
    gamma = np.zeros((horizon + 1, nx, horizon * nu))
    phi[0] = np.eye(nx)
    for k in range(horizon):
        phi[k + 1] = a @ phi[k]
        gamma[k + 1] = a @ gamma[k]
        gamma[k + 1][:, k * nu:(k + 1) * nu] = b

    weights = ocp.weights
    hessian = np.kron(np.eye(horizon), np.diag(weights.r))
    linear = np.zeros(horizon * nu)
    for k in range(horizon + 1):
        q = np.diag(weights.q) if k < horizon else weights.terminal_scale * np.diag(weights.qf)
        offset = phi[k] @ ocp.x0 - ocp.refs.x
        hessian += gamma[k].T @ q @ gamma[k]
        linear += gamma[k].T @ q @ offset
    linear -= np.kron(np.ones(horizon), np.diag(weights.r) @ ocp.refs.u)
    us = np.linalg.solve(hessian, -linear).reshape(horizon, nu)
    return us


@pytest.fixture
def lqr_ocp():
    return lqr_problem()


def circle_problem(arm, horizon=30, dt=0.01, w_ee=2000.0, velocity_weight=0.05, match_velocity=False):
    """Circle tracking from the circle's start point; match_velocity also starts at the reference speed"""
    from agd_mpc.utils.dynamics import RobotDynamics
    from agd_mpc.utils.cost import CostFunctions

    radius, omega = 0.12, np.pi
    refs = ReferenceSpec(x_ref=(0.0,) * arm.nx, u_ref=(0.0,) * arm.nu, ee_mode=EeMode.CIRCLE,
                         circle_center=(0.5, 0.2), circle_radius=radius, circle_omega=omega)
    q = RobotDynamics.inverse_kinematics(arm, CostFunctions.ee_target(refs, 0.0), np.full(arm.n_dof, 0.3))
    refs = ReferenceSpec(x_ref=(0.0,) * arm.nx, u_ref=tuple(RobotDynamics.gravity_torque(arm, q)),
                         ee_mode=EeMode.CIRCLE, circle_center=(0.5, 0.2), circle_radius=radius,
                         circle_omega=omega)
    weights = CostWeights(q_diag=(0.0,) * arm.n_dof + (velocity_weight,) * arm.n_dof,
                          r_diag=(1e-3,) * arm.nu, w_ee=w_ee)
    qd = np.zeros(arm.n_dof)
    if match_velocity:
        # the target moves along +y at t = 0
        ee_velocity = np.array([0.0, radius * omega])
        qd = np.linalg.lstsq(RobotDynamics.ee_jacobian(arm, q), ee_velocity, rcond=None)[0]
    x0 = np.concatenate([q, qd])
    return OcpDef(model=arm, weights=weights, refs=refs, horizon=horizon, dt=dt, x0=x0)
