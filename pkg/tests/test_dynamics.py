import numpy as np
import pytest

from agd_mpc.utils.dynamics import ModelKind, ModelSpec, RobotDynamics
from agd_mpc.utils.errors import InvalidArgumentError


def unit_arm(n_links=2, damping=0.1):
    return ModelSpec(kind=ModelKind.PLANAR_ARM, n_links=n_links, link_lengths=(1.0,) * n_links,
                     link_masses=(1.0,) * n_links, com_ratios=(1.0,) * n_links, viscous_damping=damping)


def fd_step_jacobians(model, x, u, dt, h=1e-6):
    nx, nu = model.nx, model.nu
    a = np.empty((nx, nx))
    b = np.empty((nx, nu))
    for i in range(nx):
        e = np.zeros(nx)
        e[i] = h
        a[:, i] = (RobotDynamics.step(model, x + e, u, dt) - RobotDynamics.step(model, x - e, u, dt)) / (2 * h)
    for i in range(nu):
        e = np.zeros(nu)
        e[i] = h
        b[:, i] = (RobotDynamics.step(model, x, u + e, dt) - RobotDynamics.step(model, x, u - e, dt)) / (2 * h)
    return a, b


def random_state(model, rng):
    n = model.n_dof
    return np.concatenate([rng.uniform(-np.pi, np.pi, n), rng.uniform(-1.0, 1.0, n)])


def test_double_integrator_step_from_rest(double_integrator):
    x_next = RobotDynamics.step(double_integrator, [0.0, 0.0], [2.0], 0.1)
    np.testing.assert_allclose(x_next, [0.02, 0.2], atol=1e-15)


def test_double_integrator_drift(double_integrator):
    x_next = RobotDynamics.step(double_integrator, [0.0, 1.0], [0.0], 0.1)
    np.testing.assert_allclose(x_next, [0.1, 1.0], atol=1e-15)


def test_two_link_release_from_horizontal(arm2):
    x_next = RobotDynamics.step(arm2, np.zeros(4), np.zeros(2), 0.01)
    assert x_next[2] < 0.0

    # oracle: M(q)·qdd = -h(q, 0) with both pieces from inverse dynamics
    q = np.zeros(2)
    qdd = np.linalg.solve(RobotDynamics.mass_matrix(arm2, q), -RobotDynamics.inverse_dynamics(arm2, q, q, q))
    np.testing.assert_allclose(x_next[2:], 0.01 * qdd, rtol=1e-12)


def test_gravity_torque_cancels_gravity(pendulum, arm2, arm3):
    rng = np.random.default_rng(0)
    for model in (pendulum, arm2, arm3):
        q = rng.uniform(-np.pi, np.pi, model.n_dof)
        tau = RobotDynamics.inverse_dynamics(model, q, np.zeros(model.n_dof), np.zeros(model.n_dof))
        qdd = RobotDynamics.accel(model, q, np.zeros(model.n_dof), tau)
        np.testing.assert_allclose(qdd, 0.0, atol=1e-10)


def test_pendulum_horizontal_falls_at_g():
    model = ModelSpec(kind=ModelKind.PENDULUM, link_lengths=(1.0,), link_masses=(1.0,),
                      com_ratios=(1.0,), viscous_damping=0.0)
    qdd = RobotDynamics.accel(model, [np.pi / 2], [0.0], [0.0])
    assert qdd[0] == pytest.approx(-9.81, abs=1e-12)


def test_pendulum_step_matches_closed_form(pendulum):
    x = np.array([0.3, -0.4])
    u = np.array([0.7])
    dt = 0.01
    inertia = 1.0 * 1.0 ** 2
    qdd = (u[0] - 9.81 * np.sin(x[0]) - 0.1 * x[1]) / inertia
    qd_next = x[1] + dt * qdd
    np.testing.assert_allclose(RobotDynamics.step(pendulum, x, u, dt), [x[0] + dt * qd_next, qd_next], rtol=1e-14)


def test_mass_matrix_matches_fd_of_inverse_dynamics(arm2):
    q = np.array([0.4, -1.1])
    qd = np.array([0.3, 0.2])
    mass = RobotDynamics.mass_matrix(arm2, q)
    h = 1e-6
    fd = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd[:, j] = (RobotDynamics.inverse_dynamics(arm2, q, qd, e)
                    - RobotDynamics.inverse_dynamics(arm2, q, qd, -e)) / (2 * h)
    np.testing.assert_allclose(mass, fd, atol=1e-6)


def test_mass_matrix_symmetric_positive_definite(arm2, arm3):
    rng = np.random.default_rng(1)
    for model in (arm2, arm3):
        for _ in range(100):
            mass = RobotDynamics.mass_matrix(model, rng.uniform(-np.pi, np.pi, model.n_dof))
            assert np.max(np.abs(mass - mass.T)) <= 1e-10
            assert np.min(np.linalg.eigvalsh(mass)) > 0.0


def test_double_integrator_jacobians(double_integrator):
    jac = RobotDynamics.jacobians(double_integrator, [0.3, -2.0], [5.0], 0.1)
    np.testing.assert_allclose(jac.A, [[1.0, 0.1], [0.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(jac.B, [[0.01], [0.1]], atol=1e-15)


@pytest.mark.parametrize("name", ["pendulum", "arm2", "arm3"])
def test_jacobians_match_finite_differences(name, request):
    model = request.getfixturevalue(name)
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = random_state(model, rng)
        u = rng.uniform(-2.0, 2.0, model.nu)
        jac = RobotDynamics.jacobians(model, x, u, 0.01)
        a, b = fd_step_jacobians(model, x, u, 0.01)
        assert np.max(np.abs(jac.A - a)) <= 1e-5
        assert np.max(np.abs(jac.B - b)) <= 1e-5


def test_arm_jacobian_taylor_remainder_is_second_order(arm3):
    rng = np.random.default_rng(3)
    x = random_state(arm3, rng)
    u = rng.uniform(-1.0, 1.0, 3)
    v = rng.normal(size=6)
    dt = 0.01
    a = RobotDynamics.jacobians(arm3, x, u, dt).A
    base = RobotDynamics.step(arm3, x, u, dt)

    def remainder(h):
        return np.linalg.norm(RobotDynamics.step(arm3, x + h * v, u, dt) - base - h * a @ v)

    ratio = remainder(1e-2) / remainder(5e-3)
    assert 3.0 <= ratio <= 5.0


def test_linear_model_step_and_jacobians():
    model = ModelSpec(kind=ModelKind.LINEAR, a_matrix=((1.0, 0.5), (0.0, 0.9)), b_matrix=((0.0,), (2.0,)))
    assert (model.nx, model.nu) == (2, 1)
    np.testing.assert_allclose(RobotDynamics.step(model, [1.0, 2.0], [0.5], 0.1), [2.0, 2.8])
    jac = RobotDynamics.jacobians(model, [1.0, 2.0], [0.5], 0.1)
    np.testing.assert_allclose(jac.A, model.A)
    np.testing.assert_allclose(jac.B, model.B)


def test_ee_position_examples():
    arm = unit_arm()
    np.testing.assert_allclose(RobotDynamics.ee_position(arm, [0.0, 0.0]), [2.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(RobotDynamics.ee_position(arm, [np.pi / 2, 0.0]), [0.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(RobotDynamics.ee_position(arm, [np.pi / 2, -np.pi / 2]), [1.0, 1.0], atol=1e-15)


def test_ee_jacobian_examples():
    arm = unit_arm()
    np.testing.assert_allclose(RobotDynamics.ee_jacobian(arm, [0.0, 0.0]), [[0.0, 0.0], [2.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(RobotDynamics.ee_jacobian(arm, [np.pi / 2, 0.0]), [[-2.0, -1.0], [0.0, 0.0]],
                               atol=1e-15)


def test_ee_jacobian_matches_finite_differences(arm3):
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        jac = RobotDynamics.ee_jacobian(arm3, q)
        assert np.all(np.abs(jac) <= np.sum(arm3.link_lengths) + 1e-12)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (RobotDynamics.ee_position(arm3, q + e) - RobotDynamics.ee_position(arm3, q - e)) / (2 * h)
            assert np.max(np.abs(jac[:, j] - fd)) <= 1e-7


def test_pendulum_conserves_energy_without_damping():
    model = ModelSpec(kind=ModelKind.PENDULUM, link_lengths=(1.0,), link_masses=(1.0,),
                      com_ratios=(1.0,), viscous_damping=0.0)

    def energy(x):
        return 0.5 * x[1] ** 2 - 9.81 * np.cos(x[0])

    x = np.array([1.0, 0.0])
    e0 = energy(x)
    u = np.zeros(1)
    for _ in range(100000):
        x = RobotDynamics.step_batch(model, x, u, 1e-4)
    assert abs(energy(x) - e0) <= 0.01 * abs(e0)


def test_step_is_deterministic(arm3):
    x = np.array([0.1, 0.2, 0.3, -0.1, 0.0, 0.5])
    u = np.array([1.0, -0.5, 0.2])
    assert np.array_equal(RobotDynamics.step(arm3, x, u, 0.01), RobotDynamics.step(arm3, x, u, 0.01))


def test_batched_arm_step_matches_single_steps(arm3):
    rng = np.random.default_rng(12)
    xs = np.stack([random_state(arm3, rng) for _ in range(8)]).reshape(2, 4, 6)
    us = rng.uniform(-2.0, 2.0, (2, 4, 3))
    batched = RobotDynamics.step_batch(arm3, xs, us, 0.01)
    assert batched.shape == (2, 4, 6)
    for i in range(2):
        for j in range(4):
            assert np.array_equal(batched[i, j], RobotDynamics.step(arm3, xs[i, j], us[i, j], 0.01))


def test_batched_arm_jacobians_match_single_points(arm2):
    rng = np.random.default_rng(13)
    xs = np.stack([random_state(arm2, rng) for _ in range(5)])
    us = rng.uniform(-2.0, 2.0, (5, 2))
    a, b = RobotDynamics.jacobians_batch(arm2, xs, us, 0.01)
    for k in range(5):
        jac = RobotDynamics.jacobians(arm2, xs[k], us[k], 0.01)
        np.testing.assert_array_equal(a[k], jac.A)
        np.testing.assert_array_equal(b[k], jac.B)


def test_simulate_pads_after_divergence():
    model = ModelSpec(kind=ModelKind.LINEAR, a_matrix=((1e300,),), b_matrix=((1.0,),))
    with np.errstate(over="ignore"):
        xs = RobotDynamics.simulate(model, np.array([1.0]), np.zeros((5, 1)), 0.1)
    assert xs[1, 0] == 1e300
    assert np.all(np.isnan(xs[3:]))


def test_inverse_kinematics_reaches_target(arm3):
    target = np.array([0.5, 0.3])
    q = RobotDynamics.inverse_kinematics(arm3, target, np.full(3, 0.3))
    np.testing.assert_allclose(RobotDynamics.ee_position(arm3, q), target, atol=1e-9)


def test_invalid_inputs_are_rejected(double_integrator, pendulum):
    with pytest.raises(InvalidArgumentError):
        RobotDynamics.step(double_integrator, [0.0, 0.0, 0.0], [1.0], 0.1)
    with pytest.raises(InvalidArgumentError):
        RobotDynamics.step(double_integrator, [np.nan, 0.0], [1.0], 0.1)
    with pytest.raises(InvalidArgumentError):
        RobotDynamics.step(double_integrator, [0.0, 0.0], [1.0], 0.0)
    with pytest.raises(InvalidArgumentError):
        RobotDynamics.ee_position(pendulum, [0.0])
    with pytest.raises(InvalidArgumentError):
        RobotDynamics.accel(double_integrator, [0.0], [0.0], [0.0])


def test_model_spec_validation():
    with pytest.raises(InvalidArgumentError):
        ModelSpec(kind="planar_arm", n_links=4, link_lengths=(1.0,) * 4, link_masses=(1.0,) * 4,
                  com_ratios=(1.0,) * 4)
    with pytest.raises(InvalidArgumentError):
        ModelSpec(kind="planar_arm", n_links=2, link_lengths=(1.0, -1.0), link_masses=(1.0, 1.0),
                  com_ratios=(1.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        ModelSpec(kind="unicycle")
    assert (ModelSpec(kind="pendulum").nx, ModelSpec(kind="pendulum").nu) == (2, 1)
