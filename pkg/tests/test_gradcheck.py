import numpy as np
import pytest

from agd_mpc.utils.config_utils import ConfigLoader
from agd_mpc.utils.dynamics import RobotDynamics
from agd_mpc.utils.gradcheck import CHECKS, GradientChecker, corrupted_jacobians, relative_error


@pytest.fixture
def small_models():
    return [(name, ConfigLoader.preset_model(name)) for name in ("double_integrator", "pendulum", "planar_arm2")]


def test_relative_error():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.1, 2.0], [1.0, 2.0]) == pytest.approx(0.05)
    assert relative_error([1e-9], [0.0]) == pytest.approx(0.1)


def test_random_problems_are_seeded(arm2):
    ocp_a, us_a = GradientChecker.random_problem(arm2, np.random.default_rng(3), 10)
    ocp_b, us_b = GradientChecker.random_problem(arm2, np.random.default_rng(3), 10)
    assert np.array_equal(us_a, us_b)
    assert np.array_equal(ocp_a.x0, ocp_b.x0)
    assert ocp_a.horizon == 10


def test_suite_passes_on_correct_derivatives(small_models):
    results = GradientChecker.run_suite(small_models, instances=3, horizon=10, tolerance=1e-4, seed=0)
    assert len(results) == len(small_models) * len(CHECKS)
    for result in results:
        assert result.passed, result.line()
        assert "[ok]" in result.line()


def test_corrupted_jacobian_is_caught(small_models):
    results = GradientChecker.run_suite(small_models, instances=2, horizon=10, tolerance=1e-4, seed=0,
                                        corrupt_jacobian=True)
    failed = {(r.model, r.check) for r in results if not r.passed}
    assert ("pendulum", "adjoint_gradient") in failed
    assert ("planar_arm2", "adjoint_gradient") in failed
    assert all(r.passed for r in results if r.check == "cost_derivatives")


def test_corruption_is_undone_on_exit(pendulum):
    x, u = np.array([[0.3, 0.1]]), np.array([[0.2]])
    _, clean = RobotDynamics.jacobians_batch(pendulum, x, u, 0.01)
    with corrupted_jacobians(scale=2.0):
        _, scaled = RobotDynamics.jacobians_batch(pendulum, x, u, 0.01)
    _, after = RobotDynamics.jacobians_batch(pendulum, x, u, 0.01)
    np.testing.assert_allclose(scaled, 2.0 * clean)
    np.testing.assert_array_equal(after, clean)
