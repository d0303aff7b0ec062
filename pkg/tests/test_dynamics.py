import math

import numpy as np
import pytest

from kinoltl.dynamics import (
    LinearizedSystem,
    SystemModel,
    check_bounds,
    controllability_matrix,
    custom_model,
    double_integrator,
    integrate_ode,
    linearize,
    single_integrator,
)


def pendulum(x, u):
    """Damped pendulum, used as a nonlinear model without analytic Jacobians."""
    return np.array([x[1], -9.81 * math.sin(x[0]) - 0.1 * x[1] + u[0]])


def make_pendulum():
    return SystemModel("pendulum", 2, 1, pendulum, [-4, -8], [4, 8], [-2], [2], np.eye(1), 1, 8.0)


class TestModels:
    def test_single_integrator(self):
        m = single_integrator([0, 0], [6, 6])
        assert (m.n, m.m, m.input_bound, m.max_speed) == (2, 2, 0.22, 0.22)
        np.testing.assert_array_equal(m.f([1, 2], [0.1, -0.1]), [0.1, -0.1])

    def test_double_integrator_layout(self):
        m = double_integrator([0, 0, 0], [6, 6, 6], thrust=5.0, velocity=1.0, mass=2.0)
        assert (m.n, m.m, m.position_dims) == (6, 3, 3)
        np.testing.assert_array_equal(m.state_upper, [6, 6, 6, 1, 1, 1])
        np.testing.assert_allclose(m.f(np.r_[0, 0, 0, 1, 2, 3], [2, 4, 6]), [1, 2, 3, 1, 2, 3])

    def test_double_integrator_full_state_bounds(self):
        m = double_integrator([0] * 3 + [-1] * 3, [6, 6, 6.5, 1, 1, 1], dim=3)
        assert m.n == 6 and m.state_upper[2] == 6.5

    @pytest.mark.parametrize("R", [np.array([[1.0, 2.0], [0.0, 1.0]]), -np.eye(2)])
    def test_rejects_bad_weight(self, R):
        with pytest.raises(ValueError, match="R must"):
            single_integrator([0, 0], [1, 1], R=R)

    def test_rejects_empty_box(self):
        with pytest.raises(ValueError, match="empty"):
            single_integrator([1, 0], [0, 1])

    def test_custom_model_import(self):
        m = custom_model("tests.test_dynamics:pendulum", state_lower=[-4, -8], state_upper=[4, 8],
                         input_lower=[-2], input_upper=[2], position_dims=1, max_speed=8.0)
        np.testing.assert_allclose(m.f([0, 1], [0]), [1, -0.1])

    def test_custom_model_requires_colon(self):
        with pytest.raises(ValueError, match="module:function"):
            custom_model("numpy.sin", state_lower=[0], state_upper=[1], input_lower=[0],
                         input_upper=[1], position_dims=1, max_speed=1)


class TestLinearize:
    def test_linear_model_is_exact(self):
        m = double_integrator([0, 0], [6, 6])
        lin = linearize(m, np.r_[1, 2, 0.3, -0.2])
        np.testing.assert_array_equal(lin.d, 0)
        np.testing.assert_array_equal(lin.A[:2, 2:], np.eye(2))

    def test_finite_differences_match_analytic(self):
        x_hat = np.array([0.7, -0.3])
        lin = linearize(make_pendulum(), x_hat, [0.5])
        A = np.array([[0, 1], [-9.81 * math.cos(0.7), -0.1]])
        np.testing.assert_allclose(lin.A, A, atol=1e-7)
        np.testing.assert_allclose(lin.B, [[0], [1]], atol=1e-7)
        # affine term reproduces f at the expansion point
        np.testing.assert_allclose(lin.rhs(x_hat, [0.5]), pendulum(x_hat, [0.5]), atol=1e-12)

    def test_first_order_accuracy(self):
        lin = linearize(make_pendulum(), [0.7, -0.3])
        for h in (1e-2, 1e-3):
            x = np.array([0.7 + h, -0.3 - h])
            err = np.linalg.norm(lin.rhs(x, [0.0]) - pendulum(x, [0.0]))
            assert err < 10 * h * h

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_jacobian(self):
        m = SystemModel("bad", 1, 1, lambda x, u: np.sqrt(x) + u, [0], [1], [-1], [1], np.eye(1), 1, 1.0)
        with pytest.raises(ValueError, match="non-finite"):
            linearize(m, [-1.0])

    def test_controllability(self):
        lin = linearize(double_integrator([0], [1]), [0, 0])
        assert np.linalg.matrix_rank(controllability_matrix(lin.A, lin.B)) == 2


class TestIntegrator:
    def test_exponential_decay(self):
        sys = LinearizedSystem.from_matrices([[-1.0]], [[0.0]])
        t, X = integrate_ode(sys, [1.0], [0.0], 2.0, 0.01)
        assert t[-1] == 2.0
        assert X[-1, 0] == pytest.approx(math.exp(-2.0), rel=1e-9)

    def test_fourth_order(self):
        sys = LinearizedSystem.from_matrices([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [0.0]])
        errs = []
        for dt in (0.1, 0.05):
            _, X = integrate_ode(sys, [1.0, 0.0], [0.0], 3.0, dt)
            errs.append(abs(X[-1, 0] - math.cos(3.0)))
        assert 12 < errs[0] / errs[1] < 20

    def test_time_varying_input(self):
        sys = LinearizedSystem.from_matrices([[0.0]], [[1.0]])
        _, X = integrate_ode(sys, [0.0], lambda t: [3 * t * t], 1.0, 0.1)
        assert X[-1, 0] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        sys = LinearizedSystem.from_matrices([[8000.0]], [[0.0]])
        with pytest.raises(FloatingPointError):
            integrate_ode(sys, [1.0], [0.0], 100.0, 0.5)

    def test_invalid_horizon(self):
        sys = LinearizedSystem.from_matrices([[0.0]], [[1.0]])
        with pytest.raises(ValueError):
            integrate_ode(sys, [0.0], [0.0], 0.0, 0.1)


class TestBounds:
    def test_within(self):
        m = single_integrator([0, 0], [1, 1])
        b = check_bounds(m, [[0.5, 0.5], [1.0, 0.0]], [[0.22, -0.22]])
        assert b.ok and b.state_excess == 0 and b.input_excess == 0

    def test_excess_magnitudes(self):
        m = single_integrator([0, 0], [1, 1])
        b = check_bounds(m, [[1.3, 0.5], [-0.1, 0.0]], [[0.25, -0.3]])
        assert not b.ok
        assert b.state_excess == pytest.approx(0.3)
        assert b.input_excess == pytest.approx(0.08)
