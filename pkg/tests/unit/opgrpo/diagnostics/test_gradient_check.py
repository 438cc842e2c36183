import numpy as np
import pytest

from opgrpo.diagnostics import finite_difference_gradient, max_relative_error


class TestFiniteDifferenceGradient:
    def test_quadratic(self):
        params = {"w": np.array([1.0, -2.0]), "b": np.array([[0.5]])}
        gradient = finite_difference_gradient(
            lambda p: float(np.sum(p["w"] ** 2) + 3 * p["b"][0, 0]), params
        )
        assert gradient["w"] == pytest.approx([2.0, -4.0])
        assert gradient["b"] == pytest.approx([[3.0]])

    def test_input_is_not_modified(self):
        params = {"w": np.array([1.0, 2.0])}
        finite_difference_gradient(lambda p: float(np.sum(p["w"])), params)
        assert params["w"].tolist() == [1.0, 2.0]

    def test_non_positive_step_raises(self):
        with pytest.raises(ValueError, match="Finite-difference step must be positive"):
            finite_difference_gradient(lambda p: 0.0, {"w": np.zeros(1)}, step=0.0)


class TestMaxRelativeError:
    def test_identical_gradients(self):
        grads = {"w": np.array([1.0, -3.0])}
        assert max_relative_error(grads, grads) == 0.0

    def test_relative_scale(self):
        error = max_relative_error(
            {"w": np.array([1.0, 100.0])}, {"w": np.array([1.1, 100.0])}
        )
        assert error == pytest.approx(0.1 / 1.1)

    def test_floor_bounds_tiny_values(self):
        error = max_relative_error(
            {"w": np.array([0.0])}, {"w": np.array([1e-9])}, floor=1e-6
        )
        assert error == pytest.approx(1e-3)

    def test_mismatched_names_raise(self):
        with pytest.raises(ValueError, match="same parameters"):
            max_relative_error({"w": np.zeros(1)}, {"v": np.zeros(1)})

    def test_mismatched_shapes_raise(self):
        with pytest.raises(ValueError, match="Gradient shapes of w differ"):
            max_relative_error({"w": np.zeros(1)}, {"w": np.zeros(2)})
