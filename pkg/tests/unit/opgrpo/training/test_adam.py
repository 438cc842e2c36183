import numpy as np
import pytest

from opgrpo.training import AdamState, NonFiniteGradientError, adam_step


class TestAdamStep:
    @pytest.fixture(scope="class")
    def params(self):
        return {"w": np.array([1.0, -2.0]), "b": np.array(0.5)}

    def test_first_step_moves_by_the_learning_rate_against_the_gradient(self, params):
        grads = {"w": np.array([3.0, -0.2]), "b": np.array(1e-3)}
        updated, state = adam_step(params, grads, AdamState(), learning_rate=0.01)
        np.testing.assert_allclose(updated["w"], [0.99, -1.99], atol=1e-6)
        np.testing.assert_allclose(updated["b"], 0.49, atol=1e-4)
        assert state.step == 1

    def test_zero_gradient_leaves_parameters_unchanged(self, params):
        grads = {name: np.zeros_like(value) for name, value in params.items()}
        updated, _ = adam_step(params, grads, AdamState(), learning_rate=0.1)
        for name, value in params.items():
            np.testing.assert_array_equal(updated[name], value)

    def test_inputs_are_not_modified(self, params):
        state = AdamState()
        before = {name: value.copy() for name, value in params.items()}
        grads = {name: np.ones_like(value) for name, value in params.items()}
        adam_step(params, grads, state, learning_rate=0.1)
        assert state.step == 0
        assert not state.first_moment
        for name, value in before.items():
            np.testing.assert_array_equal(params[name], value)

    def test_moments_follow_the_recursions(self):
        params = {"w": np.array([0.0])}
        _, state = adam_step(
            params, {"w": np.array([2.0])}, AdamState(), 0.1, betas=(0.5, 0.75)
        )
        _, state = adam_step(
            params, {"w": np.array([4.0])}, state, 0.1, betas=(0.5, 0.75)
        )
        np.testing.assert_allclose(state.first_moment["w"], [0.5 * 1.0 + 0.5 * 4.0])
        np.testing.assert_allclose(state.second_moment["w"], [0.75 * 1.0 + 0.25 * 16.0])
        assert state.step == 2

    def test_minimises_a_quadratic(self):
        params = {"w": np.array([1.5, -0.7])}
        state = AdamState()
        for _ in range(300):
            grads = {"w": 2.0 * params["w"]}
            params, state = adam_step(params, grads, state, learning_rate=0.05)
        assert np.all(np.abs(params["w"]) < 0.05)

    def test_copy_is_independent(self):
        params = {"w": np.array([1.0])}
        _, state = adam_step(params, {"w": np.array([1.0])}, AdamState(), 0.1)
        copied = state.copy()
        copied.first_moment["w"][0] = 100.0
        assert state.first_moment["w"][0] != 100.0
        assert copied.step == state.step


class TestAdamErrors:
    def test_names_must_match(self):
        with pytest.raises(ValueError, match="Parameters and gradients must share"):
            adam_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, AdamState(), 0.1)

    def test_shapes_must_match(self):
        with pytest.raises(ValueError, match=r"Gradient of w must have shape \(2,\)"):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite_gradient(self, bad):
        with pytest.raises(
            NonFiniteGradientError, match=NonFiniteGradientError("w").args[0]
        ):
            adam_step({"w": np.zeros(2)}, {"w": np.array([0.0, bad])}, AdamState(), 0.1)
