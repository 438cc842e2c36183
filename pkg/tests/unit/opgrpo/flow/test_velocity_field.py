import re

import numpy as np
import pytest

from opgrpo.diagnostics import finite_difference_gradient, max_relative_error
from opgrpo.flow import FieldArchitecture, VelocityField
from opgrpo.tensor import ComputationTape, backward, square, tensor_sum
from tests.unit.opgrpo._builders import SMALL_ARCHITECTURE, small_field


class TestFieldArchitecture:
    def test_input_dim(self):
        assert SMALL_ARCHITECTURE.input_dim == 2 + 3 + 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"latent_dim": 0},
            {"num_conditions": 1.5},
            {"hidden_sizes": (8,)},
            {"hidden_sizes": (8, 8, 8, 8)},
            {"hidden_sizes": (8, 0)},
            {"output_scale": 0.0},
        ],
    )
    def test_invalid_architectures_raise(self, kwargs):
        with pytest.raises(ValueError):
            FieldArchitecture(**kwargs)

    def test_to_dict_lists_hidden_sizes(self):
        assert SMALL_ARCHITECTURE.to_dict()["hidden_sizes"] == [8, 8]


class TestVelocityField:
    @pytest.fixture(scope="class")
    def field(self):
        return small_field(seed=0, requires_grad=False)

    def test_output_shape(self, field):
        velocity = field(np.zeros((5, 2)), 3, [0, 1, 2, 3, 0])
        assert velocity.shape == (5, 2)

    def test_param_count(self, field):
        expected = 4 * 3 + 4 * 3 + (8 * 8 + 8) + (8 * 8 + 8) + (8 * 2 + 2)
        assert field.param_count == expected

    def test_same_seed_is_bit_identical(self, field):
        z = np.random.default_rng(0).normal(size=(3, 2))
        again = small_field(seed=0, requires_grad=False)
        assert field(z, 2, 1).data.tobytes() == again(z, 2, 1).data.tobytes()
        assert field.fingerprint() == again.fingerprint()

    def test_different_seeds_differ(self, field):
        assert field.fingerprint() != small_field(seed=1).fingerprint()

    def test_conditions_and_steps_change_the_output(self, field):
        z = np.ones((1, 2))
        assert not np.array_equal(field(z, 1, 0).data, field(z, 1, 1).data)
        assert not np.array_equal(field(z, 1, 0).data, field(z, 2, 0).data)

    @pytest.mark.parametrize("step", [0, 5])
    def test_step_out_of_range_raises(self, field, step):
        with pytest.raises(ValueError, match=re.escape("must lie in [1, 4]")):
            field(np.zeros((1, 2)), step, 0)

    def test_condition_out_of_range_raises(self, field):
        with pytest.raises(ValueError, match=re.escape("must lie in [0, 3]")):
            field(np.zeros((1, 2)), 1, 4)

    def test_wrong_latent_shape_raises(self, field):
        with pytest.raises(ValueError, match=re.escape("must have shape (N, 2)")):
            field(np.zeros((1, 3)), 1, 0)

    def test_constant_field(self):
        field = VelocityField.constant(SMALL_ARCHITECTURE, 4, [0.5, -1.0])
        velocity = field(np.random.default_rng(1).normal(size=(3, 2)), 2, 1)
        assert velocity.data.tolist() == [[0.5, -1.0]] * 3
        assert not field.requires_grad

    def test_snapshot_is_frozen_and_independent(self):
        field = small_field(seed=2)
        frozen = field.snapshot()
        assert not frozen.requires_grad
        assert frozen.fingerprint() == field.fingerprint()
        state = field.state_dict()
        state["output/bias"] = state["output/bias"] + 1.0
        field.load_state_dict(state)
        assert frozen.fingerprint() != field.fingerprint()

    def test_state_dict_round_trip(self, field):
        rebuilt = VelocityField.from_state(SMALL_ARCHITECTURE, 4, field.state_dict())
        assert rebuilt.fingerprint() == field.fingerprint()

    def test_missing_parameter_raises(self, field):
        state = field.state_dict()
        del state["output/bias"]
        with pytest.raises(ValueError, match=re.escape("Missing: ['output/bias']")):
            small_field().load_state_dict(state)

    def test_wrong_parameter_shape_raises(self, field):
        state = field.state_dict()
        state["output/bias"] = np.zeros(3)
        with pytest.raises(ValueError, match="Parameter output/bias must have shape"):
            small_field().load_state_dict(state)

    def test_non_finite_parameter_raises(self, field):
        state = field.state_dict()
        state["hidden_0/bias"] = np.full(8, np.nan)
        with pytest.raises(ValueError, match="holds non-finite values"):
            small_field().load_state_dict(state)


class TestVelocityFieldGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_parameter_gradients_match_finite_differences(self, seed):
        field = small_field(seed=seed)
        z = np.random.default_rng(seed).normal(size=(3, 2))
        steps, ids = [1, 2, 4], [0, 3, 1]
        with ComputationTape():
            loss = tensor_sum(square(field(z, steps, ids)))
        backward(loss)

        evaluator = small_field(seed=seed, requires_grad=False)

        def evaluate(params):
            evaluator.load_state_dict(params)
            return float(np.sum(np.square(evaluator(z, steps, ids).data)))

        numeric = finite_difference_gradient(evaluate, field.state_dict())
        analytic = field.gradients()
        assert max_relative_error(analytic, numeric, floor=1e-4) < 1e-4

    def test_zero_grad_clears_gradients(self):
        field = small_field()
        with ComputationTape():
            loss = tensor_sum(field(np.ones((1, 2)), 1, 0))
        backward(loss)
        assert any(np.any(g != 0) for g in field.gradients().values())
        field.zero_grad()
        assert all(np.all(g == 0) for g in field.gradients().values())
