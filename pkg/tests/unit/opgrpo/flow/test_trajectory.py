import re

import numpy as np
import pytest

from opgrpo.flow import Condition, Origin, Trajectory, task_conditions


class TestCondition:
    def test_one_hot(self):
        condition = Condition.one_hot(2, 4)
        assert condition.id == 2
        assert condition.embedding == (0.0, 0.0, 1.0, 0.0)
        assert condition.as_array().tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_one_hot_out_of_range_raises(self):
        with pytest.raises(
            ValueError, match=re.escape("Condition id must lie in [0, 3]. Received: 4")
        ):
            Condition.one_hot(4, 4)

    @pytest.mark.parametrize("condition_id", [-1, 1.5, True])
    def test_invalid_id_raises(self, condition_id):
        with pytest.raises(ValueError, match="Condition id must be a non-negative"):
            Condition(condition_id, (1.0,))

    def test_task_conditions_are_ordered(self):
        assert [c.id for c in task_conditions(5)] == [0, 1, 2, 3, 4]

    def test_equality_is_by_value(self):
        assert Condition.one_hot(1, 3) == Condition(1, (0, 1, 0))


class TestOrigin:
    def test_members(self):
        assert Origin.members() == ["on_policy", "buffer"]

    def test_parse(self):
        assert Origin.parse("buffer") is Origin.BUFFER


class TestTrajectory:
    @pytest.fixture(scope="class")
    def condition(self):
        return Condition.one_hot(0, 2)

    def _trajectory(self, condition, **kwargs):
        settings = dict(
            condition=condition,
            latents=np.arange(10, dtype=float).reshape(5, 2),
            step_logprobs=[-1.0, -2.0, 0.5, 3.0],
        )
        settings.update(kwargs)
        return Trajectory(**settings)

    def test_bookkeeping(self, condition):
        trajectory = self._trajectory(condition)
        assert trajectory.num_steps == 4
        assert trajectory.latent_dim == 2
        assert trajectory.sample.tolist() == [8.0, 9.0]
        assert trajectory.total_logprob == 0.5
        assert trajectory.reward is None

    def test_arrays_are_read_only(self, condition):
        trajectory = self._trajectory(condition)
        with pytest.raises(ValueError):
            trajectory.step_logprobs[0] = 0.0

    def test_mismatched_lengths_raise(self, condition):
        with pytest.raises(ValueError, match="A trajectory of L steps needs L \\+ 1"):
            self._trajectory(condition, step_logprobs=[0.0, 0.0])

    def test_non_finite_logprob_raises(self, condition):
        with pytest.raises(ValueError, match="must be finite"):
            self._trajectory(condition, step_logprobs=[0.0, np.nan, 0.0, 0.0])

    def test_non_finite_reward_raises(self, condition):
        with pytest.raises(ValueError, match="Reward must be finite"):
            self._trajectory(condition, reward=np.inf)

    def test_truncation_step_out_of_range_raises(self, condition):
        with pytest.raises(ValueError, match=re.escape("must lie in [0, 4]")):
            self._trajectory(condition, truncation_step=5)

    def test_on_policy_mask_is_empty(self, condition):
        trajectory = self._trajectory(condition)
        assert trajectory.off_policy_mask.tolist() == [False] * 4
        assert trajectory.off_policy_steps == 0
        assert trajectory.generated_steps == 4

    @pytest.mark.parametrize(
        "truncation_step, expected",
        [
            (None, [True, True, True, True]),
            (0, [True, True, True, True]),
            (1, [True, True, True, False]),
            (3, [True, False, False, False]),
            (4, [False, False, False, False]),
        ],
    )
    def test_buffer_mask_covers_steps_above_truncation(
        self, condition, truncation_step, expected
    ):
        trajectory = self._trajectory(
            condition, origin="buffer", truncation_step=truncation_step
        )
        assert trajectory.origin is Origin.BUFFER
        assert trajectory.off_policy_mask.tolist() == expected
        assert trajectory.generated_steps == expected.count(False)

    def test_with_reward_copies(self, condition):
        trajectory = self._trajectory(condition)
        rewarded = trajectory.with_reward(0.75)
        assert rewarded.reward == 0.75
        assert trajectory.reward is None
        assert np.array_equal(rewarded.step_logprobs, trajectory.step_logprobs)

    def test_to_dict(self, condition):
        data = self._trajectory(condition, reward=0.5).to_dict()
        assert data["condition_id"] == 0
        assert data["origin"] == "on_policy"
        assert data["reward"] == 0.5
        assert data["total_logprob"] == 0.5
        assert len(data["latents"]) == 5
