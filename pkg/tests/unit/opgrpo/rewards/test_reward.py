import math

import numpy as np
import pytest

from opgrpo.flow import Condition
from opgrpo.rewards import (
    RewardDimensionError,
    RewardKind,
    RewardSpec,
    default_centers,
    reward,
    reward_batch,
)


@pytest.fixture(scope="module")
def condition():
    return Condition.one_hot(2, 8)


class TestDefaultCenters:
    def test_first_centre_on_the_x_axis(self):
        centers = default_centers(4, radius=2.0)
        assert centers[0] == (2.0, 0.0)
        assert centers[1] == pytest.approx((0.0, 2.0))

    def test_centres_lie_on_the_circle(self):
        norms = np.linalg.norm(np.array(default_centers()), axis=1)
        assert norms == pytest.approx([1.5] * 8)


class TestRewardSpec:
    def test_defaults(self):
        spec = RewardSpec()
        assert spec.kind is RewardKind.MODE_PROXIMITY
        assert spec.dim == 2
        assert len(spec.centers) == 8

    def test_kind_is_parsed(self):
        assert RewardSpec(kind="ring_distance").kind is RewardKind.RING_DISTANCE

    def test_condition_wraps_around_the_centres(self):
        spec = RewardSpec(centers=((0.0, 0.0), (1.0, 1.0)))
        assert spec.center(Condition.one_hot(3, 4)).tolist() == [1.0, 1.0]

    @pytest.mark.parametrize(
        "kwargs, message",
        [
            ({"centers": ()}, "At least one mode centre is required."),
            ({"centers": ((0.0, 0.0), (1.0,))}, "All mode centres must share"),
            ({"bandwidth": 0.0}, "bandwidth must be positive. Received: 0.0"),
            ({"radius": -1.0}, "radius must be positive. Received: -1.0"),
        ],
    )
    def test_invalid_specs_raise(self, kwargs, message):
        with pytest.raises(ValueError, match=message):
            RewardSpec(**kwargs)

    def test_to_dict(self):
        data = RewardSpec(centers=((1.0, 2.0),)).to_dict()
        assert data == {
            "kind": "mode_proximity",
            "centers": [[1.0, 2.0]],
            "bandwidth": 0.75,
            "radius": 1.0,
        }


class TestModeProximity:
    def test_peak_at_the_centre(self, condition):
        spec = RewardSpec()
        assert reward(spec.center(condition), condition, spec) == 1.0

    def test_one_bandwidth_away(self, condition):
        spec = RewardSpec()
        point = spec.center(condition) + np.array([0.0, spec.bandwidth])
        assert reward(point, condition, spec) == pytest.approx(math.exp(-1))

    def test_other_condition_centre_scores_low(self, condition):
        spec = RewardSpec()
        far = spec.center(Condition.one_hot(6, 8))
        assert reward(far, condition, spec) < 1e-3


class TestMultiModeCoverage:
    def test_any_centre_scores_one(self, condition):
        spec = RewardSpec(kind="multi_mode_coverage")
        for other in range(8):
            point = spec.center(Condition.one_hot(other, 8))
            assert reward(point, condition, spec) == pytest.approx(1.0)


class TestRingDistance:
    @pytest.mark.parametrize("point", [(1.0, 0.0), (0.0, -1.0), (0.6, 0.8)])
    def test_on_ring_points(self, condition, point):
        spec = RewardSpec(kind="ring_distance", radius=1.0)
        assert reward(point, condition, spec) == pytest.approx(1.0)

    def test_origin_is_one_radius_away(self, condition):
        spec = RewardSpec(kind="ring_distance", radius=1.0, bandwidth=1.0)
        assert reward((0.0, 0.0), condition, spec) == pytest.approx(math.exp(-1))


class TestRewardBatch:
    @pytest.mark.parametrize("kind", RewardKind.members())
    def test_rewards_are_bounded(self, kind):
        samples = np.random.default_rng(0).normal(scale=3.0, size=(200, 2))
        values = reward_batch(samples, np.arange(200) % 8, RewardSpec(kind=kind))
        assert values.shape == (200,)
        assert np.all((values >= 0.0) & (values <= 1.0))

    def test_batch_matches_single_calls(self):
        spec = RewardSpec()
        samples = np.random.default_rng(1).normal(size=(5, 2))
        ids = [0, 3, 5, 7, 2]
        expected = [
            reward(sample, Condition.one_hot(cid, 8), spec)
            for sample, cid in zip(samples, ids)
        ]
        assert reward_batch(samples, ids, spec).tolist() == expected

    def test_dimension_mismatch_raises(self, condition):
        with pytest.raises(
            RewardDimensionError,
            match=RewardDimensionError(3, 2).args[0],
        ):
            reward((0.0, 0.0, 0.0), condition, RewardSpec())

    def test_batch_dimension_mismatch_raises(self):
        with pytest.raises(RewardDimensionError, match="Sample dimension 1"):
            reward_batch(np.zeros((4, 1)), [0, 1, 2, 3], RewardSpec())
