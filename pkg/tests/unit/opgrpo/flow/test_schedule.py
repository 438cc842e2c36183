import re

import numpy as np
import pytest

from opgrpo.flow import NoiseSchedule


class TestNoiseSchedule:
    @pytest.fixture(scope="class")
    def schedule(self):
        return NoiseSchedule(num_steps=10, sigma_max=1.0, sigma_min=0.01)

    def test_defaults(self):
        assert NoiseSchedule() == NoiseSchedule(10, 1.0, 0.01)

    def test_grid_endpoints(self, schedule):
        assert schedule.sigma(0) == 0.01
        assert schedule.sigma(10) == 1.0
        assert len(schedule.sigmas) == 11
        assert np.all(np.diff(schedule.sigmas) > 0)

    def test_decrements_are_uniform(self, schedule):
        deltas = [schedule.delta(step) for step in range(1, 11)]
        assert deltas == pytest.approx([0.099] * 10)

    def test_variance_uses_the_lower_level(self, schedule):
        assert schedule.step_variance(1) == pytest.approx(0.01**2 * 0.099)
        expected = schedule.sigma(9) ** 2 * 0.099
        assert schedule.step_variance(10) == pytest.approx(expected)
        assert schedule.step_std(10) ** 2 == pytest.approx(schedule.step_variance(10))

    def test_final_step_is_the_sharpest(self, schedule):
        variances = [schedule.step_variance(step) for step in range(1, 11)]
        assert np.argmin(variances) == 0
        assert np.all(np.diff(variances) > 0)

    @pytest.mark.parametrize("step", [0, 11, -1])
    def test_step_out_of_range_raises(self, schedule, step):
        with pytest.raises(
            IndexError,
            match=re.escape(f"Step index must lie in [1, 10]. Received: {step}"),
        ):
            schedule.delta(step)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"num_steps": 0},
            {"num_steps": 2.5},
            {"sigma_min": 0.0},
            {"sigma_min": 1.0, "sigma_max": 1.0},
            {"sigma_min": 2.0, "sigma_max": 1.0},
        ],
    )
    def test_invalid_schedules_raise(self, kwargs):
        with pytest.raises(ValueError):
            NoiseSchedule(**kwargs)

    def test_grid_is_read_only(self, schedule):
        with pytest.raises(ValueError):
            schedule.sigmas[0] = 0.5

    def test_to_dict(self, schedule):
        assert schedule.to_dict() == {
            "num_steps": 10,
            "sigma_max": 1.0,
            "sigma_min": 0.01,
        }
