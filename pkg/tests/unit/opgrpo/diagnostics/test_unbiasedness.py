import math

import pytest

from opgrpo.diagnostics import UnbiasednessReport, is_unbiasedness_check


class TestUnbiasedness:
    @pytest.fixture(scope="class")
    def report(self):
        return is_unbiasedness_check(num_samples=20_000, seed=0)

    def test_weighted_estimate_matches_on_policy_estimate(self, report):
        assert report.within_bound
        assert report.passed

    def test_library_weights_match_density_ratios(self, report):
        assert report.weights_checked == 256
        assert report.weights_match

    def test_on_policy_estimate_is_near_the_analytic_value(self, report):
        assert report.analytic_mean == pytest.approx(0.5)
        assert abs(report.on_policy_mean - report.analytic_mean) < 5 * math.sqrt(
            0.25 / report.num_samples
        )

    def test_report_properties(self):
        report = UnbiasednessReport(
            num_samples=10,
            analytic_mean=0.5,
            on_policy_mean=0.5,
            weighted_mean=0.8,
            standard_error=0.1,
            max_weight_error=1e-6,
            weights_checked=5,
        )
        assert report.difference == pytest.approx(0.3)
        assert not report.within_bound
        assert not report.weights_match
        assert not report.passed

    def test_too_few_samples_raise(self):
        with pytest.raises(ValueError, match="num_samples must be at least 2"):
            is_unbiasedness_check(num_samples=1)

    @pytest.mark.slow
    def test_million_sample_check(self):
        assert is_unbiasedness_check(num_samples=1_000_000, seed=0).passed
