"""Tests for converter module"""

import pytest

from nlkw_lab.core import converter
from nlkw_lab.core.entities import (
    DirectionalReport,
    DirectionalRung,
    ExperimentConfig,
    KWReport,
    KWSummary,
    LadderRung,
    MCEstimate,
    ModeCounts,
    ObjectiveReport,
    OptimizationReport,
    RepresentationReport,
    RunSummary,
    SimulateReport,
)


def est(mean, stderr=0.01, n=1000):
    return MCEstimate(mean=mean, stderr=stderr, n=n)


@pytest.fixture
def config():
    return ExperimentConfig(n_paths=1000, n_steps=64)


class TestFormatEstimate:
    """Tests for format_estimate function"""

    def test_formats_mean_and_stderr(self):
        """Test mean ± s.e. (n) formatting"""
        assert converter.format_estimate(est(1.5, 0.0123, 400)) == "1.5 ± 0.012 (n=400)"

    def test_missing_estimate(self):
        """Test that None renders as n/a"""
        assert converter.format_estimate(None) == "n/a"


class TestConvertSummary:
    """Tests for convert_summary_to_markdown function"""

    def test_contains_main_quantities(self, config):
        """Test that floor, objective and counts appear"""
        summary = RunSummary(
            config=config,
            family="exp",
            lambda_sq=est(1.5),
            objective=est(1.62),
            orthogonality=est(0.001),
            excess=est(0.12),
            mode_counts=ModeCounts(root=90, stationary=10, multi_root=2),
        )
        markdown = converter.convert_summary_to_markdown(summary)
        assert "## Run: family `exp`, payoff `example`" in markdown
        assert "**KW floor E[lambda^2]:** 1.5 ± 0.01 (n=1000)" in markdown
        assert "| root | 90 |" in markdown
        assert "**Root fraction:** 0.9000" in markdown
        assert "**Multi-root tie-breaks:** 2" in markdown
        assert "Stationary nodes above tol_stat" not in markdown
        assert "Representation ladder" not in markdown

    def test_optional_sections(self, config):
        """Test directional, parametric and ladder sections"""
        rung = DirectionalRung(
            eps=0.1, finite_difference=est(0.2), analytic=est(0.21), difference=est(-0.01)
        )
        summary = RunSummary(
            config=config,
            family="exp",
            lambda_sq=est(1.5),
            objective=est(1.62),
            orthogonality=est(0.0),
            excess=est(0.12),
            directional=DirectionalReport(rungs=[rung], agrees=True),
            parametric=OptimizationReport(
                beta=[0.5, -1.25],
                converged=False,
                evaluations=200,
                in_sample_objective=1.7,
                out_of_sample=ObjectiveReport(objective=est(1.71), orthogonality=est(0.0)),
            ),
            representation=RepresentationReport(
                family="exp",
                x=1.0,
                rungs=[LadderRung(n_steps=8, rmse=0.4), LadderRung(n_steps=32, rmse=0.2, ratio=2.0)],
                converged=True,
            ),
        )
        markdown = converter.convert_summary_to_markdown(summary)
        assert "**Agrees:** yes" in markdown
        assert "| 0.1 | 0.2 ± 0.01 (n=1000) | 0.21 ± 0.01 (n=1000) | -0.01 ± 0.01 (n=1000) |" in markdown
        assert "**Truncation at smallest eps:** 0.000e+00" in markdown
        assert "**beta:** [0.5, -1.25]" in markdown
        assert "budget exhausted" in markdown
        assert "| 32 | 2.000e-01 | 2.000 |" in markdown


class TestConvertOtherReports:
    """Tests for simulate and kw reports"""

    def test_simulate_report(self, config):
        """Test moment table and paths file"""
        report = SimulateReport(
            config=config, moments={"mean_w_T": est(0.001)}, paths_file="out/paths.nlkw"
        )
        markdown = converter.convert_simulate_to_markdown(report)
        assert "| mean_w_T | 0.001 ± 0.01 (n=1000) |" in markdown
        assert "**Paths file:** out/paths.nlkw" in markdown

    def test_kw_report(self, config):
        """Test coefficient table and orthogonality list"""
        report = KWReport(
            config=config,
            kw=KWSummary(
                lambda_sq=est(1.5),
                regression_lambda_sq=est(1.51),
                coefficients={"w1": 0.99},
                coefficient_stderr={"w1": 0.02},
            ),
            discrete_lambda_sq=1.5,
            orthogonality={"tanh_w1": est(0.0)},
        )
        markdown = converter.convert_kw_to_markdown(report)
        assert "**Grid closed form:** 1.5" in markdown
        assert "| w1 | 0.99 | 0.02 |" in markdown
        assert "- tanh_w1: 0 ± 0.01 (n=1000)" in markdown
