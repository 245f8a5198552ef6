"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

import math

import pytest

from digflow.enums import ResidualLoss
from digflow.errors import VerificationError
from digflow.verify import (
    CHECK_NAMES,
    CheckReport,
    VerifyConfig,
    check_bracketing,
    check_concentration,
    check_contraction,
    check_gated_descent,
    check_residual_improvement,
    format_table,
    run_all_checks,
)


def test_gated_descent():
    report = check_gated_descent(200, seed=1)

    assert report.passed
    assert report.trials == 200
    assert report.worst_margin >= -1e-10


def test_bracketing():
    report = check_bracketing(2000, seed=2)

    assert report.passed
    assert report.worst_margin >= -1e-12


def test_bracketing_counts_violations():
    report = check_bracketing(200, seed=0, tol=-1.0)

    assert report.violations == 200


@pytest.mark.parametrize("loss", list(ResidualLoss))
def test_residual_improvement(loss):
    report = check_residual_improvement(trials=20, seed=3, loss=loss)

    assert report.passed
    assert report.parameters["alpha0_min"] > 0
    assert report.parameters["lambda_max_median"] > 0


def test_residual_improvement_reports_reach():
    report = check_residual_improvement(trials=10, seed=5, loss=ResidualLoss.flow, curvature_draws=8)

    assert report.parameters["curvature_draws"] == 8
    assert 0 < report.parameters["max_reach"] < math.inf


@pytest.mark.parametrize("loss", list(ResidualLoss))
def test_residual_improvement_reports_underestimated_smoothness(loss):
    report = check_residual_improvement((1.0,), trials=5, seed=6, loss=loss, smoothness_scale=1e-4)

    assert not report.passed
    assert report.violations > 0
    assert report.worst_margin < 0


def test_residual_improvement_rejects_scale():
    with pytest.raises(VerificationError):
        check_residual_improvement(trials=1, smoothness_scale=0.0)


def test_contraction():
    report = check_contraction(10, seed=4)

    assert report.passed
    assert report.parameters["uniqueness_spread"] <= 1e-8


def test_concentration_slope():
    report = check_concentration((8, 32, 128, 512), repeats=100, seed=5)

    assert report.passed
    assert -0.65 <= report.parameters["slope"] <= -0.35
    assert report.parameters["stddevs"][0] > report.parameters["stddevs"][-1]


def test_concentration_identical_measures():
    report = check_concentration((8, 32), repeats=10, seed=6, identical=True)

    assert report.passed
    assert report.parameters["stddevs"] == [0.0, 0.0]
    assert report.parameters["slope"] is None


def test_run_all_checks_small():
    cfg = VerifyConfig(
        descent_trials=50,
        bracketing_trials=200,
        residual_trials=5,
        contraction_trials=5,
        concentration_repeats=100,
        residual_loss=ResidualLoss.quadratic,
    )
    reports = run_all_checks(cfg, seed=7)

    assert [r.name for r in reports] == list(CHECK_NAMES)
    assert all(r.passed for r in reports)

    table = format_table(reports).splitlines()

    assert len(table) == 2 + len(CHECK_NAMES)
    assert all(line.endswith("pass") for line in table[2:])


def test_run_selected_checks():
    reports = run_all_checks(VerifyConfig(bracketing_trials=10, checks=("bracketing",)))

    assert [r.name for r in reports] == ["bracketing"]


@pytest.mark.parametrize(
    "kwargs",
    [dict(checks=("nope",)), dict(projections=(8,)), dict(lambda_fractions=(0.0, 0.5))],
)
def test_config_rejects(kwargs):
    with pytest.raises(VerificationError):
        VerifyConfig(**kwargs)


def test_failed_report_formats_as_fail():
    report = CheckReport("bracketing", 10, 2, -0.5)

    assert not report.passed
    assert format_table([report]).splitlines()[-1].endswith("FAIL")
    assert report.to_dict()["passed"] is False


def test_report_equality_ignores_wall_time():
    assert CheckReport("x", 1, 0, 0.1, wall_time=1.0) == CheckReport("x", 1, 0, 0.1, wall_time=2.0)
