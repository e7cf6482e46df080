"""Tests for the memory model: fit, categorize, extrapolate, load."""

import logging
from unittest.mock import patch

import numpy as np
import pytest

from clusterfit.core.errors import CategoryError, ConfigurationError, InsufficientDataError, ParseError
from clusterfit.core.memory_model import (
    GIB,
    MemoryCategory,
    MemoryModel,
    MemorySample,
    categorize,
    extrapolate_requirement,
    fit_memory_model,
    load_samples,
)

THRESHOLDS = (0.1, 0.99)


def _samples(xs, ys):
    return [MemorySample(int(x), int(y)) for x, y in zip(xs, ys)]


def test_exact_linear_gigabytes():
    xs = [k * GIB for k in range(1, 6)]
    model = fit_memory_model(_samples(xs, [2 * x for x in xs]), THRESHOLDS)
    assert model.category is MemoryCategory.LINEAR
    assert model.slope == pytest.approx(2.0, rel=1e-12)
    assert model.intercept == pytest.approx(0.0, abs=1.0)
    assert model.r2 == pytest.approx(1.0)


def test_noiseless_linear_recovers_line():
    xs = np.linspace(1e6, 5e6, 7).astype(int)
    ys = 3 * xs + 5_000_000
    model = fit_memory_model(_samples(xs, ys), THRESHOLDS)
    assert model.category is MemoryCategory.LINEAR
    assert model.slope == pytest.approx(3.0, rel=1e-9)
    assert model.intercept == pytest.approx(5_000_000, rel=1e-9)


def test_constant_memory_is_flat():
    xs = [k * GIB for k in range(1, 6)]
    model = fit_memory_model(_samples(xs, [3 * GIB] * 5), THRESHOLDS)
    assert model.category is MemoryCategory.FLAT
    assert model.r2 == 0.0


def test_noisy_points_match_normal_equations():
    rng = np.random.default_rng(7)
    xs = np.sort(rng.integers(1_000_000, 9_000_000, size=5))
    ys = (1.5 * xs + rng.normal(0, 2e6, size=5) + 2e7).astype(int)
    model = fit_memory_model(_samples(xs, ys), THRESHOLDS)

    x = xs.astype(float)
    y = ys.astype(float)
    slope = np.sum((x - x.mean()) * (y - y.mean())) / np.sum((x - x.mean()) ** 2)
    intercept = y.mean() - slope * x.mean()
    fitted = intercept + slope * x
    r2 = 1 - np.sum((y - fitted) ** 2) / np.sum((y - y.mean()) ** 2)

    assert model.slope == pytest.approx(slope, rel=1e-9)
    assert model.intercept == pytest.approx(intercept, rel=1e-9)
    assert model.r2 == pytest.approx(r2, rel=1e-9)
    assert model.category is categorize(model.r2, THRESHOLDS)


def test_pure_noise_mostly_flat():
    rng = np.random.default_rng(0)
    xs = np.arange(1, 61) * 1_000_000
    flat = 0
    for _ in range(1000):
        ys = rng.integers(1_000_000, 100_000_000, size=xs.size)
        if fit_memory_model(_samples(xs, ys), THRESHOLDS).category is MemoryCategory.FLAT:
            flat += 1
    assert flat >= 950


def test_threshold_boundaries():
    assert categorize(0.99, THRESHOLDS) is MemoryCategory.LINEAR
    assert categorize(0.9899, THRESHOLDS) is MemoryCategory.UNCLEAR
    assert categorize(0.1, THRESHOLDS) is MemoryCategory.UNCLEAR
    assert categorize(0.0999, THRESHOLDS) is MemoryCategory.FLAT


def test_fit_is_scale_invariant():
    rng = np.random.default_rng(17)
    for _ in range(20):
        xs = np.sort(rng.integers(1_000, 50_000, size=5))
        ys = (rng.uniform(0, 4) * xs + rng.normal(0, 30_000, size=5) + 200_000).astype(int)
        base = fit_memory_model(_samples(xs, ys), THRESHOLDS)
        for kx, ky in ((10, 1), (1, 7), (1000, 3)):
            scaled = fit_memory_model(_samples(xs * kx, ys * ky), THRESHOLDS)
            assert scaled.r2 == pytest.approx(base.r2, rel=1e-9, abs=1e-12)
            assert scaled.category is base.category
            assert scaled.slope == pytest.approx(base.slope * ky / kx, rel=1e-9)
            assert scaled.intercept == pytest.approx(base.intercept * ky, rel=1e-6, abs=1e-3)


def test_too_few_samples():
    with pytest.raises(InsufficientDataError):
        fit_memory_model(_samples([1, 2], [3, 4]), THRESHOLDS)


def test_identical_input_sizes():
    with pytest.raises(InsufficientDataError):
        fit_memory_model(_samples([5, 5, 5], [1, 2, 3]), THRESHOLDS)


def test_bad_thresholds_rejected():
    xs = [1, 2, 3]
    with pytest.raises(ConfigurationError):
        fit_memory_model(_samples(xs, [2, 4, 6]), (0.9, 0.5))


def test_default_thresholds_come_from_config():
    values = {"memory_model.r2_low": 0.2, "memory_model.r2_high": 0.5}
    with patch("clusterfit.config.get", side_effect=lambda k, d=None: values.get(k, d)):
        # R² of this fit is about 0.6: unclear at 0.1/0.99, linear at 0.2/0.5
        model = fit_memory_model(_samples([1, 2, 3, 4], [1, 3, 2, 4]))
    assert model.thresholds == (0.2, 0.5)
    assert model.category is MemoryCategory.LINEAR


def test_extrapolate_matches_table_magnitude():
    model = MemoryModel(MemoryCategory.LINEAR, r2=1.0, slope=2.0, intercept=0.0)
    req = extrapolate_requirement(model, int(251.5 * GIB))
    assert req.job_gb == pytest.approx(503.0)
    assert req.full_dataset_bytes == int(251.5 * GIB)


def test_extrapolate_intercept_dominated():
    model = MemoryModel(MemoryCategory.LINEAR, r2=1.0, slope=1.0, intercept=5.0 * GIB)
    assert extrapolate_requirement(model, 1).job_gb == pytest.approx(5.0)


def test_extrapolate_random_triples():
    rng = np.random.default_rng(3)
    for _ in range(50):
        slope = rng.uniform(0.1, 10)
        intercept = rng.uniform(0, 50) * GIB
        size = int(rng.integers(1, 10**12))
        model = MemoryModel(MemoryCategory.LINEAR, r2=1.0, slope=slope, intercept=intercept)
        expected = (slope * size + intercept) / GIB
        assert extrapolate_requirement(model, size).job_gb == pytest.approx(expected, rel=1e-12)


def test_extrapolate_negative_is_clamped(caplog):
    model = MemoryModel(MemoryCategory.LINEAR, r2=0.995, slope=1.0, intercept=-10.0 * GIB)
    with caplog.at_level(logging.WARNING, logger="clusterfit.core.memory_model"):
        req = extrapolate_requirement(model, GIB, min_gb=0.5)
    assert req.job_gb == 0.5
    assert "clamping" in caplog.text


@pytest.mark.parametrize("category", [MemoryCategory.FLAT, MemoryCategory.UNCLEAR])
def test_extrapolate_needs_linear(category):
    model = MemoryModel(category, r2=0.5, slope=1.0, intercept=0.0)
    with pytest.raises(CategoryError):
        extrapolate_requirement(model, GIB)


def test_declared_model_cannot_extrapolate():
    with pytest.raises(CategoryError):
        extrapolate_requirement(MemoryModel.declared("linear"), GIB)


def test_model_dict_round_trip():
    model = fit_memory_model(_samples([1, 2, 3, 4], [2, 4, 6, 8]), THRESHOLDS)
    assert MemoryModel.from_dict(model.to_dict()) == model


def test_load_samples(tmp_path):
    path = tmp_path / "samples.csv"
    path.write_text(
        "input_bytes,job_memory_bytes\n"
        "# profiled on a laptop\n"
        "1000, 2000\n"
        "2000;4000\n"
        "\n"
        "3000 6000  # trailing comment\n",
        encoding="utf-8",
    )
    samples = load_samples(path)
    assert samples == [MemorySample(1000, 2000), MemorySample(2000, 4000), MemorySample(3000, 6000)]


def test_load_samples_reports_line(tmp_path):
    path = tmp_path / "samples.csv"
    path.write_text("1000,2000\n2000,abc\n", encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        load_samples(path)
    assert exc.value.line == 2
    assert str(exc.value).startswith("line 2:")
