import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from duriano import evalsuite as E
from duriano.pitch import PitchContour

voiced = arrays(np.float64, st.integers(5, 60), elements=st.floats(80, 800))


def test_pearson_affine_and_negation():
    x = np.random.default_rng(0).uniform(100, 400, 200)
    assert abs(E.pearson(x, 2 * x + 3) - 1.0) < 1e-12
    assert abs(E.pearson(x, -x) + 1.0) < 1e-12


def test_pearson_voiced_in_both_only():
    x = np.array([100.0, 0.0, 200.0, 300.0, 150.0])
    y = np.array([1.0, 5.0, 2.0, 3.0, 0.0])
    assert E.pearson(x, y) == pytest.approx(1.0, abs=1e-12)


def test_pearson_degenerate():
    with pytest.raises(E.EvalError, match="degenerate contour"):
        E.pearson(np.full(10, 220.0), np.arange(1.0, 11.0))
    with pytest.raises(E.EvalError, match="degenerate contour"):
        E.pearson(np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 3.0]))
    with pytest.raises(E.EvalError):
        E.pearson(np.ones(3), np.ones(4))


@given(voiced, st.floats(0.1, 10), st.floats(-50, 50))
def test_pearson_positive_affine_invariance(x, a, b):
    if np.ptp(x) < 1e-3:
        return
    y = np.sqrt(x) + np.arange(len(x))
    assert E.pearson(a * x + b + 1e3, y) == pytest.approx(E.pearson(x, y), abs=1e-9)


def test_resample_examples():
    x = np.array([110.0, 220.0, 0.0, 330.0])
    np.testing.assert_array_equal(E.resample_contour(x, 4), x)
    np.testing.assert_allclose(E.resample_contour([100.0, 200.0], 3), [100, 150, 200])
    np.testing.assert_allclose(E.resample_contour(np.full(7, 250.0), 19), 250.0)
    with pytest.raises(E.EvalError):
        E.resample_contour(x, 1)


def test_resample_keeps_unvoiced_gaps():
    x = np.array([200.0] * 10 + [0.0] * 10 + [300.0] * 10)
    y = E.resample_contour(x, 15)
    assert np.all(y[:4] == 200.0) and np.all(y[6:9] == 0.0) and np.all(y[11:] == 300.0)
    # no blending toward zero at the voicing boundary
    assert set(np.unique(y)) <= {0.0, 200.0, 300.0}


def test_normalize_examples():
    np.testing.assert_allclose(E.normalize_mean_one([100.0, 300.0]), [0.5, 1.5])
    np.testing.assert_array_equal(E.normalize_mean_one(np.full(5, 440.0)), 1.0)
    np.testing.assert_allclose(E.normalize_mean_one([0.0, 100.0, 0.0, 300.0]), [0.5, 1.5])
    with pytest.raises(E.EvalError):
        E.normalize_mean_one(np.zeros(4))


@given(voiced)
def test_normalized_mean_is_one(x):
    assert abs(E.normalize_mean_one(x).mean() - 1.0) < 1e-12
    fit = E.fit_gaussian(E.normalize_mean_one(x))
    assert abs(fit.mu - 1.0) < 1e-9 and fit.sigma >= 0


def test_fit_gaussian_examples():
    assert E.fit_gaussian(np.ones(10)) == E.GaussianFit(1.0, 0.0)
    with pytest.raises(E.EvalError):
        E.fit_gaussian([1.0])


@pytest.mark.parametrize("n,tol", [(1_000, 0.03), (10_000, 0.01), (100_000, 0.005)])
def test_fit_gaussian_consistency(n, tol):
    draws = np.random.default_rng(n).normal(1.0, 0.2, n)
    assert abs(E.fit_gaussian(draws).sigma - 0.2) < tol


def test_report_identical_systems():
    x = np.random.default_rng(0).uniform(100, 300, 50)
    report = E.eval_report({"original": x, "score": x.copy()})
    np.testing.assert_allclose(report.matrix, 1.0)


@given(st.lists(voiced, min_size=2, max_size=4))
def test_report_symmetric_unit_diagonal(contours):
    report = E.eval_report({f"s{i}": c for i, c in enumerate(contours)})
    m = report.matrix
    np.testing.assert_array_equal(np.diag(m), 1.0)
    np.testing.assert_array_equal(m, m.T)


def test_report_resamples_to_shortest():
    rng = np.random.default_rng(0)
    report = E.eval_report({"original": rng.uniform(100, 200, 80), "score": rng.uniform(100, 200, 50),
                            "f0_based": PitchContour(rng.uniform(100, 200, 65), 0.01)})
    assert report.matrix.shape == (3, 3)
    assert report.labels == ["original", "score", "f0_based"]


def test_report_degenerate_pair():
    pair = {"a": np.full(20, 200.0), "b": np.full(20, 300.0)}
    report = E.eval_report(pair)
    assert np.isnan(report.matrix[0, 1]) and report.fits["a"].sigma == 0.0
    with pytest.raises(E.EvalError):
        E.eval_report(pair, strict=True)
    with pytest.raises(E.EvalError):
        E.eval_report({"a": np.ones(4)})


def test_tsv_layout_round_trip():
    # three-system layout fixture
    labels = list(E.SYSTEMS)
    matrix = np.array([[1.0, 0.1276, 0.0700], [0.1276, 1.0, -0.0240], [0.0700, -0.0240, 1.0]])
    fits = {"original": E.GaussianFit(1.0, 0.1967), "score": E.GaussianFit(1.0, 0.1971),
            "f0_based": E.GaussianFit(1.0, 0.1766)}
    text = E.EvalReport(labels, matrix, fits).to_tsv()
    lines = text.splitlines()
    assert lines[0] == "\toriginal\tscore\tf0_based"
    assert lines[1] == "original\t1.0000\t0.1276\t0.0700"
    assert lines[4] == "" and lines[5] == "system\tmu\tsigma"
    assert lines[8] == "f0_based\t1.0000\t0.1766"
    back = E.read_report(text)
    assert back.labels == labels and back.fits == fits
    np.testing.assert_array_equal(back.matrix, matrix)
