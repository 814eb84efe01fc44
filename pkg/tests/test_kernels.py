import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfgp.errors import GridNotSorted, NonPositiveTheta
from lfgp.kernels import (
    KernelSpec,
    LengthScalePrior,
    gram_matrix,
    kernel_eval,
    log_prior_density,
)

FAMILIES = ["squared_exponential", "matern52"]


@pytest.mark.parametrize("family", FAMILIES)
def test_unit_variance(family):
    spec = KernelSpec(family, 3.7)
    for s in (-2.0, 0.0, 11.5):
        assert kernel_eval(spec, s, s) == 1.0


def test_se_closed_form():
    assert kernel_eval(KernelSpec("squared_exponential", 1.0), 0.0, 1.0) == pytest.approx(math.exp(-0.5))
    assert kernel_eval(KernelSpec("squared_exponential", 2.0), 0.0, 2.0) == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_matern_closed_form():
    d, th = 1.3, 0.7
    x = math.sqrt(5) * d / th
    expected = (1 + x + x * x / 3) * math.exp(-x)
    assert kernel_eval(KernelSpec("matern52", th), 0.0, d) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("family", FAMILIES)
def test_monotone_decay(family):
    spec = KernelSpec(family, 2.0)
    vals = [kernel_eval(spec, 0.0, d) for d in np.linspace(0, 40, 200)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-6
    assert all(0 < v <= 1 for v in vals)


def test_gram_single_point():
    np.testing.assert_array_equal(gram_matrix(KernelSpec(), [3.0]), [[1.0 + 1e-8]])


def test_gram_matches_formula():
    grid = np.array([0.0, 0.5, 1.7, 2.0, 4.0])
    d = grid[:, None] - grid[None, :]
    expected = np.exp(-d * d / 2.0) + 1e-8 * np.eye(5)
    np.testing.assert_allclose(gram_matrix(KernelSpec("squared_exponential", 1.0), grid), expected, atol=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_gram_toeplitz_and_shift_invariant(family):
    spec = KernelSpec(family, 4.0)
    g = gram_matrix(spec, np.arange(12.0) * 2.5)
    for k in range(12):
        diag = np.diagonal(g, k)
        np.testing.assert_allclose(diag, diag[0], rtol=1e-14)
    np.testing.assert_allclose(gram_matrix(spec, np.arange(12.0) * 2.5 + 17.0), g, rtol=1e-13)


def test_gram_unsorted():
    with pytest.raises(GridNotSorted):
        gram_matrix(KernelSpec(), [0.0, 2.0, 1.0])
    with pytest.raises(GridNotSorted):
        gram_matrix(KernelSpec(), [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(
    family=st.sampled_from(FAMILIES),
    theta=st.floats(0.1, 50.0),
    seed=st.integers(0, 2**32 - 1),
    m=st.integers(1, 40),
)
def test_gram_psd(family, theta, seed, m):
    grid = np.sort(np.random.default_rng(seed).uniform(0, 100, size=m))
    if np.any(np.diff(grid) <= 0):
        return
    g = gram_matrix(KernelSpec(family, theta), grid, jitter=0.0)
    assert np.linalg.eigvalsh(g).min() >= -1e-10


def test_log_prior_examples():
    assert log_prior_density(LengthScalePrior(1.0, 1.0), 1.0) == pytest.approx(-1.0)
    assert log_prior_density(LengthScalePrior(2.0, 2.0), 1.0) == pytest.approx(math.log(4.0) - 2.0)
    with pytest.raises(NonPositiveTheta):
        log_prior_density(LengthScalePrior(), 0.0)


def test_log_prior_mode():
    prior = LengthScalePrior(shape=10.0, rate=0.5)
    grid = np.linspace(1.0, 40.0, 39001)
    vals = [log_prior_density(prior, t) for t in grid]
    assert grid[int(np.argmax(vals))] == pytest.approx((10.0 - 1.0) / 0.5, abs=1e-3)
    assert LengthScalePrior.from_mode(100.0).mode == pytest.approx(100.0)


def test_log_prior_against_scipy():
    from scipy import stats

    prior = LengthScalePrior(3.5, 0.2)
    for t in (0.3, 5.0, 40.0):
        assert log_prior_density(prior, t) == pytest.approx(stats.gamma(3.5, scale=1 / 0.2).logpdf(t), rel=1e-12)
