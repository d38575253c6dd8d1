import math

import numpy as np
import pytest

from covfit_core.divergence import (
    GaussianDensity,
    ce_divergence,
    field_factor,
    kullback_divergence,
    rce_divergence,
    spectral_divergence,
    stationarity_residuals,
)
from covfit_core.estimator import fit
from covfit_core.linalg import DimensionMismatch, HermitianMatrix, NotPositiveDefinite
from covfit_core.model import Criterion
from covfit_testkit import monte_carlo_divergence, random_matrix, random_pd_matrix


def _density(diagonal, mean=None):
    cov = HermitianMatrix.from_array(np.diag(diagonal))
    if mean is None:
        return GaussianDensity.zero_mean(cov)
    return GaussianDensity(mean=np.asarray(mean, dtype=np.float64), cov=cov)


def test_field_factor():
    assert field_factor(True) == 0.5
    assert field_factor(False) == 1.0


def test_ce_divergence_examples():
    p = _density([1.0, 1.0])
    assert ce_divergence(p, p).value == 0.0

    q = _density([2.0, 2.0])
    value = ce_divergence(q, p)
    assert value.xi == 0.5
    assert value.value == pytest.approx(0.5 * (4.0 - 2.0 - math.log(4.0)), abs=1e-14)
    assert value.value == pytest.approx(0.30685, abs=1e-5)

    shifted = _density([1.0, 1.0], mean=[1.0, 0.0])
    assert ce_divergence(shifted, p).value == pytest.approx(0.5, abs=1e-14)


def test_rce_divergence_examples():
    q = _density([1.0, 1.0])
    assert rce_divergence(q, q).value == 0.0
    assert rce_divergence(_density([2.0, 2.0]), q).value == pytest.approx(0.30685, abs=1e-5)
    assert rce_divergence(_density([4.0, 1.0]), q).value == pytest.approx(0.80685, abs=1e-5)


def test_examples_match_monte_carlo():
    p = _density([1.0, 1.0])
    for q in (_density([2.0, 2.0]), _density([1.0, 1.0], mean=[1.0, 0.0])):
        exact = ce_divergence(q, p).value
        estimate, stderr = monte_carlo_divergence(q, p, seed=5)
        assert abs(estimate - exact) <= 4.0 * stderr + 1e-3


def test_complex_divergence_has_unit_field_factor():
    p = GaussianDensity.zero_mean(HermitianMatrix.from_array(np.array([[2.0, 1j], [-1j, 2.0]])))
    q = GaussianDensity.zero_mean(HermitianMatrix.identity(2, is_real=False))
    value = ce_divergence(q, p)
    assert value.xi == 1.0
    # Eigenvalues of p.cov are 3 and 1.
    expected = (1.0 / 3.0 + 1.0) - 2.0 + math.log(3.0)
    assert value.value == pytest.approx(expected, abs=1e-13)


def test_spectral_route_agrees():
    rng = np.random.default_rng(17)
    for is_real in (True, False):
        for n in range(1, 7):
            p1 = GaussianDensity(
                mean=random_matrix(rng, n, is_real),
                cov=random_pd_matrix(rng, n, is_real),
            )
            p2 = GaussianDensity.zero_mean(random_pd_matrix(rng, n, is_real))
            assert abs(
                kullback_divergence(p1, p2).value - spectral_divergence(p1, p2).value
            ) <= 1e-10


def test_nonnegative_on_random_pairs():
    rng = np.random.default_rng(19)
    for is_real in (True, False):
        for _ in range(20):
            n = int(rng.integers(1, 7))
            p = GaussianDensity.zero_mean(random_pd_matrix(rng, n, is_real))
            q = GaussianDensity.zero_mean(random_pd_matrix(rng, n, is_real))
            assert ce_divergence(q, p).value >= 0.0
            assert rce_divergence(p, q).value >= 0.0


def test_ce_convex_along_covariance_line():
    rng = np.random.default_rng(23)
    for is_real in (True, False):
        for _ in range(10):
            n = int(rng.integers(2, 6))
            p = GaussianDensity.zero_mean(random_pd_matrix(rng, n, is_real))
            cov0 = random_pd_matrix(rng, n, is_real)
            cov1 = random_pd_matrix(rng, n, is_real)

            def divergence_at(t):
                cov = HermitianMatrix.from_array(
                    (1.0 - t) * cov0.entries + t * cov1.entries,
                    is_real=is_real,
                )
                return ce_divergence(GaussianDensity.zero_mean(cov), p).value

            average = 0.5 * (divergence_at(0.0) + divergence_at(1.0))
            assert divergence_at(0.5) <= average + 1e-12


def test_divergence_errors():
    with pytest.raises(DimensionMismatch):
        GaussianDensity(mean=np.zeros(3), cov=HermitianMatrix.identity(2))
    with pytest.raises(DimensionMismatch):
        ce_divergence(_density([1.0, 1.0]), _density([1.0, 1.0, 1.0]))
    with pytest.raises(NotPositiveDefinite):
        rce_divergence(_density([1.0, 1.0]), _density([1.0, 0.0]))


def test_stationarity_at_equality():
    r = HermitianMatrix.from_array(np.diag([4.0, 2.0, 1.0]))
    for criterion in (Criterion.CE, Criterion.RCE):
        model = fit(r, HermitianMatrix.identity(3), 1, criterion).model
        residuals = stationarity_residuals(model.r_theta, model)
        assert residuals.max() <= 1e-12
        assert set(residuals.as_dict()) == {'sigma2', 'signal'}


def test_stationarity_of_fitted_diagonal_model():
    r = HermitianMatrix.from_array(np.diag([4.0, 2.0, 1.0]))
    for criterion in (Criterion.CE, Criterion.RCE):
        model = fit(r, HermitianMatrix.identity(3), 1, criterion).model
        assert stationarity_residuals(r, model).max() <= 1e-12

        perturbed = model.with_sigma2(1.1 * model.sigma2)
        assert stationarity_residuals(r, perturbed).sigma2 > 1e-3
