import logging
import math

import numpy as np
import pytest
from scipy import stats

from covfit_core.estimator import (
    EmptyTail,
    RankTooLarge,
    SingularSampleCovariance,
    divergence_direct_form,
    divergence_mean_ratio_form,
    fit,
    fit_snapshots,
    gaussian_log_likelihood,
    ml_equivalence_check,
    model_divergence,
    model_from_decomposition,
    noise_variance,
    order_penalty,
    order_scan,
)
from covfit_core.linalg import HermitianMatrix, generalized_eig
from covfit_core.model import Criterion
from covfit_core.simulate import Scene, generate, ula_steering
from covfit_testkit import random_pd_matrix

H_DIAG_421 = 0.5 * math.log(9.0 / 8.0)


def _diag(*values):
    return HermitianMatrix.from_array(np.diag(values))


def test_noise_variance():
    for criterion in (Criterion.CE, Criterion.RCE):
        assert noise_variance([3.0, 3.0, 3.0], criterion) == pytest.approx(3.0, rel=1e-15)
        assert noise_variance([5.0], criterion) == pytest.approx(5.0, rel=1e-15)

    assert noise_variance([2.0, 1.0], Criterion.CE) == pytest.approx(4.0 / 3.0, rel=1e-15)
    assert noise_variance([2.0, 1.0], 'rce') == pytest.approx(1.5, rel=1e-15)

    with pytest.raises(EmptyTail):
        noise_variance([], Criterion.CE)
    with pytest.raises(ValueError):
        noise_variance([1.0, 0.0], Criterion.RCE)


def test_fit_diagonal_ce():
    report = fit(_diag(4.0, 2.0, 1.0), HermitianMatrix.identity(3), 1, Criterion.CE)
    model = report.model
    assert model.sigma2 == pytest.approx(4.0 / 3.0, rel=1e-14)
    np.testing.assert_allclose(model.r_theta.entries, np.diag([4.0, 4.0 / 3.0, 4.0 / 3.0]),
                               atol=1e-14)
    np.testing.assert_allclose(model.signal_powers, [8.0 / 3.0], rtol=1e-14)
    assert report.divergence.value == pytest.approx(H_DIAG_421, abs=1e-14)
    assert report.divergence.value == pytest.approx(0.05889, abs=1e-5)
    assert model.unique
    assert not model.clamped
    np.testing.assert_array_equal(report.lambdas, [4.0, 2.0, 1.0])


def test_fit_diagonal_rce():
    report = fit(_diag(4.0, 2.0, 1.0), HermitianMatrix.identity(3), 1, 'rce')
    model = report.model
    assert model.criterion == Criterion.RCE
    assert model.sigma2 == pytest.approx(1.5, rel=1e-14)
    np.testing.assert_allclose(model.r_theta.entries, np.diag([4.0, 1.5, 1.5]), atol=1e-14)
    assert report.divergence.value == pytest.approx(H_DIAG_421, abs=1e-14)
    assert model_divergence(_diag(4.0, 2.0, 1.0), model).value == pytest.approx(
        H_DIAG_421,
        abs=1e-12,
    )


def test_fit_observed_equals_noise():
    rng = np.random.default_rng(29)
    for is_real in (True, False):
        w = random_pd_matrix(rng, 4, is_real)
        for rank in range(4):
            for criterion in (Criterion.CE, Criterion.RCE):
                report = fit(w, w, rank, criterion)
                assert report.model.sigma2 == pytest.approx(1.0, abs=1e-12)
                np.testing.assert_allclose(report.model.r_theta.entries, w.entries, atol=1e-11)
                assert report.divergence.value <= 1e-12


def test_fit_rank_errors():
    r = _diag(4.0, 2.0, 1.0)
    with pytest.raises(RankTooLarge):
        fit(r, HermitianMatrix.identity(3), 3, Criterion.CE)
    with pytest.raises(ValueError):
        fit(r, HermitianMatrix.identity(3), -1, Criterion.CE)
    with pytest.raises(ValueError):
        fit(r, HermitianMatrix.identity(3), 1, 'ml')


def test_unique_flag(caplog):
    r = _diag(4.0, 2.0, 2.0)
    w = HermitianMatrix.identity(3)
    assert fit(r, w, 0, Criterion.RCE).model.unique
    assert fit(r, w, 1, Criterion.RCE).model.unique

    with caplog.at_level(logging.WARNING):
        model = fit(r, w, 2, Criterion.RCE).model
    assert not model.unique
    assert 'not unique' in caplog.text

    curve = [value for _, value in order_scan(r, w, Criterion.RCE).curve]
    assert curve[0] >= curve[1] >= curve[2]


def test_mean_ratio_form_examples():
    lambdas = [4.0, 2.0, 1.0]
    for criterion in (Criterion.CE, Criterion.RCE):
        value = divergence_mean_ratio_form(lambdas, 1, criterion, is_real=True)
        assert value.value == pytest.approx(H_DIAG_421, abs=1e-14)
        assert value.xi == 0.5

        flat = divergence_mean_ratio_form([4.0, 2.0, 2.0], 1, criterion, is_real=True)
        assert flat.value == pytest.approx(0.0, abs=1e-15)

    assert divergence_mean_ratio_form(lambdas, 1, Criterion.RCE, is_real=True).value == \
        pytest.approx(0.5 * 2.0 * math.log(1.5 / math.sqrt(2.0)), abs=1e-14)
    assert divergence_mean_ratio_form(lambdas, 1, Criterion.CE, is_real=True).value == \
        pytest.approx(0.5 * 2.0 * math.log(0.75 / math.sqrt(0.5)), abs=1e-14)

    complex_value = divergence_direct_form(lambdas, 1, Criterion.CE, is_real=False)
    assert complex_value.value == pytest.approx(2.0 * H_DIAG_421, abs=1e-14)

    with pytest.raises(RankTooLarge):
        divergence_mean_ratio_form(lambdas, 3, Criterion.CE, is_real=True)


def test_order_scan_diagonal():
    r = _diag(4.0, 2.0, 1.0)
    w = HermitianMatrix.identity(3)
    scan = order_scan(r, w, Criterion.RCE)
    assert [rank for rank, _ in scan.curve] == [0, 1, 2]
    values = [value for _, value in scan.curve]
    assert values[0] == pytest.approx(1.5 * math.log(7.0 / 6.0), abs=1e-14)
    assert values[1] == pytest.approx(H_DIAG_421, abs=1e-14)
    assert values[2] == pytest.approx(0.0, abs=1e-15)
    assert values[0] > values[1] > values[2]
    assert scan.penalized is None and scan.selected_rank is None

    # Brute-force oracle: divergence of the fitted model at every rank.
    for rank, value in scan.curve:
        model = fit(r, w, rank, Criterion.RCE).model
        assert model_divergence(r, model).value == pytest.approx(value, abs=1e-12)


def test_order_scan_penalized_selection():
    r = _diag(4.0, 2.0, 1.0)
    w = HermitianMatrix.identity(3)
    assert order_scan(r, w, Criterion.RCE, snapshot_count=10).selected_rank == 0
    assert order_scan(r, w, Criterion.RCE, snapshot_count=1000).selected_rank == 2
    assert order_scan(r, w, Criterion.RCE, snapshot_count=10, penalty='aic').selected_rank == 0

    scan = order_scan(r, w, Criterion.RCE, max_rank=1, snapshot_count=1000)
    assert len(scan.curve) == 2
    assert scan.selected_rank == 1
    penalized = dict(scan.penalized)
    assert penalized[1] == pytest.approx(
        1000 * H_DIAG_421 / 0.5 + 0.5 * 5 * math.log(1000),
        rel=1e-12,
    )

    with pytest.raises(ValueError):
        order_scan(r, w, Criterion.RCE, snapshot_count=10, penalty='bic')
    with pytest.raises(RankTooLarge):
        order_scan(r, w, Criterion.RCE, max_rank=3)


def test_order_scan_flat():
    rng = np.random.default_rng(31)
    w = random_pd_matrix(rng, 4, False)
    scan = order_scan(w, w, Criterion.CE, snapshot_count=100)
    for _, value in scan.curve:
        assert value == pytest.approx(0.0, abs=1e-12)
    assert scan.selected_rank == 0


def test_order_penalty():
    assert order_penalty(0, 4, 100) == 0.0
    assert order_penalty(1, 4, 100) == pytest.approx(0.5 * 7 * math.log(100))
    assert order_penalty(2, 4, 100, penalty='aic') == 12.0
    with pytest.raises(ValueError):
        order_penalty(1, 4, 100, penalty='bic')


def test_clamped_subset_model(caplog):
    decomposition = generalized_eig(_diag(4.0, 2.0, 1.0), HermitianMatrix.identity(3))
    with caplog.at_level(logging.WARNING):
        model = model_from_decomposition(
            decomposition,
            HermitianMatrix.identity(3),
            1,
            Criterion.RCE,
            indices=[2],
        )
    assert model.clamped
    assert model.sigma2 == pytest.approx(3.0)
    np.testing.assert_array_equal(model.signal_powers, [0.0])
    assert 'clamped' in caplog.text


def test_gaussian_log_likelihood_real():
    rng = np.random.default_rng(37)
    cov = random_pd_matrix(rng, 3, True)
    x = rng.standard_normal((5, 3))
    expected = float(np.sum(stats.multivariate_normal(np.zeros(3), cov.entries).logpdf(x)))
    assert gaussian_log_likelihood(x, cov) == pytest.approx(expected, rel=1e-12)


def test_gaussian_log_likelihood_complex():
    x = np.array([[1.0 + 1.0j, 0.5], [0.0, -1.0j]])
    cov = HermitianMatrix.identity(2, is_real=False)
    expected = -(2 * 2 * math.log(math.pi) + (2.0 + 0.25 + 1.0))
    assert gaussian_log_likelihood(x, cov) == pytest.approx(expected, rel=1e-14)

    scaled = cov.scaled(2.0)
    expected = -(2 * 2 * math.log(math.pi) + 2 * 2 * math.log(2.0) + 3.25 / 2.0)
    assert gaussian_log_likelihood(x, scaled) == pytest.approx(expected, rel=1e-14)


def _one_source_scene(seed):
    steering = ula_steering(4, 0.5, math.radians(20.0))
    return Scene.create(directions=steering.w0[:, None], powers=[2.0], sigma=1.0, seed=seed)


def test_ml_equivalence_one_source():
    snapshots = generate(_one_source_scene(7), 64)
    w = HermitianMatrix.identity(4, is_real=False)
    report = ml_equivalence_check(snapshots, w, 1)
    assert report.n_candidates >= 100
    assert report.attains_maximum

    doubled = report.model.with_sigma2(2.0 * report.model.sigma2)
    assert gaussian_log_likelihood(snapshots.snapshots, doubled.r_theta) <= report.log_likelihood


def test_ml_equivalence_zero_signal():
    scene = Scene.create(directions=np.zeros((4, 0)), powers=[], sigma=1.0, seed=3, n_sensors=4)
    snapshots = generate(scene, 64)
    report = ml_equivalence_check(snapshots, scene.noise, 0)
    assert report.attains_maximum

    sigma2 = report.model.sigma2
    for candidate in np.geomspace(0.25 * sigma2, 4.0 * sigma2, 101):
        value = gaussian_log_likelihood(snapshots.snapshots, scene.noise.scaled(candidate))
        assert value <= report.log_likelihood + 1e-9 * abs(report.log_likelihood)


def test_ml_equivalence_needs_enough_snapshots():
    snapshots = generate(_one_source_scene(7), 3)
    with pytest.raises(SingularSampleCovariance):
        ml_equivalence_check(snapshots, HermitianMatrix.identity(4, is_real=False), 1)


def test_fit_snapshots():
    snapshots = generate(_one_source_scene(11), 32)
    w = HermitianMatrix.identity(4, is_real=False)
    report = fit_snapshots(snapshots, w, 1, Criterion.RCE)
    expected = fit(snapshots.sample_cov, w, 1, Criterion.RCE)
    assert report.model.sigma2 == expected.model.sigma2
    np.testing.assert_array_equal(report.lambdas, expected.lambdas)
