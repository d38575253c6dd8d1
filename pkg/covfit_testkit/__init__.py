from itertools import combinations
import inspect
import json
import math
from typing import List, Sequence, Tuple

import numpy as np
import pytest
from scipy import linalg as sla

from covfit_core.criterion import get_criterion
from covfit_core.divergence import (
    GaussianDensity,
    ce_divergence,
    field_factor,
    stationarity_residuals,
)
from covfit_core.estimator import (
    divergence_direct_form,
    divergence_mean_ratio_form,
    fit,
    ml_equivalence_check,
    model_divergence,
    model_from_decomposition,
    order_scan,
)
from covfit_core.files import FitResultFile
from covfit_core.linalg import (
    GenEigenDecomposition,
    HermitianMatrix,
    cholesky_sqrt,
    generalized_eig,
    hermitian_eig,
)
from covfit_core.model import Criterion, StructuredModel, assemble_model
from covfit_core.simulate import Scene, generate, population_covariance
from covfit_core.utils import dumps_json

CRITERIA = (Criterion.CE, Criterion.RCE)


###########
# Oracles #
###########
def random_matrix(rng: np.random.Generator, shape, is_real: bool) -> np.ndarray:
    if is_real:
        return rng.standard_normal(shape)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def random_hermitian(rng: np.random.Generator, n: int, is_real: bool) -> HermitianMatrix:
    g = random_matrix(rng, (n, n), is_real)
    return HermitianMatrix.from_array(0.5 * (g + g.conj().T), is_real=is_real)


def random_pd_matrix(
    rng: np.random.Generator,
    n: int,
    is_real: bool,
    ridge: float = 0.5,
) -> HermitianMatrix:
    g = random_matrix(rng, (n, n), is_real)
    return HermitianMatrix.from_array(g @ g.conj().T / n + ridge * np.eye(n), is_real=is_real)


def random_scene(
    rng: np.random.Generator,
    n: int,
    rank: int,
    is_real: bool,
    seed: int = 0,
) -> Scene:
    return Scene.create(
        directions=random_matrix(rng, (n, rank), is_real),
        powers=rng.uniform(0.5, 5.0, size=rank),
        sigma=float(rng.uniform(0.5, 1.5)),
        noise=random_pd_matrix(rng, n, is_real),
        is_real=is_real,
        seed=seed,
        n_sensors=n,
    )


def _log_density(x: np.ndarray, density: GaussianDensity) -> np.ndarray:
    # Columns of x are samples.
    factor = cholesky_sqrt(density.cov)
    centered = x - np.asarray(density.mean)[:, None]
    quadratic = np.sum(np.abs(factor.solve(centered))**2, axis=0)
    n = density.n
    if density.is_real:
        return -0.5 * (n * math.log(2.0 * math.pi) + factor.log_det() + quadratic)
    return -(n * math.log(math.pi) + factor.log_det() + quadratic)


def monte_carlo_divergence(
    p1: GaussianDensity,
    p2: GaussianDensity,
    n_samples: int = 200_000,
    seed: int = 0,
) -> Tuple[float, float]:
    '''Sample estimate of E_p1[log p1 - log p2]. Returns (estimate, standard error).
    '''
    rng = np.random.default_rng(seed)
    is_real = p1.is_real and p2.is_real
    z = random_matrix(rng, (p1.n, n_samples), is_real)
    x = cholesky_sqrt(p1.cov).apply(z) + np.asarray(p1.mean)[:, None]
    log_ratio = _log_density(x, p1) - _log_density(x, p2)
    return float(np.mean(log_ratio)), float(np.std(log_ratio) / math.sqrt(n_samples))


def sigma2_grid_search(
    r: HermitianMatrix,
    w: HermitianMatrix,
    rank: int,
    criterion: Criterion,
    points: int = 200,
) -> Tuple[float, float]:
    '''Minimize the divergence over a log-spaced sigma2 grid with U fixed.

    Signal powers follow lambda_i - sigma2 so the grid stays inside the family.
    Returns (best sigma2, log grid step).
    '''
    decomposition = generalized_eig(r, w)
    lambdas = decomposition.lambdas
    upper = 1.5 * lambdas[rank] if rank == 0 else min(1.5 * lambdas[rank], lambdas[rank - 1])
    grid = np.geomspace(0.5 * lambdas[-1], upper, points)
    fitting_criterion = get_criterion(criterion)
    p = GaussianDensity.zero_mean(r)

    values = []
    for sigma2 in grid:
        model = assemble_model(
            u=decomposition.vectors[:, :rank],
            signal_powers=lambdas[:rank] - sigma2,
            sigma2=float(sigma2),
            noise=w,
            criterion=criterion,
            is_real=decomposition.is_real,
        )
        q_theta = GaussianDensity.zero_mean(model.r_theta)
        values.append(fitting_criterion.model_divergence(p, q_theta).value)

    best = int(np.argmin(values))
    return float(grid[best]), math.log(grid[1] / grid[0])


def subset_models(
    decomposition: GenEigenDecomposition,
    noise: HermitianMatrix,
    rank: int,
    criterion: Criterion,
) -> List[Tuple[Sequence[int], StructuredModel]]:
    return [(
        indices,
        model_from_decomposition(decomposition, noise, rank, criterion, indices=indices),
    ) for indices in combinations(range(decomposition.n), rank)]


def finite_difference_inverse_derivative(
    matrix: HermitianMatrix,
    direction: HermitianMatrix,
    step: float = 1e-6,
) -> np.ndarray:
    '''Central difference of t -> (A + t D)^{-1} at t = 0.
    '''
    plus = np.linalg.inv(matrix.entries + step * direction.entries)
    minus = np.linalg.inv(matrix.entries - step * direction.entries)
    return (plus - minus) / (2.0 * step)


def relative_error(actual, expected) -> float:
    actual = np.asarray(actual)
    expected = np.asarray(expected)
    return float(np.linalg.norm(actual - expected) / max(np.linalg.norm(expected), 1e-300))


################
# Shared tests #
################
def test_exact_recovery(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 1)
    for _ in range(50):
        n = int(rng.integers(3, 9))
        rank = int(rng.integers(0, n))
        scene = random_scene(rng, n, rank, field_kit.is_real)
        r = population_covariance(scene)
        for criterion in CRITERIA:
            report = fit(r, scene.noise, rank, criterion)
            assert report.divergence.value <= 1e-9
            assert abs(report.model.sigma2 - scene.sigma**2) / scene.sigma**2 <= 1e-8
            assert report.model.is_real == field_kit.is_real


def test_fit_divergence_matches_densities(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 2)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        rank = int(rng.integers(0, n))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        for criterion in CRITERIA:
            report = fit(r, w, rank, criterion)
            recomputed = model_divergence(r, report.model)
            assert abs(report.divergence.value - recomputed.value) <= 1e-9
            assert report.divergence.xi == field_factor(field_kit.is_real)


def test_model_invariants(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 3)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        rank = int(rng.integers(0, n))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        model = fit(r, w, rank, Criterion.RCE).model

        u = model.u
        rebuilt = (u * model.signal_powers) @ u.conj().T + model.sigma2 * w.entries
        assert relative_error(model.r_theta.entries, rebuilt) <= 1e-10

        gram = u.conj().T @ np.linalg.solve(w.entries, u)
        np.testing.assert_allclose(gram, np.eye(rank), atol=1e-9)

        if model.unique:
            assert np.all(model.signal_powers > 0.0)


def test_noise_variance_matches_grid_search(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 4)
    for _ in range(20):
        n = int(rng.integers(2, 5))
        rank = int(rng.integers(0, n))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        for criterion in CRITERIA:
            sigma2 = fit(r, w, rank, criterion).model.sigma2
            best, log_step = sigma2_grid_search(r, w, rank, criterion)
            assert abs(math.log(best) - math.log(sigma2)) <= log_step + 1e-12


def test_divergence_forms_agree(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 5)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        rank = int(rng.integers(0, n))
        lambdas = np.sort(rng.uniform(0.1, 10.0, size=n))[::-1]
        for criterion in CRITERIA:
            direct = divergence_direct_form(lambdas, rank, criterion, field_kit.is_real)
            mean_ratio = divergence_mean_ratio_form(lambdas, rank, criterion, field_kit.is_real)
            assert abs(direct.value - mean_ratio.value) <= 1e-10


def test_ce_matches_monte_carlo(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 6)
    for idx in range(5):
        n = 3
        p = GaussianDensity(
            mean=random_matrix(rng, n, field_kit.is_real) * 0.3,
            cov=random_pd_matrix(rng, n, field_kit.is_real, ridge=1.0),
        )
        q = GaussianDensity.zero_mean(random_pd_matrix(rng, n, field_kit.is_real, ridge=1.0))
        exact = ce_divergence(q, p).value
        estimate, stderr = monte_carlo_divergence(q, p, seed=field_kit.seed_base + idx)
        assert abs(estimate - exact) <= 4.0 * stderr + 1e-3


def test_eigen_swap_optimality(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 7)
    for n in range(2, 7):
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        decomposition = generalized_eig(r, w)
        lambdas = decomposition.lambdas
        for rank in range(n):
            for criterion in CRITERIA:
                models = subset_models(decomposition, w, rank, criterion)
                values = {
                    tuple(indices): model_divergence(r, model).value for indices, model in models
                }
                best = values[tuple(range(rank))]
                strict = rank > 0 and lambdas[rank - 1] - lambdas[rank] > 1e-6 * lambdas[0]
                for indices, value in values.items():
                    if indices == tuple(range(rank)):
                        continue
                    assert value >= best - 1e-10
                    if strict:
                        assert value > best


def test_order_curve_monotone(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 8)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        for criterion in CRITERIA:
            curve = [value for _, value in order_scan(r, w, criterion).curve]
            assert len(curve) == n
            for value, next_value in zip(curve, curve[1:]):
                assert value >= next_value - 1e-12
            assert abs(curve[-1]) <= 1e-12


def test_stationarity(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 9)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        rank = int(rng.integers(0, n))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        scale = float(np.max(np.abs(np.linalg.inv(r.entries))))
        for criterion in CRITERIA:
            model = fit(r, w, rank, criterion).model
            assert stationarity_residuals(r, model).max() <= 1e-8 * scale

            perturbed = model.with_sigma2(1.1 * model.sigma2)
            assert stationarity_residuals(r, perturbed).sigma2 > 1e-6 * scale


def test_inverse_derivative_finite_difference(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 10)
    for _ in range(5):
        n = int(rng.integers(2, 6))
        matrix = random_pd_matrix(rng, n, field_kit.is_real)
        direction = random_hermitian(rng, n, field_kit.is_real)
        factor = cholesky_sqrt(matrix)
        inverse = factor.inverse_apply(np.eye(n))
        analytic = -inverse @ direction.entries @ inverse
        numeric = finite_difference_inverse_derivative(matrix, direction)
        assert relative_error(numeric, analytic) <= 1e-4


def test_spectrum_preservation(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 11)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        rank = int(rng.integers(0, n))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        report = fit(r, w, rank, Criterion.CE)
        model = report.model

        fitted = generalized_eig(model.r_theta, w).lambdas
        np.testing.assert_allclose(fitted[:rank], report.lambdas[:rank], rtol=1e-9)
        np.testing.assert_allclose(fitted[rank:], model.sigma2, rtol=1e-9)

        # R_theta W^{-1} u_i = lambda_i u_i for the retained pairs.
        for idx in range(rank):
            u_i = model.u[:, idx]
            lhs = model.r_theta.entries @ np.linalg.solve(w.entries, u_i)
            assert relative_error(lhs, report.lambdas[idx] * u_i) <= 1e-9


def test_subspace_invariance(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 12)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        rank = int(rng.integers(1, n))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        model = fit(r, w, rank, Criterion.RCE).model
        r_inv_u = np.linalg.solve(r.entries, model.u)
        r_theta_inv_u = np.linalg.solve(model.r_theta.entries, model.u)
        assert relative_error(r_theta_inv_u, r_inv_u) <= 1e-8


def test_ce_rce_agreement(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 13)
    for _ in range(10):
        n = int(rng.integers(2, 7))
        rank = int(rng.integers(0, n))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        w = random_pd_matrix(rng, n, field_kit.is_real)
        ce_model = fit(r, w, rank, Criterion.CE).model
        rce_model = fit(r, w, rank, Criterion.RCE).model
        np.testing.assert_array_equal(ce_model.u, rce_model.u)
        assert ce_model.sigma2 <= rce_model.sigma2 * (1.0 + 1e-12)


def test_music_special_case(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 14)
    for _ in range(10):
        n = int(rng.integers(2, 9))
        r = random_pd_matrix(rng, n, field_kit.is_real)
        identity = HermitianMatrix.identity(n, is_real=field_kit.is_real)
        generalized = generalized_eig(r, identity).lambdas
        ordinary, _ = hermitian_eig(r)
        reference = np.sort(sla.eigvalsh(r.entries))[::-1]
        scale = float(np.max(np.abs(reference)))
        assert np.max(np.abs(generalized - ordinary)) <= 1e-12 * scale
        assert np.max(np.abs(generalized - reference)) <= 1e-12 * scale


def test_ml_equivalence(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 15)
    for seed in range(10):
        scene = random_scene(rng, 4, 1, field_kit.is_real, seed=seed)
        snapshots = generate(scene, 64)
        report = ml_equivalence_check(snapshots, scene.noise, 1, n_candidates=100, seed=seed)
        assert report.n_candidates >= 100
        assert report.attains_maximum


def test_fit_result_round_trip(field_kit):
    rng = np.random.default_rng(field_kit.seed_base + 16)
    n = 4
    r = random_pd_matrix(rng, n, field_kit.is_real)
    w = random_pd_matrix(rng, n, field_kit.is_real)
    report = fit(r, w, 2, Criterion.CE)
    scan = order_scan(r, w, Criterion.CE, snapshot_count=50)

    text = dumps_json(FitResultFile.from_report(report, scan).to_struct())
    loaded = FitResultFile.parse_obj(json.loads(text))
    model = loaded.to_model()

    assert loaded.rank == 2
    assert loaded.is_real == field_kit.is_real
    assert loaded.selected_rank == scan.selected_rank
    assert relative_error(model.r_theta.entries, report.model.r_theta.entries) <= 1e-12
    assert model.r_theta.is_real == field_kit.is_real


class FieldTestKit:
    is_real: bool = True
    seed_base: int = 0

    @classmethod
    def pytest_injection(cls):
        _caller_frame = inspect.currentframe().f_back

        def inject_to_caller(func):
            caller_globals = _caller_frame.f_globals
            caller_globals[func.__name__] = func
            return func

        @inject_to_caller
        @pytest.fixture(scope='session')
        def field_kit():
            yield cls

        inject_to_caller(test_exact_recovery)
        inject_to_caller(test_fit_divergence_matches_densities)
        inject_to_caller(test_model_invariants)
        inject_to_caller(test_noise_variance_matches_grid_search)
        inject_to_caller(test_divergence_forms_agree)
        inject_to_caller(test_ce_matches_monte_carlo)
        inject_to_caller(test_eigen_swap_optimality)
        inject_to_caller(test_order_curve_monotone)
        inject_to_caller(test_stationarity)
        inject_to_caller(test_inverse_derivative_finite_difference)
        inject_to_caller(test_spectrum_preservation)
        inject_to_caller(test_subspace_invariance)
        inject_to_caller(test_ce_rce_agreement)
        inject_to_caller(test_music_special_case)
        inject_to_caller(test_ml_equivalence)
        inject_to_caller(test_fit_result_round_trip)
