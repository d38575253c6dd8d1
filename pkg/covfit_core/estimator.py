from dataclasses import dataclass
from itertools import combinations
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from covfit_core.criterion import get_criterion
from covfit_core.divergence import GaussianDensity, field_factor
from covfit_core.linalg import (
    GenEigenDecomposition,
    HermitianMatrix,
    check_same_dimension,
    cholesky_sqrt,
    generalized_eig,
)
from covfit_core.model import (
    Criterion,
    DivergenceValue,
    FitReport,
    StructuredModel,
    assemble_model,
)
from covfit_core.simulate import SnapshotSet, SplitMix64

# lambda_P must exceed lambda_{P+1} by this fraction of lambda_1 for a unique fit.
UNIQUE_RTOL = 1e-12
MONOTONE_TOLERANCE = 1e-12


class RankTooLarge(ValueError):
    pass


class EmptyTail(ValueError):
    pass


class SingularSampleCovariance(ValueError):
    pass


class OrderCurveNotMonotone(RuntimeError):
    pass


def _check_tail(tail) -> np.ndarray:
    tail = np.asarray(tail, dtype=np.float64)
    if tail.size == 0:
        raise EmptyTail('No noise eigenvalues left (rank equals dimension).')
    if np.any(tail <= 0.0):
        raise ValueError(f'Eigenvalues must be positive, got {tail}.')
    return tail


def _check_rank(rank: int, n: int) -> None:
    if rank < 0:
        raise ValueError(f'rank={rank} must be non-negative.')
    if rank >= n:
        raise RankTooLarge(f'rank={rank} must be smaller than the dimension n={n}.')


def noise_variance(tail, criterion) -> float:
    return get_criterion(criterion).noise_variance(_check_tail(tail))


def divergence_direct_form(lambdas, rank: int, criterion, is_real: bool) -> DivergenceValue:
    '''xi * sum of log(lambda_i / sigma2) (CE) or log(sigma2 / lambda_i) (RCE) over the tail.
    '''
    lambdas = np.asarray(lambdas, dtype=np.float64)
    _check_rank(rank, lambdas.size)
    fitting_criterion = get_criterion(criterion)
    tail = _check_tail(lambdas[rank:])
    sigma2 = fitting_criterion.noise_variance(tail)
    xi = field_factor(is_real)
    value = xi * float(np.sum(fitting_criterion.log_ratio_terms(tail, sigma2)))
    return DivergenceValue(value=max(value, 0.0), xi=xi)


def divergence_mean_ratio_form(lambdas, rank: int, criterion, is_real: bool) -> DivergenceValue:
    '''xi (N - P) log(arithmetic mean / geometric mean) of the tail, inverted for CE.
    '''
    lambdas = np.asarray(lambdas, dtype=np.float64)
    _check_rank(rank, lambdas.size)
    tail = _check_tail(lambdas[rank:])
    beta = get_criterion(criterion).mean_ratio_terms(tail)
    xi = field_factor(is_real)
    log_avg = math.log(float(np.mean(beta)))
    log_geo = float(np.mean(np.log(beta)))
    value = xi * tail.size * (log_avg - log_geo)
    return DivergenceValue(value=max(value, 0.0), xi=xi)


def model_from_decomposition(
    decomposition: GenEigenDecomposition,
    noise: HermitianMatrix,
    rank: int,
    criterion,
    indices: Optional[Sequence[int]] = None,
) -> StructuredModel:
    '''Build R_theta from the eigenpairs in `indices` (default: the top `rank`).
    '''
    criterion = Criterion.parse(criterion)
    lambdas = decomposition.lambdas
    n = decomposition.n
    _check_rank(rank, n)

    if indices is None:
        indices = list(range(rank))
    indices = list(indices)
    if len(indices) != rank:
        raise ValueError(f'Expect {rank} indices, got {indices}.')
    complement = [idx for idx in range(n) if idx not in indices]

    sigma2 = get_criterion(criterion).noise_variance(_check_tail(lambdas[complement]))
    signal_powers = lambdas[indices] - sigma2

    clamped = bool(np.any(signal_powers < 0.0))
    if clamped:
        logging.warning(
            f'Signal powers {signal_powers} fall below zero for indices={indices}, clamped.'
        )
        signal_powers = np.maximum(signal_powers, 0.0)

    unique = rank == 0 or lambdas[rank - 1] > lambdas[rank] + UNIQUE_RTOL * lambdas[0]

    return assemble_model(
        u=decomposition.vectors[:, indices],
        signal_powers=signal_powers,
        sigma2=sigma2,
        noise=noise,
        criterion=criterion,
        unique=bool(unique),
        clamped=clamped,
        is_real=decomposition.is_real,
    )


def fit(r: HermitianMatrix, w: HermitianMatrix, rank: int, criterion) -> FitReport:
    check_same_dimension(r, w)
    _check_rank(rank, r.n)
    criterion = Criterion.parse(criterion)

    decomposition = generalized_eig(r, w)
    model = model_from_decomposition(decomposition, w, rank, criterion)
    if not model.unique:
        logging.warning(
            f'lambda_P == lambda_(P+1) at rank={rank}, the fitted covariance is not unique.'
        )

    divergence = divergence_direct_form(decomposition.lambdas, rank, criterion, model.is_real)
    logging.info(
        f'fit criterion={criterion.value} rank={rank} sigma2={model.sigma2} '
        f'divergence={divergence.value}'
    )
    return FitReport(model=model, divergence=divergence, lambdas=decomposition.lambdas)


def model_divergence(r: HermitianMatrix, model: StructuredModel) -> DivergenceValue:
    '''Recompute the fitted divergence from the two densities.
    '''
    return get_criterion(model.criterion).model_divergence(
        GaussianDensity.zero_mean(r),
        GaussianDensity.zero_mean(model.r_theta),
    )


@dataclass(frozen=True)
class OrderScan:
    curve: List[Tuple[int, float]]
    penalized: Optional[List[Tuple[int, float]]] = None
    selected_rank: Optional[int] = None
    penalty: str = 'mdl'


PENALTIES = ('mdl', 'aic')


def order_penalty(rank: int, n: int, snapshot_count: int, penalty: str = 'mdl') -> float:
    '''Free-parameter penalty of a rank-P fit, P (2N - P) real parameters.
    '''
    free_parameters = rank * (2 * n - rank)
    if penalty == 'mdl':
        return 0.5 * free_parameters * math.log(snapshot_count)
    if penalty == 'aic':
        return float(free_parameters)
    raise ValueError(f'Unknown penalty={penalty}, expect one of {PENALTIES}.')


def order_scan(
    r: HermitianMatrix,
    w: HermitianMatrix,
    criterion,
    max_rank: Optional[int] = None,
    snapshot_count: Optional[int] = None,
    penalty: str = 'mdl',
) -> OrderScan:
    check_same_dimension(r, w)
    n = r.n
    if max_rank is None:
        max_rank = n - 1
    _check_rank(max_rank, n)
    if penalty not in PENALTIES:
        raise ValueError(f'Unknown penalty={penalty}, expect one of {PENALTIES}.')

    decomposition = generalized_eig(r, w)
    is_real = decomposition.is_real
    curve = [
        (rank, divergence_mean_ratio_form(decomposition.lambdas, rank, criterion, is_real).value)
        for rank in range(max_rank + 1)
    ]

    tolerance = MONOTONE_TOLERANCE * max(1.0, curve[0][1])
    for (rank, value), (_, next_value) in zip(curve, curve[1:]):
        if value < next_value - tolerance:
            raise OrderCurveNotMonotone(
                f'H_{rank}={value} < H_{rank + 1}={next_value}, eigenvalues not sorted?'
            )

    if snapshot_count is None:
        return OrderScan(curve=curve, penalty=penalty)

    if snapshot_count < 1:
        raise ValueError(f'snapshot_count={snapshot_count} must be positive.')
    xi = field_factor(is_real)
    penalized = [
        (rank, snapshot_count * value / xi + order_penalty(rank, n, snapshot_count, penalty))
        for rank, value in curve
    ]
    selected_rank = min(penalized, key=lambda item: (item[1], item[0]))[0]
    logging.info(f'order_scan penalty={penalty} selected rank={selected_rank}')
    return OrderScan(
        curve=curve,
        penalized=penalized,
        selected_rank=selected_rank,
        penalty=penalty,
    )


def gaussian_log_likelihood(snapshots: np.ndarray, cov: HermitianMatrix) -> float:
    '''Sum over rows x_k of log N(x_k; 0, cov).
    '''
    snapshots = np.atleast_2d(snapshots)
    if snapshots.shape[1] != cov.n:
        raise ValueError(f'snapshot length={snapshots.shape[1]} does not match n={cov.n}.')
    k = snapshots.shape[0]
    n = cov.n
    factor = cholesky_sqrt(cov)
    quadratic = float(np.sum(np.abs(factor.solve(snapshots.T))**2))
    if cov.is_real:
        return -0.5 * (k * n * math.log(2.0 * math.pi) + k * factor.log_det() + quadratic)
    return -(k * n * math.log(math.pi) + k * factor.log_det() + quadratic)


def fit_snapshots(snapshots: SnapshotSet, w: HermitianMatrix, rank: int, criterion) -> FitReport:
    return fit(snapshots.sample_cov, w, rank, criterion)


@dataclass(frozen=True)
class MlEquivalenceReport:
    model: StructuredModel
    log_likelihood: float
    candidate_log_likelihoods: List[float]

    @property
    def n_candidates(self) -> int:
        return len(self.candidate_log_likelihoods)

    @property
    def attains_maximum(self) -> bool:
        return all(value <= self.log_likelihood for value in self.candidate_log_likelihoods)


def _perturbed_models(
    decomposition: GenEigenDecomposition,
    model: StructuredModel,
    n_candidates: int,
    seed: int,
) -> List[StructuredModel]:
    rng = SplitMix64(seed)
    n = decomposition.n
    rank = model.rank
    candidates = []

    # Other eigenvector subsets, each with its own tail mean.
    if rank > 0:
        for indices in combinations(range(n), rank):
            if list(indices) != list(range(rank)):
                candidates.append(
                    model_from_decomposition(
                        decomposition,
                        model.noise,
                        rank,
                        Criterion.RCE,
                        indices=indices,
                    )
                )

    while len(candidates) < n_candidates:
        # log-uniform scaling in [1/2, 2] of sigma2, and of the signal powers every other draw.
        sigma2 = model.sigma2 * 2.0**(2.0 * rng.next_uniform() - 1.0)
        signal_powers = model.signal_powers
        if rng.next_uniform() < 0.5:
            signal_powers = np.array(
                [power * 2.0**(2.0 * rng.next_uniform() - 1.0) for power in signal_powers]
            )
        candidates.append(
            assemble_model(
                u=model.u,
                signal_powers=signal_powers,
                sigma2=sigma2,
                noise=model.noise,
                criterion=Criterion.RCE,
                is_real=model.is_real,
            )
        )
    return candidates


def ml_equivalence_check(
    snapshots: SnapshotSet,
    w: HermitianMatrix,
    rank: int,
    n_candidates: int = 100,
    seed: int = 0,
) -> MlEquivalenceReport:
    '''Fit RCE to the sample covariance and compare its likelihood with perturbed models.
    '''
    data = np.asarray(snapshots.snapshots)
    k, n = data.shape
    if k < n:
        raise SingularSampleCovariance(f'K={k} snapshots cannot give a PD covariance for n={n}.')

    decomposition = generalized_eig(snapshots.sample_cov, w)
    model = model_from_decomposition(decomposition, w, rank, Criterion.RCE)

    log_likelihood = gaussian_log_likelihood(data, model.r_theta)
    candidate_log_likelihoods = [
        gaussian_log_likelihood(data, candidate.r_theta)
        for candidate in _perturbed_models(decomposition, model, n_candidates, seed)
    ]
    return MlEquivalenceReport(
        model=model,
        log_likelihood=log_likelihood,
        candidate_log_likelihoods=candidate_log_likelihoods,
    )
