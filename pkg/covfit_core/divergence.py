from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from covfit_core.linalg import (
    DimensionMismatch,
    HermitianMatrix,
    check_same_dimension,
    cholesky_sqrt,
    generalized_eig,
)
from covfit_core.model import Criterion, DivergenceValue, StructuredModel, check_model_matches

# Small negative values from rounding are reported as zero.
NEGATIVE_TOLERANCE = 1e-10


def field_factor(is_real: bool) -> float:
    return 0.5 if is_real else 1.0


@dataclass(frozen=True)
class GaussianDensity:
    mean: np.ndarray
    cov: HermitianMatrix

    def __post_init__(self):
        mean = np.asarray(self.mean)
        if mean.shape != (self.cov.n,):
            raise DimensionMismatch(
                f'mean shape={mean.shape} does not match covariance n={self.cov.n}.'
            )

    @classmethod
    def zero_mean(cls, cov: HermitianMatrix) -> 'GaussianDensity':
        return cls(mean=np.zeros(cov.n, dtype=cov.entries.dtype), cov=cov)

    @property
    def n(self) -> int:
        return self.cov.n

    @property
    def is_real(self) -> bool:
        return self.cov.is_real and not (np.iscomplexobj(self.mean) and np.any(self.mean.imag))


def _make_value(value: float, xi: float) -> DivergenceValue:
    if -NEGATIVE_TOLERANCE <= value < 0.0:
        value = 0.0
    return DivergenceValue(value=float(value), xi=xi)


def kullback_divergence(p1: GaussianDensity, p2: GaussianDensity) -> DivergenceValue:
    '''H(p1, p2) = integral p1 log(p1 / p2), closed form for Gaussians.

    Evaluated through the Cholesky factor of p2.cov; log-determinants come from its pivots.
    '''
    check_same_dimension(p1.cov, p2.cov)
    n = p1.n
    xi = field_factor(p1.is_real and p2.is_real)

    factor2 = cholesky_sqrt(p2.cov)
    factor1 = cholesky_sqrt(p1.cov)

    # tr(S2^{-1} S1) = ||L2^{-1} L1||_F^2.
    ratio = factor2.solve(factor1.lower)
    trace = float(np.sum(np.abs(ratio)**2))
    log_det = factor1.log_det() - factor2.log_det()

    diff = np.asarray(p1.mean) - np.asarray(p2.mean)
    mahalanobis = float(np.sum(np.abs(factor2.solve(diff))**2))

    return _make_value(xi * (trace - n - log_det + mahalanobis), xi)


def spectral_divergence(p1: GaussianDensity, p2: GaussianDensity) -> DivergenceValue:
    '''Same as kullback_divergence, from the eigenvalues of S2^{-1} S1.
    '''
    check_same_dimension(p1.cov, p2.cov)
    xi = field_factor(p1.is_real and p2.is_real)
    lambdas = generalized_eig(p1.cov, p2.cov).lambdas

    factor2 = cholesky_sqrt(p2.cov)
    diff = np.asarray(p1.mean) - np.asarray(p2.mean)
    mahalanobis = float(np.sum(np.abs(factor2.solve(diff))**2))

    value = float(np.sum(lambdas - 1.0 - np.log(lambdas))) + mahalanobis
    return _make_value(xi * value, xi)


def ce_divergence(q: GaussianDensity, p: GaussianDensity) -> DivergenceValue:
    return kullback_divergence(q, p)


def rce_divergence(p: GaussianDensity, q: GaussianDensity) -> DivergenceValue:
    return kullback_divergence(p, q)


def _inverse(matrix: HermitianMatrix) -> np.ndarray:
    factor = cholesky_sqrt(matrix)
    inverse = factor.inverse_apply(np.eye(matrix.n, dtype=matrix.entries.dtype))
    return 0.5 * (inverse + inverse.conj().T)


def stationarity_factor(
    r: HermitianMatrix,
    r_theta: HermitianMatrix,
    criterion: Criterion,
) -> np.ndarray:
    '''Matrix whose projections onto dR_theta/dtheta vanish at a stationary point.
    '''
    r_theta_inv = _inverse(r_theta)
    if criterion == Criterion.CE:
        return _inverse(r) - r_theta_inv
    return r_theta_inv @ r.entries @ r_theta_inv - r_theta_inv


@dataclass(frozen=True)
class StationarityResiduals:
    sigma2: float
    signal: float

    def as_dict(self) -> Dict[str, float]:
        return {'sigma2': self.sigma2, 'signal': self.signal}

    def max(self) -> float:
        return max(self.sigma2, self.signal)


def stationarity_residuals(
    r: HermitianMatrix,
    model: StructuredModel,
    criterion: Optional[Criterion] = None,
) -> StationarityResiduals:
    '''Max absolute residual per parameter block.

    sigma2 block: |tr(F W)|. signal block: max |F V| with V = U diag(signal_powers)^{1/2}.
    '''
    check_model_matches(r, model)
    criterion = criterion or model.criterion
    factor = stationarity_factor(r, model.r_theta, criterion)

    sigma2_residual = abs(np.trace(factor @ model.noise.entries))
    signal_residual = 0.0
    if model.rank > 0:
        v = model.u * np.sqrt(np.maximum(model.signal_powers, 0.0))
        signal_residual = float(np.max(np.abs(factor @ v)))

    return StationarityResiduals(sigma2=float(sigma2_residual), signal=signal_residual)
