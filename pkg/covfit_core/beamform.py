from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

from covfit_core.linalg import DimensionMismatch, HermitianMatrix, cholesky_sqrt


class BeamformerKind(Enum):
    CLASSICAL = 'classical'
    MVDR = 'mvdr'


class CovarianceSource(Enum):
    OBSERVED = 'observed'
    STRUCTURED = 'structured'


@dataclass(frozen=True)
class SteeringVector:
    w0: np.ndarray
    label: str = ''

    def __post_init__(self):
        w0 = np.asarray(self.w0)
        if w0.ndim != 1:
            raise ValueError(f'Steering vector must be 1-D, got shape={w0.shape}.')
        if not np.any(w0):
            raise ValueError(f'Steering vector label={self.label!r} is zero.')

    @property
    def n(self) -> int:
        return self.w0.size


@dataclass(frozen=True)
class BeamformerWeights:
    w: np.ndarray
    kind: BeamformerKind
    source: CovarianceSource


def _check_steering(cov: HermitianMatrix, steering: SteeringVector) -> np.ndarray:
    if steering.n != cov.n:
        raise DimensionMismatch(
            f'Steering vector label={steering.label!r} has n={steering.n}, covariance n={cov.n}.'
        )
    return np.asarray(steering.w0)


def classical_power(cov: HermitianMatrix, steering: SteeringVector) -> float:
    '''w0^H C w0. Hermitian form, reduces to w0^T C w0 for real data.
    '''
    w0 = _check_steering(cov, steering)
    return float(np.real(np.vdot(w0, cov.entries @ w0)))


def mvdr_weights(
    cov: HermitianMatrix,
    steering: SteeringVector,
    source: CovarianceSource = CovarianceSource.OBSERVED,
) -> BeamformerWeights:
    '''w = C^{-1} w0 / (w0^H C^{-1} w0), solved through the Cholesky factor of C.
    '''
    w0 = _check_steering(cov, steering)
    c_inv_w0 = cholesky_sqrt(cov).inverse_apply(w0)
    response = np.vdot(w0, c_inv_w0)
    return BeamformerWeights(
        w=c_inv_w0 / response,
        kind=BeamformerKind.MVDR,
        source=source,
    )


def mvdr_power(cov: HermitianMatrix, steering: SteeringVector) -> float:
    '''Output power w^H C w of the MVDR beamformer, 1 / (w0^H C^{-1} w0).
    '''
    w0 = _check_steering(cov, steering)
    c_inv_w0 = cholesky_sqrt(cov).inverse_apply(w0)
    return float(1.0 / np.real(np.vdot(w0, c_inv_w0)))


def beampattern(
    cov: HermitianMatrix,
    steering_family: Sequence[SteeringVector],
    kind: BeamformerKind = BeamformerKind.CLASSICAL,
) -> List[Tuple[str, float]]:
    if not steering_family:
        raise ValueError('Steering family is empty.')
    power = classical_power if kind == BeamformerKind.CLASSICAL else mvdr_power
    return [(steering.label, power(cov, steering)) for steering in steering_family]


@dataclass(frozen=True)
class BeampatternRow:
    label: str
    power_observed: float
    power_structured: float
    mvdr_power_observed: float
    mvdr_power_structured: float


def compare_beampatterns(
    r: HermitianMatrix,
    r_theta: HermitianMatrix,
    steering_family: Sequence[SteeringVector],
) -> List[BeampatternRow]:
    columns = [
        beampattern(r, steering_family, BeamformerKind.CLASSICAL),
        beampattern(r_theta, steering_family, BeamformerKind.CLASSICAL),
        beampattern(r, steering_family, BeamformerKind.MVDR),
        beampattern(r_theta, steering_family, BeamformerKind.MVDR),
    ]
    rows = []
    for idx, steering in enumerate(steering_family):
        rows.append(
            BeampatternRow(
                steering.label,
                *(column[idx][1] for column in columns),
            )
        )
    return rows
