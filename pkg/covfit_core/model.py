from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from covfit_core.linalg import HermitianMatrix, check_same_dimension


class Criterion(Enum):
    CE = 'ce'
    RCE = 'rce'

    @classmethod
    def parse(cls, value) -> 'Criterion':
        if isinstance(value, Criterion):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f'Unknown criterion={value}, expect one of ce, rce.') from None


@dataclass(frozen=True)
class DivergenceValue:
    value: float
    xi: float


@dataclass(frozen=True)
class StructuredModel:
    '''R_theta = U diag(signal_powers) U^H + sigma2 W.
    '''
    rank: int
    u: np.ndarray
    signal_powers: np.ndarray
    sigma2: float
    noise: HermitianMatrix
    r_theta: HermitianMatrix
    criterion: Criterion
    unique: bool = True
    # Set when a negative signal power had to be clamped to zero.
    clamped: bool = False

    @property
    def n(self) -> int:
        return self.noise.n

    @property
    def is_real(self) -> bool:
        return self.r_theta.is_real

    def with_sigma2(self, sigma2: float) -> 'StructuredModel':
        return assemble_model(
            u=self.u,
            signal_powers=self.signal_powers,
            sigma2=sigma2,
            noise=self.noise,
            criterion=self.criterion,
            unique=self.unique,
            clamped=self.clamped,
            is_real=self.is_real,
        )


def assemble_model(
    u: np.ndarray,
    signal_powers: np.ndarray,
    sigma2: float,
    noise: HermitianMatrix,
    criterion: Criterion,
    unique: bool = True,
    clamped: bool = False,
    is_real: Optional[bool] = None,
) -> StructuredModel:
    u = np.asarray(u)
    signal_powers = np.asarray(signal_powers, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != noise.n or u.shape[1] != signal_powers.size:
        raise ValueError(
            f'Inconsistent model shapes: u={u.shape}, signal_powers={signal_powers.shape}, '
            f'n={noise.n}.'
        )
    if sigma2 <= 0.0:
        raise ValueError(f'sigma2 must be positive, got {sigma2}.')

    low_rank = (u * signal_powers) @ u.conj().T
    if is_real is None:
        is_real = noise.is_real and not (np.iscomplexobj(u) and np.any(u.imag))
    entries = low_rank + sigma2 * noise.entries
    if is_real:
        entries = entries.real
    r_theta = HermitianMatrix.from_array(entries, is_real=is_real)

    u = np.array(u, copy=True)
    u.setflags(write=False)
    signal_powers = np.array(signal_powers, copy=True)
    signal_powers.setflags(write=False)
    return StructuredModel(
        rank=signal_powers.size,
        u=u,
        signal_powers=signal_powers,
        sigma2=float(sigma2),
        noise=noise,
        r_theta=r_theta,
        criterion=criterion,
        unique=unique,
        clamped=clamped,
    )


def check_model_matches(r: HermitianMatrix, model: StructuredModel) -> None:
    check_same_dimension(r, model.r_theta)


@dataclass(frozen=True)
class FitReport:
    model: StructuredModel
    divergence: DivergenceValue
    lambdas: np.ndarray
    order_curve: Optional[List[Tuple[int, float]]] = field(default=None)
