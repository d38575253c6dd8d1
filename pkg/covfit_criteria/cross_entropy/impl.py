import numpy as np

from covfit_core.criterion import FittingCriterion
from covfit_core.divergence import GaussianDensity, ce_divergence
from covfit_core.model import Criterion, DivergenceValue

CROSS_ENTROPY_TYPE = Criterion.CE


class CrossEntropyCriterion(FittingCriterion):
    '''Minimize H(q_theta, p). The noise level is the harmonic mean of the tail.
    '''
    type = CROSS_ENTROPY_TYPE

    def noise_variance(self, tail: np.ndarray) -> float:
        return float(tail.size / np.sum(1.0 / tail))

    def model_divergence(self, p: GaussianDensity, q_theta: GaussianDensity) -> DivergenceValue:
        return ce_divergence(q_theta, p)

    def log_ratio_terms(self, tail: np.ndarray, sigma2: float) -> np.ndarray:
        return np.log(tail / sigma2)

    def mean_ratio_terms(self, tail: np.ndarray) -> np.ndarray:
        # Inverse eigenvalues.
        return 1.0 / tail
