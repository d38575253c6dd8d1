import numpy as np

from covfit_core.criterion import FittingCriterion
from covfit_core.divergence import GaussianDensity, rce_divergence
from covfit_core.model import Criterion, DivergenceValue

REVERSE_CROSS_ENTROPY_TYPE = Criterion.RCE


class ReverseCrossEntropyCriterion(FittingCriterion):
    '''Minimize H(p, q_theta), which coincides with maximum likelihood.

    The noise level is the arithmetic mean of the tail.
    '''
    type = REVERSE_CROSS_ENTROPY_TYPE

    def noise_variance(self, tail: np.ndarray) -> float:
        return float(np.mean(tail))

    def model_divergence(self, p: GaussianDensity, q_theta: GaussianDensity) -> DivergenceValue:
        return rce_divergence(p, q_theta)

    def log_ratio_terms(self, tail: np.ndarray, sigma2: float) -> np.ndarray:
        return np.log(sigma2 / tail)

    def mean_ratio_terms(self, tail: np.ndarray) -> np.ndarray:
        return tail
