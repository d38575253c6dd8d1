from abc import abstractmethod
import functools
import importlib
import inspect
import pkgutil
from typing import Dict, Iterable, Type

import numpy as np

from covfit_core.divergence import GaussianDensity
from covfit_core.model import Criterion, DivergenceValue


#######################
# Criterion interface #
#######################
class FittingCriterion:
    type: Criterion

    @abstractmethod
    def noise_variance(self, tail: np.ndarray) -> float:
        '''sigma2 from the N - P smallest generalized eigenvalues.
        '''

    @abstractmethod
    def model_divergence(self, p: GaussianDensity, q_theta: GaussianDensity) -> DivergenceValue:
        '''The divergence this criterion minimizes, in its own orientation.
        '''

    @abstractmethod
    def log_ratio_terms(self, tail: np.ndarray, sigma2: float) -> np.ndarray:
        '''Per-eigenvalue terms whose sum times xi is the optimal divergence.
        '''

    @abstractmethod
    def mean_ratio_terms(self, tail: np.ndarray) -> np.ndarray:
        '''Values whose arithmetic/geometric mean ratio gives the optimal divergence.
        '''


class CriterionRegistration:
    type: Criterion = None  # type: ignore
    criterion_cls: Type[FittingCriterion] = FittingCriterion


########################
# Criterion reflection #
########################
class CriterionInstanceManager:

    def __init__(self) -> None:
        self._type_to_registration: Dict[Criterion, Type[CriterionRegistration]] = {}

        # Namespace package root.
        root_module = importlib.import_module('.', 'covfit_criteria')
        # Find all submodules.
        for module_info in pkgutil.iter_modules(
            root_module.__path__,  # type: ignore
            root_module.__name__ + '.',
        ):
            module = importlib.import_module(module_info.name)

            registration = None
            for obj in module.__dict__.values():
                if inspect.isclass(obj) \
                        and issubclass(obj, CriterionRegistration) \
                        and obj is not CriterionRegistration:
                    registration = obj

            if registration is None:
                continue

            assert isinstance(registration.type, Criterion)
            assert issubclass(registration.criterion_cls, FittingCriterion) \
                and registration.criterion_cls is not FittingCriterion

            if registration.type in self._type_to_registration:
                raise KeyError(f'criterion={registration.type} registered twice.')
            self._type_to_registration[registration.type] = registration

    @property
    def all_registrations(self) -> Iterable[Type[CriterionRegistration]]:
        return self._type_to_registration.values()

    def create_criterion(self, criterion) -> FittingCriterion:
        criterion = Criterion.parse(criterion)
        registration = self._type_to_registration.get(criterion)
        if registration is None:
            raise KeyError(f'criterion={criterion} is not registered.')
        return registration.criterion_cls()


@functools.lru_cache(maxsize=None)
def criterion_instance_manager() -> CriterionInstanceManager:
    return CriterionInstanceManager()


def get_criterion(criterion) -> FittingCriterion:
    return criterion_instance_manager().create_criterion(criterion)
