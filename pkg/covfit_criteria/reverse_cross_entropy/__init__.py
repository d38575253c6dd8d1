from covfit_core.criterion import CriterionRegistration
from covfit_criteria.reverse_cross_entropy.impl import (
    REVERSE_CROSS_ENTROPY_TYPE,
    ReverseCrossEntropyCriterion,
)


class ReverseCrossEntropyRegistration(CriterionRegistration):
    type = REVERSE_CROSS_ENTROPY_TYPE
    criterion_cls = ReverseCrossEntropyCriterion
