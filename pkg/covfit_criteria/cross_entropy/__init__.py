from covfit_core.criterion import CriterionRegistration
from covfit_criteria.cross_entropy.impl import CROSS_ENTROPY_TYPE, CrossEntropyCriterion


class CrossEntropyRegistration(CriterionRegistration):
    type = CROSS_ENTROPY_TYPE
    criterion_cls = CrossEntropyCriterion
