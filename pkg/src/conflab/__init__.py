"""Finite-space laboratory for IID versus exchangeability validity of confidence predictors."""

__version__ = "0.1.0"

from .space import (  # noqa: E402
    Bag,
    BudgetExceeded,
    DataSequence,
    Distribution,
    FnTable,
    ObservationSpace,
)
from .oracles import CheckReport, ClassLabel, check_class  # noqa: E402

__all__ = [
    "Bag",
    "BudgetExceeded",
    "CheckReport",
    "ClassLabel",
    "DataSequence",
    "Distribution",
    "FnTable",
    "ObservationSpace",
    "check_class",
]
