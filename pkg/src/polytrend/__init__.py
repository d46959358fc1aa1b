"""Tukey-type maximum trend tests for repeated carcinogenicity bioassays."""

__version__ = "0.1.0"

from .data_model import (  # noqa: E402
    AnimalRecord,
    ArilogZeroRule,
    DataError,
    DoseRecord,
    ScoredDataset,
    apply_pseudocounts,
    compute_dose_scores,
    compute_polyk_weights,
    parse_animal_csv,
    parse_grouped_csv,
)
from .glm import DesignMatrix, FittedModel, fit_binomial_glm  # noqa: E402
from .mmm import JointEstimate, JointTestResult, max_test, stack_models  # noqa: E402
