"""Leave-one-out unfairness (LUF) and stability auditing for small learners."""

__version__ = "0.1.0"

from .data import Dataset, SplitPlan, make_split, full_plan, load_csv, sample_synthetic, SyntheticSpec
from .errors import LooAuditError, ConfigurationError
from .kernels import BACKEND
from .metrics import (
    LufReport,
    audit_deterministic,
    audit_randomized,
    dp_luf_bound,
    loo_stability,
    luf_oracle,
    prop2_check,
)
from .models import SmoothingConfig, model_from_bytes
from .rules import LearningRule, pgd_attack, train

__all__ = [
    "__version__",
    "BACKEND",
    "ConfigurationError",
    "Dataset",
    "LearningRule",
    "LooAuditError",
    "LufReport",
    "SmoothingConfig",
    "SplitPlan",
    "SyntheticSpec",
    "audit_deterministic",
    "audit_randomized",
    "dp_luf_bound",
    "full_plan",
    "load_csv",
    "loo_stability",
    "luf_oracle",
    "make_split",
    "model_from_bytes",
    "pgd_attack",
    "prop2_check",
    "sample_synthetic",
    "train",
]
