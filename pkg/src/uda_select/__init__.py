"""Label-free model selection for unsupervised domain adaptation.

Scores trained checkpoints with transfer metrics computed from source
accuracy and unlabeled target predictions, reports how well each metric
tracks true target accuracy, and drives hyperparameter search without
target labels.
"""

from .bundle_io import (
    BundleFormatError,
    BundleSet,
    BundleValidationError,
    EvaluationBundle,
    read_bundle,
    read_bundle_set,
    write_bundle,
)
from .metrics import ALL_METRICS, REGISTRY, MetricError, MetricScore, compute_all

__version__ = "0.1.0"

__all__ = [
    "ALL_METRICS",
    "BundleFormatError",
    "BundleSet",
    "BundleValidationError",
    "EvaluationBundle",
    "MetricError",
    "MetricScore",
    "REGISTRY",
    "compute_all",
    "read_bundle",
    "read_bundle_set",
    "write_bundle",
    "__version__",
]
