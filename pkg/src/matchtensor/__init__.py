"""Neural relevance ranking with Match-Tensor, SSM and hybrid scorers."""

from .metrics import RelevanceGrade, err, ndcg_at_k, roc_auc
from .models import ModelConfig, build_model, count_parameters
from .training import TrainingConfig, train

__version__ = "0.1.0"

__all__ = ["RelevanceGrade", "err", "ndcg_at_k", "roc_auc", "ModelConfig", "build_model", "count_parameters",
           "TrainingConfig", "train", "__version__"]
