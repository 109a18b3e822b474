"""Scenario-adaptive attention, scenario-aware contrastive learning and long-tail
evaluation tooling for cooperative driving planners, on a small numpy autodiff core."""
from .diffcore import Tensor, backward, finite_difference_check
from .gmsaa import AttentionTrace, GmsaaConfig, GmsaaParams, ScenarioLabel, gmsaa_forward
from .mscl import EmbeddingBatch, MsclConfig, mscl_loss
from .objectives import ObjectiveConfig, distillation_loss, generation_loss, total_loss

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "finite_difference_check",
    "AttentionTrace", "GmsaaConfig", "GmsaaParams", "ScenarioLabel", "gmsaa_forward",
    "EmbeddingBatch", "MsclConfig", "mscl_loss",
    "ObjectiveConfig", "distillation_loss", "generation_loss", "total_loss",
]
