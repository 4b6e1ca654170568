"""Staged, branch-validated potential-based reward shaping for sparse cooperative foraging."""

from .env import EnvConfig
from .gate import BranchCurve, decide, score_branch
from .learner import LearnerConfig, train_segment
from .shaping import ShapingConfig, make_config, normalize_and_validate
from .workflow import Workflow, WorkflowBudget

__all__ = [
    "BranchCurve",
    "EnvConfig",
    "LearnerConfig",
    "ShapingConfig",
    "Workflow",
    "WorkflowBudget",
    "decide",
    "make_config",
    "normalize_and_validate",
    "score_branch",
    "train_segment",
]
__version__ = "0.1.0"
