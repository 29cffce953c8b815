"""Knowledge-augmented column networks: relational deep learning guided by preference rules."""

from .datagen import GenConfig, generate
from .graph import KnowledgeGraph, load_graph, split, subsample
from .grounding import AdviceMasks, create_masks, empty_masks
from .metrics import auc_pr, macro_f1, micro_f1
from .network import NetworkConfig, forward, init_params
from .rules import RuleSet, format_rules, parse_rules
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AdviceMasks",
    "GenConfig",
    "KnowledgeGraph",
    "NetworkConfig",
    "RuleSet",
    "TrainConfig",
    "auc_pr",
    "create_masks",
    "empty_masks",
    "format_rules",
    "forward",
    "generate",
    "init_params",
    "load_graph",
    "macro_f1",
    "micro_f1",
    "parse_rules",
    "split",
    "subsample",
    "train",
]
