"""Physics-informed neural networks with feature-mapping first layers."""

from .featuremap import Family, FeatureMap, FeatureMapSpec, RbfKind
from .network import PinnNetwork, init_mlp
from .pde import get_problem, PROBLEM_NAMES
from .train import TrainConfig, TrainReport

__version__ = "0.1.0"

__all__ = ["Family", "FeatureMap", "FeatureMapSpec", "RbfKind", "PinnNetwork", "init_mlp",
           "get_problem", "PROBLEM_NAMES", "TrainConfig", "TrainReport"]
