"""
Package initialization for Sequoia Lab.
"""

from .categorical import Categorical, CategoricalOps
from .tree import AcceptanceVector, TreeMetrics, TreeTopology
from .verifiers import ExactNodeOracle, TreeVerifier, VerifierKind
from .planner import PlanResult, TreePlanner
from .optimizer import CostModel, HardwareAwareOptimizer
from .toy_models import ModelPair, ToyLM, make_model_pair
from .estimation import AcceptanceEstimator
from .simulation import ExperimentRunner

__version__ = '1.0.0'
__all__ = [
    'Categorical',
    'CategoricalOps',
    'AcceptanceVector',
    'TreeMetrics',
    'TreeTopology',
    'ExactNodeOracle',
    'TreeVerifier',
    'VerifierKind',
    'PlanResult',
    'TreePlanner',
    'CostModel',
    'HardwareAwareOptimizer',
    'ModelPair',
    'ToyLM',
    'make_model_pair',
    'AcceptanceEstimator',
    'ExperimentRunner'
]
