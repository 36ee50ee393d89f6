__version__ = "0.1.0"

from .config import Config
from .factor_graph import FactorGraph
from .factor_graph import GraphValues
from .factor_graph import MaxMixtureFactor
from .factor_graph import VariableKey
from .pose_algebra import Pose3
from .solver import SolverConfig
from .solver import incremental_solve
from .solver import optimize

__all__ = [
    "Config",
    "FactorGraph",
    "GraphValues",
    "MaxMixtureFactor",
    "Pose3",
    "SolverConfig",
    "VariableKey",
    "incremental_solve",
    "optimize",
]
