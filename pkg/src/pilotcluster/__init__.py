"""Adaptive pilot clustering for massive MIMO uplinks.

Cells share pilot pools by forming coalitions; a budgeted distributed
formation protocol reaches individually stable structures whose utilities are
closed-form average spectral efficiencies.
"""

from .baselines import (
    enumerate_partitions,
    exhaustive_optimum,
    full_reuse_utilities,
    random_structure,
    singleton_structure,
)
from .errors import (
    ConfigError,
    InvalidDeviationError,
    InvalidParameterError,
    LimitExceededError,
    MissingDataError,
    NumericalDomainError,
    PilotClusterError,
    RankDeficientError,
    ZFInfeasibleError,
)
from .formation import FormationResult, run_formation
from .game import EMPTY, CoalitionStructure, GameState, is_admissible, is_individually_stable
from .geometry import Deployment, generate_deployment, sample_user_position, serving_cell
from .propagation import PropagationStats, estimate_mu
from .utility import CombiningScheme, SystemParams, cell_utility, structure_utilities, utility_vector
from .validator import monte_carlo_se, validate

__version__ = "0.1.0"

__all__ = [
    "EMPTY", "CoalitionStructure", "CombiningScheme", "ConfigError", "Deployment",
    "FormationResult", "GameState", "InvalidDeviationError", "InvalidParameterError",
    "LimitExceededError", "MissingDataError", "NumericalDomainError", "PilotClusterError",
    "PropagationStats", "RankDeficientError", "SystemParams", "ZFInfeasibleError",
    "cell_utility", "enumerate_partitions", "estimate_mu", "exhaustive_optimum",
    "full_reuse_utilities", "generate_deployment", "is_admissible", "is_individually_stable",
    "monte_carlo_se", "random_structure", "run_formation", "sample_user_position",
    "serving_cell", "singleton_structure", "structure_utilities", "utility_vector", "validate",
]
