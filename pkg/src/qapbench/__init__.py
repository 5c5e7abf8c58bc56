"""Phone-clone allocation benchmark toolkit.

Minimize the co-location risk of assigning phones to capacity-limited hosts,
with a message-passing Q-learning agent and classical exact/relaxation
baselines, under a strict reproducibility contract.
"""

__version__ = "0.1.0"

from .graph import CommGraph, SbmConfig, complement, gen_sbm, gen_uniform
from .problem import (
    AllocationState,
    ProblemInstance,
    apply_move,
    capacities_from_relative,
    host_distribution,
    is_feasible,
    kl_penalty,
    risk,
    step_reward,
)

__all__ = [
    "__version__",
    "CommGraph", "SbmConfig", "complement", "gen_sbm", "gen_uniform",
    "AllocationState", "ProblemInstance", "apply_move",
    "capacities_from_relative", "host_distribution", "is_feasible",
    "kl_penalty", "risk", "step_reward",
]
