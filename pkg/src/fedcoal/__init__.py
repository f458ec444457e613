"""Desk-scale decentralized federated continual learning simulator.

The core is a coalition-formation game engine: pairwise gradient/model
similarities are condensed into per-coalition benefits, a merge-blocking
sweep finds cooperative equilibria (cross-checked against a brute-force
oracle), and equilibria are re-evolved every communication round as tasks
arrive.
"""

from .affinity import (
    AffinityGraph,
    BenefitTable,
    Coalition,
    all_coalitions,
    build_benefit_table,
    coalition,
    coalition_benefit_closed,
    coalition_benefit_direct,
    kernel_backend,
    pairwise_benefit,
    random_table,
)
from .data import ClientTimeline, ScenarioConfig, build_scenario, gen_synthetic_pool, load_idx
from .game import (
    CooperativeState,
    EquilibriumResult,
    Partition,
    bell_number,
    brute_force_equilibria,
    dynamic_evolution,
    enumerate_partitions,
    grand_partition,
    is_equilibrium,
    is_profitable_transition,
    make_partition,
    make_state,
    merge_blocking,
    singleton_partition,
)
from .model import Batch, Classifier, Hyperparams
from .simulator import (
    AccuracyMatrix,
    RoundRecord,
    RunConfig,
    aggregate_coalition,
    average_accuracy,
    average_forgetting,
    run,
)

__version__ = "0.1.0"
