"""Deterministic evolutionary search over block-structured CNN genomes."""

from .compiler import (
    ChannelSchedule,
    NetworkDescription,
    block_params,
    compile_network,
    mac_count,
    schedule_channels,
)
from .control import (
    ControlTables,
    argmax_presence,
    argmin_presence,
    max_torque_among,
    presence_ratios,
    set_torques,
    update_tables,
)
from .engine import (
    EngineState,
    Individual,
    Intervention,
    RunConfig,
    RunReport,
    init_run,
    load_checkpoint,
    run,
    save_checkpoint,
    step_generation,
)
from .evaluator import EvalBudget, EvalCache, EvalResult, SurrogateSpec, evaluate_batch, surrogate_accuracy
from .genome import (
    BlockKind,
    Genome,
    LayerGene,
    canonical_digest,
    loads,
    dumps,
    repair_channels,
    validate,
)
from .operators import OperatorConfig, crossover, make_offspring, mutate, select_survivors
from .rng import RngStream

__version__ = "0.1.0"
