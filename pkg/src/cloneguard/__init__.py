"""Exactly solvable coupling-flow diagnostics and anti-cloning output poisoning
for stacks of same-width binary RBM layers."""

__version__ = "0.1.0"

from .cloning import (
    AttackConfig,
    CloneReport,
    attack_experiment,
    clone_train,
    compare_models,
    decode,
)
from .couplings import (
    CouplingVector,
    FixedPointVerdict,
    FlowTrace,
    OperatorBasis,
    detect_fixed_point,
    extract_couplings,
    flow_trace,
    reconstruct_distribution,
)
from .errors import (
    CapacityError,
    CloneGuardError,
    InfiniteDivergenceError,
    NoUnstableDirectionError,
    PositivityError,
    SchemaError,
    TrainingDivergedError,
)
from .poisoning import (
    FimResult,
    PoisonVector,
    coupling_jacobian,
    fim,
    last_layer_couplings,
    operator_covariance,
    poison_dataset,
    strongest_poison,
)
from .rbm import (
    ConditionedFlow,
    RbmLayer,
    RbmStack,
    backward_conditional,
    classify_propagate,
    forward_conditional,
    generate_propagate,
    joint_distribution,
    load_model,
    save_model,
)
from .stability import (
    RelevanceReport,
    StabilityMatrix,
    layer_map,
    relevance_report,
    stability_matrix,
)
from .states import (
    BinaryState,
    Dataset,
    Distribution,
    OutputVector,
    delta_distribution,
    enumerate_states,
    kl_divergence,
)
from .training import (
    LayerTarget,
    TrainingConfig,
    assemble_joint,
    kl_gradient,
    layer_target,
    load_dataset,
    make_task,
    save_dataset,
    train_layerwise,
)
