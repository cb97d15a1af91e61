"""Certified bounds on log partition functions of discrete pairwise MRFs.

Weighted ensembles of spanning trees (and forests) bound the log
partition function from above when all weights are positive and from
below when a single weight exceeds one and the rest are negative; the
mean-field family arises as the limit of the negative regime.  The
package provides the model representation, exact oracles, the reweighted
message-passing engine, bound certification, weight optimizers, and an
experiment CLI.
"""

from .bounds import (
    BoundResult,
    JensenCheck,
    TreeDecomposition,
    TreeMember,
    ZeroMarginalError,
    build_decomposition,
    certify_bound,
    evaluate_psi,
    psi_weight_gradient,
    reconstruct_decomposition,
    reverse_jensen_holds,
)
from .exact import (
    MarginalSet,
    StateSpaceCapError,
    UnsupportedStructureError,
    brute_force_log_partition,
    brute_force_marginals,
    entropy_unary,
    grid_log_partition,
    mutual_information,
    tree_entropy,
    tree_log_partition,
    tree_marginals,
)
from .models import (
    ModelFamilySpec,
    ModelFormatError,
    PairwiseModel,
    Potentials,
    gen_ising_grid,
    generate_model,
    grid_edges,
    load_model,
    save_model,
    triangle_example,
)
from .optimize import (
    OptimizerOptions,
    OptimizerTrace,
    SkeletonError,
    naive_mean_field,
    optimize_lower_bound,
    optimize_upper_bound,
    reselect_positive_tree,
    structured_mean_field,
    update_beta,
    update_v,
)
from .propagation import (
    MEANFIELD,
    BeliefState,
    InvalidEdgeAppearanceError,
    MeanFieldEdgeError,
    MpOptions,
    NonFiniteMessageError,
    compute_pseudomarginals,
    free_energy,
    run_message_passing,
)
from .trees import (
    DisconnectedGraphError,
    NegativeEnsembleView,
    Subtree,
    WeightDomain,
    WeightedEnsemble,
    classify_weights,
    cover_with_spanning_trees,
    dump_ensemble,
    edge_appearance,
    is_v_acyclic,
    max_weight_spanning_tree,
    random_spanning_tree,
)

__all__ = [name for name in dir() if not name.startswith("_")]
