"""Local empirical Bayes shrinkage for A/B-test effect estimation.

The package covers the full pipeline: snapshot ingestion and effect
estimation, arrival-shape similarity, cross-fitted neighborhood selection
with local random-effects shrinkage, semi-synthetic bootstrap evaluation,
and Monte Carlo validation of the local-versus-global dominance gap.
"""

__version__ = "0.1.0"

from .data import (
    ArmStats,
    EffectEstimate,
    ExperimentSeries,
    IntervalStats,
    Snapshot,
    adapt_asos_file,
    compute_increments,
    effect_estimate,
    parse_snapshot_file,
    reference_effect,
    write_snapshot_csv,
)
from .errors import (
    DegenerateSeriesError,
    InsufficientDataError,
    LocalEbError,
    ParseError,
    ValidationError,
)
from .evaluation import (
    DominanceReport,
    MethodScore,
    emit_report,
    mixture_dominance_check,
    random_spec_battery,
    score_methods,
    sensitivity_sweep,
    sweep_method_grid,
)
from .neighborhoods import (
    FoldAssignment,
    FoldedOutcomes,
    LocalMethodConfig,
    NeighborhoodResult,
    TargetResult,
    assign_folds,
    baseline_neighbors,
    local_eb_estimate,
    pilot_estimates,
    refine_neighbors,
    run_cfshn,
    run_classical,
    run_local_method,
    select_candidates,
)
from .semisynth import (
    CLASSICAL,
    RAW,
    MethodKey,
    NhppModel,
    ReplicateOutput,
    ResultStore,
    fit_nhpp,
    replicate_rng,
    run_bootstrap,
    simulate_corpus_replicate,
    simulate_replicate,
)
from .shrinkage import (
    MixturePriorSpec,
    RandomEffectsFit,
    ShrinkageResult,
    classical_eb,
    fit_random_effects,
    shrink,
    shrinkage_weight,
)
from .similarity import (
    DistanceNormalizers,
    ProcessFeatures,
    SimilarityConfig,
    composite_distance,
    distance_normalizers,
    dtw_distance,
    dtw_matrix,
    normalized_shape,
    pairwise_distance_matrix,
)
from .synthetic import TwoClusterConfig, make_two_cluster_corpus
