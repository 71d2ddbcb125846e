"""Backbone selection and evaluation harness over frozen embeddings."""

from .store import (
    EmbeddingTable,
    TableMeta,
    FormatError,
    ValidationError,
    IoError,
    read_table,
    write_table,
    validate,
)
from .cohort import (
    CohortError,
    FoldPlan,
    SubsampleMask,
    FRACTION_PRESETS,
    group_kfold,
    stratified_subsample,
)
from .estimators import (
    AggregationError,
    EstimatorError,
    RegistryError,
    RankingReport,
    TransferScore,
    aggregate_ranking,
    logme_score,
    nleep_score,
    parc_score,
    register_plugin_estimator,
    registered_estimators,
    run_estimator,
)
from .probe import ProbeError, ProbeModel, predict, predict_proba, train_probe
from .metrics import (
    FoldSummary,
    MetricError,
    MetricReport,
    auroc,
    aupr,
    f1_report,
    fold_summary,
    paired_ttest,
)
from .distill import (
    SslConfig,
    SslError,
    SslState,
    center_update,
    collapse_entropy,
    dino_loss,
    ema_update,
    init_state,
    load_checkpoint,
    make_views,
    save_checkpoint,
    train_step,
)

__version__ = "0.1.0"
