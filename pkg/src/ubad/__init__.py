"""User-behavior anomaly detection over enterprise access logs.

Isolation forests extended to categorical dimensions via ordinal encoding,
with per-user baseline models, a log-ingestion pipeline, an evaluation
protocol, and a synthetic corpus generator.
"""

from .errors import (
    BadTimestampError,
    DataQualityError,
    InsufficientDataError,
    InvalidInputError,
    InvalidRangeError,
    MalformedLineError,
    MissingFieldError,
    UbadError,
    UnknownCategoryError,
)
from .evaluation import (
    ConfusionMatrix,
    ExperimentConfig,
    ExperimentReport,
    MetricsReport,
    anomalous_count_histogram,
    compute_metrics,
    run_experiment,
    run_user_trial,
)
from .forest import (
    Forest,
    TreeNode,
    anomaly_score,
    anomaly_scores,
    build_tree,
    expected_path_c,
    fit_forest,
    path_length,
)
from .ingest import (
    DEFAULT_LAYOUT,
    ColumnLayout,
    LogRecord,
    UserStore,
    extract_browser,
    group_by_user,
    ingest_paths,
    load_user_store,
    parse_log_line,
    parse_timestamp,
    save_user_store,
    select_users_by_frequency,
)
from .modeling import (
    ForestParams,
    UserModel,
    Verdict,
    classify,
    load_user_model,
    save_user_model,
    train_user_model,
)
from .schema import (
    DimensionSpec,
    FeatureSchema,
    build_schema,
    encode_categorical,
    extract_features,
)
from .synth import CorpusSpec, RecordVolume, generate_corpus, inject_known_anomalies

__version__ = "0.1.0"
