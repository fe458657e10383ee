"""Pool-based active learning on precomputed representations."""

from .acquisition import (
    ACQUISITION_NAMES,
    AcquisitionContext,
    BatchBALDConfig,
    acquire,
    top_b,
)
from .dataset import (
    DatasetManifest,
    EmbeddingMatrix,
    PoolState,
    UNKNOWN_LABEL,
    generate_synthetic,
    init_pool,
    load_embeddings,
    load_manifest,
    oracle_label,
    save_embeddings,
    save_manifest,
)
from .errors import (
    FormatError,
    IncompatibleBackbonesError,
    NumericalFailureError,
    PrepalError,
    SizeMismatchError,
    UnsupportedModelError,
    ValidationError,
)
from .evaluation import ExperimentGrid, curve, load_grid, summary, timing_table
from .models import (
    ProbeModel,
    TrainConfig,
    accuracy,
    load_model,
    predict_proba,
    predict_proba_mc,
    save_model,
    train_probe,
)
from .protocol import (
    PROTOCOLS,
    RunRecord,
    SessionConfig,
    SessionDriver,
    jaccard_overlap,
    run_sequential,
    run_session,
    transfer_train,
)
from .service import create_app

__version__ = "0.1.0"

__all__ = [
    "ACQUISITION_NAMES",
    "AcquisitionContext",
    "BatchBALDConfig",
    "DatasetManifest",
    "EmbeddingMatrix",
    "ExperimentGrid",
    "FormatError",
    "IncompatibleBackbonesError",
    "NumericalFailureError",
    "PoolState",
    "PrepalError",
    "ProbeModel",
    "PROTOCOLS",
    "RunRecord",
    "SessionConfig",
    "SessionDriver",
    "SizeMismatchError",
    "TrainConfig",
    "UNKNOWN_LABEL",
    "UnsupportedModelError",
    "ValidationError",
    "accuracy",
    "acquire",
    "create_app",
    "curve",
    "generate_synthetic",
    "init_pool",
    "jaccard_overlap",
    "load_embeddings",
    "load_grid",
    "load_manifest",
    "load_model",
    "oracle_label",
    "predict_proba",
    "predict_proba_mc",
    "run_sequential",
    "run_session",
    "save_embeddings",
    "save_manifest",
    "save_model",
    "timing_table",
    "top_b",
    "train_probe",
    "transfer_train",
]
