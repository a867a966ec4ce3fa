"""Few-shot rare-condition detection over precomputed feature vectors.

Learning: PCA reduction, perplexity-calibrated neighbor embedding, and
per-condition Parzen densities on a reference set. Inference: inverse-distance
K-NN regression of the reference presence probabilities in PCA space.
"""

from .dataset import (
    Dataset,
    FoldAssignment,
    SampleRecord,
    SplitAssignment,
    assign_folds,
    assign_splits,
    build_balanced_subset,
    load_dataset,
)
from .density import (
    ConditionModel,
    ReferenceProbabilities,
    density_at,
    fit_condition_models,
    presence_probability,
    scott_bandwidth,
)
from .evaluation import (
    EvaluationReport,
    ModelConfig,
    RocResult,
    cross_test,
    cross_validate,
    fit_reference,
    parameter_sweep,
    roc_auc,
)
from .pca import PcaModel, fit_pca, project
from .pipeline import PipelineConfig, PipelineError, protocol_folds, run_pipeline
from .predictor import Predictor, predict, predict_batch, prediction_gradient
from .preprocess import preprocess_fundus
from .synth import SynthSpec, generate
from .tsne import (
    NeighborEmbedding,
    TsneConfig,
    calibrate_bandwidth,
    conditional_matrix,
    fit_tsne,
    tsne_cost,
    tsne_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionModel",
    "Dataset",
    "EvaluationReport",
    "FoldAssignment",
    "ModelConfig",
    "NeighborEmbedding",
    "PcaModel",
    "PipelineConfig",
    "PipelineError",
    "Predictor",
    "ReferenceProbabilities",
    "RocResult",
    "SampleRecord",
    "SplitAssignment",
    "SynthSpec",
    "TsneConfig",
    "assign_folds",
    "assign_splits",
    "build_balanced_subset",
    "calibrate_bandwidth",
    "conditional_matrix",
    "cross_test",
    "cross_validate",
    "density_at",
    "fit_condition_models",
    "fit_pca",
    "fit_reference",
    "fit_tsne",
    "generate",
    "load_dataset",
    "parameter_sweep",
    "predict",
    "predict_batch",
    "prediction_gradient",
    "preprocess_fundus",
    "presence_probability",
    "project",
    "protocol_folds",
    "roc_auc",
    "run_pipeline",
    "scott_bandwidth",
    "tsne_cost",
    "tsne_gradient",
]
