"""stacktag: multi-label content tagging via stacked multimodal ensembles.

Per-modality base learners produce k-fold out-of-fold probabilities; those
become meta-features (together with normalized extra features) for a
dropout MLP. Fusion baselines (concat, sum-pooling, max-pooling,
attention), an exact Global Average Precision metric with a brute-force
oracle, tf-idf text features, a synthetic dataset generator, and binary
file formats round out the pipeline.
"""

from .config import MetricSettings, RunConfig, config_hash, load_config, parse_config
from .data import (
    Dataset,
    DatasetManifest,
    FeatureMatrix,
    SequenceFeatureSet,
    TagVocabulary,
    assemble_dataset,
    load_feature_matrix,
    load_manifest,
    load_sequence_set,
    pool_sequence_set,
    read_feature_file,
    temporal_pool,
    write_dataset,
    write_feature_matrix,
    write_sequence_set,
)
from .errors import (
    AlignmentError,
    CorruptionError,
    DivergenceError,
    FormatError,
    MetricUndefinedError,
    StacktagError,
    ValidationError,
)
from .fusion import (
    FusionModel,
    build_fusion,
    default_projection_dim,
    fusion_loss_and_grads,
    train_fusion,
)
from .learners import (
    GradientReport,
    LinearModel,
    MlpModel,
    TrainConfig,
    apply_inverted_dropout,
    build_mlp,
    finite_diff_check,
    linear_loss_and_grads,
    load_model,
    mlp_loss_and_grads,
    predict_proba,
    save_model,
    train_linear,
    train_mlp,
)
from .metrics import (
    GapConfig,
    RankedPrediction,
    gap,
    gap_bruteforce_oracle,
    hamming_accuracy,
    read_predictions,
    subset_accuracy,
    top_k_predictions,
    write_predictions,
)
from .reports import EvalReport, ReportRow, load_report_numbers, write_report
from .stacking import (
    FoldAssignment,
    LearnerSpec,
    MetaFeatureMatrix,
    OofBlock,
    StackedModel,
    assign_folds,
    build_meta_matrix,
    load_stacked,
    oof_meta_features,
    predict_stacked,
    predict_stacked_dataset,
    predict_stacked_proba,
    save_stacked,
    train_stacked,
)
from .synth import ModalitySpec, SynthConfig, derive_seed, synth_generate
from .text import (
    NgramVocabulary,
    SparseVector,
    build_ngram_vocab,
    tfidf_feature_matrix,
    tfidf_transform,
    truncate_first_last,
)

__version__ = "0.1.0"
