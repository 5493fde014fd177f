"""Knee MRI classification pipeline toolkit.

Volume ingestion, slice-count normalization, staged stochastic
augmentation, compact residual CNNs trained from scratch in numpy,
rank-based AUC, a logistic-regression plane ensemble, and a synthetic
dataset generator for desk-scale end-to-end runs.
"""

__version__ = "0.1.0"

from .augment import (
    AugmentationPolicy,
    TransformPlan,
    TransformSpec,
    apply_plan,
    apply_transform,
    augment_volume,
    sample_plan,
)
from .config import OptimizerConfig, RunConfig, load_run_config, make_run_config
from .explorer import export_explorer
from .gridsearch import P_GRID, grid_search, select_best
from .metrics import (
    ClassWeights,
    CombinerModel,
    PredictionRecord,
    auc,
    auc_pair_count,
    class_weights,
    fit_logreg,
    predict_logreg,
)
from .nn import (
    Adam,
    ModelConfig,
    ResidualClassifier,
    init_model,
    load_checkpoint,
    predict_multi,
    predict_volume_max,
    save_checkpoint,
    sigmoid,
    weighted_bce,
)
from .resample import (
    InterpolationMatrix,
    ResampleSpec,
    interpolation_matrix,
    middle_slices,
    resample_volume,
    reslice_horizontal,
    resize_bilinear,
)
from .synthetic import generate_synthetic
from .training import evaluate, train
from .volume_io import (
    PLANES,
    TASKS,
    DatasetManifest,
    LabelTable,
    MriVolume,
    load_labels,
    load_volume,
    save_volume,
    scan_dataset,
    write_npy,
)
