"""Fair synthetic tabular data via guided mixed-type diffusion."""

from ._validation import NotFittedError
from .conditioning import ConditionTable, balance, draw_conditions, empirical_joint
from .data import (
    Column,
    Dataset,
    SchemaError,
    TableSchema,
    load_dataset,
    load_schema,
    split_dataset,
)
from .denoiser import (
    ConditionSpec,
    Denoiser,
    DenoiserConfig,
    DenoiserOutput,
    LatentCodec,
    train_denoiser,
)
from .diffusion import (
    GaussianPosterior,
    NoiseSchedule,
    gaussian_estimated_mean,
    gaussian_forward_sample,
    gaussian_loss,
    gaussian_posterior_mean,
    make_schedule,
    multinomial_forward,
    multinomial_posterior,
    multinomial_step_loss,
    total_loss,
)
from .estimator import FairTabularDiffusion
from .evaluation import (
    BuiltinClassifier,
    FairnessReport,
    auc,
    column_density_error,
    composite,
    dcr,
    dpr,
    eor,
    pairwise_correlation_error,
    tradeoff_sweep,
    train_classifier,
)
from .preprocessing import EncodedBatch, QuantileTransform, TableEncoder
from .sampling import (
    GuidanceConfig,
    MomentumState,
    guided_estimate,
    label_guidance,
    multi_attribute_guidance,
    reverse_sample,
    reverse_sample_label_only,
    security_gate,
    sensitive_guidance_step,
)

__version__ = "0.1.0"

__all__ = [
    "NotFittedError",
    "ConditionTable", "balance", "draw_conditions", "empirical_joint",
    "Column", "Dataset", "SchemaError", "TableSchema",
    "load_dataset", "load_schema", "split_dataset",
    "ConditionSpec", "Denoiser", "DenoiserConfig", "DenoiserOutput",
    "LatentCodec", "train_denoiser",
    "GaussianPosterior", "NoiseSchedule", "gaussian_estimated_mean",
    "gaussian_forward_sample", "gaussian_loss", "gaussian_posterior_mean",
    "make_schedule", "multinomial_forward", "multinomial_posterior",
    "multinomial_step_loss", "total_loss",
    "FairTabularDiffusion",
    "BuiltinClassifier", "FairnessReport", "auc", "column_density_error",
    "composite", "dcr", "dpr", "eor", "pairwise_correlation_error",
    "tradeoff_sweep", "train_classifier",
    "EncodedBatch", "QuantileTransform", "TableEncoder",
    "GuidanceConfig", "MomentumState", "guided_estimate", "label_guidance",
    "multi_attribute_guidance", "reverse_sample", "reverse_sample_label_only",
    "security_gate", "sensitive_guidance_step",
    "__version__",
]
