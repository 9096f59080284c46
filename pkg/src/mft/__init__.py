"""Per-token corrective self-distillation for domain adaptation of small language models."""

from .correction import (Branch, CorrectionConfig, CorrectionDiagnostics, Mode, alpha_scale,
                         batch_correct, beta_scale, distribution_correct)
from .metrics import MetricsReport, compute_metrics, perplexity
from .model import AdapterConfig, TinyLM, TinyLMConfig, attach_adapter, clone_frozen, init_model
from .training import CheckpointRecord, Objective, RunConfig, run, select_best, train_step

__all__ = [
    "AdapterConfig", "Branch", "CheckpointRecord", "CorrectionConfig", "CorrectionDiagnostics",
    "MetricsReport", "Mode", "Objective", "RunConfig", "TinyLM", "TinyLMConfig", "alpha_scale",
    "attach_adapter", "batch_correct", "beta_scale", "clone_frozen", "compute_metrics",
    "distribution_correct", "init_model", "perplexity", "run", "select_best", "train_step",
]
