"""Mutual-information preserving structured pruning on a small numpy engine."""

__version__ = "0.1.0"

from .engine import ConfigError, DivergenceError, InsufficientSamplesError, Network, SgdConfig, ShapeError
from .models import ActivationCapture, PruneMask, ToyModel, apply_masks, build_model, capture_activations, train_classifier
from .pipeline import MippConfig, MippReport, confidence_schedule, feature_select, mipp
from .probe import MiEstimate, ProbeConfig, estimate_mi
from .terc import LayerPairJob, TercResult, terc_layer

__all__ = [
    "ActivationCapture",
    "ConfigError",
    "DivergenceError",
    "InsufficientSamplesError",
    "LayerPairJob",
    "MiEstimate",
    "MippConfig",
    "MippReport",
    "Network",
    "ProbeConfig",
    "PruneMask",
    "SgdConfig",
    "ShapeError",
    "TercResult",
    "ToyModel",
    "apply_masks",
    "build_model",
    "capture_activations",
    "confidence_schedule",
    "estimate_mi",
    "feature_select",
    "mipp",
    "terc_layer",
    "train_classifier",
]
