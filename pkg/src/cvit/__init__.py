"""Convolutional vision transformer for real/fake face-crop classification, on numpy."""

from .errors import (
    CheckpointError, ConfigurationError, ContractError, DataError, DegenerateVarianceError,
    DimensionError, FormatVersionError, IntegrityError, NonFiniteError,
)
from .model import (
    CViTConfig, CViTModel, FLConfig, ViTConfig, count_parameters, cvit_forward, fl_forward,
    init_parameters, patchify_and_embed, predict_proba,
)
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"
