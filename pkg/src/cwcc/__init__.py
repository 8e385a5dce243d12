"""Channel-wise colour constancy: a weight-shared per-channel CNN illuminant
estimator with an error-predicting uncertainty branch, classic baselines and
angular error metrics."""

from .baselines import grey_edge, grey_world, shades_of_grey, white_patch
from .dataset import (Sample, SynthConfig, cross_validation_splits, load_manifest,
                      read_image, resize_image, synthesize, write_image, write_manifest)
from .metrics import ErrorSummary, pearson, recovery_error, reproduction_error, summarize
from .model import (CwccConfig, CwccModel, TrainConfig, correct_image, count_parameters,
                    load_checkpoint, save_checkpoint, train)
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "grey_edge", "grey_world", "shades_of_grey", "white_patch",
    "Sample", "SynthConfig", "cross_validation_splits", "load_manifest", "read_image",
    "resize_image", "synthesize", "write_image", "write_manifest",
    "ErrorSummary", "pearson", "recovery_error", "reproduction_error", "summarize",
    "CwccConfig", "CwccModel", "TrainConfig", "correct_image", "count_parameters",
    "load_checkpoint", "save_checkpoint", "train",
    "Tensor", "no_grad",
]
