"""Speaker embedding toolkit on a numpy reverse-mode autodiff tape.

The package covers the full loop: MFCC features, a convolutional and
attention-based frame-level network with multi-head attentive statistics
pooling, an additive angular margin objective with an attention
diversity penalty, cyclical-rate Adam training, and cosine scoring with
EER and minimum detection cost metrics.
"""

from .autograd import GradTape, Tensor
from .errors import (ConfigError, DataError, DimensionError, NumericError,
                     SpkfuseError, UsageError)
from .network import NetworkConfig, SpeakerEmbeddingModel, desk_config
from .training import TrainConfig, desk_train_config, train

__version__ = "0.1.0"

__all__ = [
    "GradTape",
    "Tensor",
    "SpkfuseError",
    "DimensionError",
    "ConfigError",
    "DataError",
    "NumericError",
    "UsageError",
    "NetworkConfig",
    "SpeakerEmbeddingModel",
    "desk_config",
    "TrainConfig",
    "desk_train_config",
    "train",
    "__version__",
]
