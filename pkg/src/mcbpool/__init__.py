"""Multimodal compact bilinear pooling (MCB) in NumPy.

Count sketches of two or more vectors are combined by circular convolution,
computed with an FFT, giving a ``d``-dimensional approximation of their
outer product. The package also provides baselines, soft attention, planted
synthetic tasks, a training harness and a command-line front end.
"""

from .exceptions import ConfigurationError, CorruptFileError, NumericalError, TrainingDivergedError
from .fft import circular_convolve, fft_forward, fft_inverse
from .mcb import McbOperator, full_bilinear_param_count, mcb_backward, mcb_forward, mcb_param_count
from .models import GroundingNetwork, ModelSpec, PoolingNetwork
from .nn import PoolingMethod, parse_method
from .sketch import CountSketchParams, sample_params

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "CorruptFileError",
    "NumericalError",
    "TrainingDivergedError",
    "circular_convolve",
    "fft_forward",
    "fft_inverse",
    "McbOperator",
    "mcb_forward",
    "mcb_backward",
    "full_bilinear_param_count",
    "mcb_param_count",
    "ModelSpec",
    "PoolingNetwork",
    "GroundingNetwork",
    "PoolingMethod",
    "parse_method",
    "CountSketchParams",
    "sample_params",
]
