"""CNN-LSTM satellite-fusion pipeline for fractional inundation mapping,
with a from-scratch autodiff engine and a synthetic scene benchmark."""

from .autograd import Tensor, no_grad
from .model import ArchSpec, BaselineCNN, FusionModel, init_params

__all__ = ["Tensor", "no_grad", "ArchSpec", "BaselineCNN", "FusionModel",
           "init_params"]
__version__ = "0.1.0"
