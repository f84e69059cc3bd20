"""Learned image compression with frequency-aware transformer blocks and a
transformer-based channel-wise autoregressive entropy model, on a small numpy
autodiff engine."""

from .bitstream import Bitstream, FormatError
from .model import FatLic, ModelConfig, ModelMismatchError, compress, decompress, load_model
from .tensor import Tensor, no_grad

__version__ = "0.1.0"
