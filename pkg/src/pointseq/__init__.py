"""Point-cloud learning with multi-scale region sequences and attention.

The package is self-contained: geometry, the autodiff engine, the network,
training, data handling, and the command line live in the submodules re-
exported here.
"""

from . import autograd, config, data, geometry, model, training
from .errors import ConfigError, DataError, ParseError, ShapeError

__version__ = "0.1.0"

__all__ = [
    "autograd",
    "config",
    "data",
    "geometry",
    "model",
    "training",
    "ConfigError",
    "DataError",
    "ParseError",
    "ShapeError",
    "__version__",
]
