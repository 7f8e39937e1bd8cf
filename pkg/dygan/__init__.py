from .errors import (
    CheckpointError, ConfigurationError, ContractViolationError, DimensionError, DyganError, OracleError,
    TensorFormatError, TrainingDivergedError,
)
from .model import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, count_params
from .tensor import Rng

__version__ = '1.0.0'
