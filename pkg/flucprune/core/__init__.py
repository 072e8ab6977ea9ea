from .const import SiteKind
from .errors import (
    ConfigError, ConsistencyError, FlucPruneError, FormatError, IngestionError,
    InputError, InsufficientDataError, NumericsError, ShapeError,
)
from .model import (
    ActivationTap, Block, Model, ModelConfig, PruneSite,
    config_param_count, forward, init_model, param_count, prunable_param_count,
)
from .modelio import load_model, model_key, save_model
from .rng import Rng, rand_normal
from .tensor import Tensor2, matmul, rowwise_softmax
