"""SpaceMeshLab on a small numpy autodiff core."""

from .config import ModelConfig, RunConfig, TrainConfig, TtaConfig
from .metrocon import ASPP, MetroCon, build_grid
from .model import SpaceMeshLab
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "ASPP",
    "MetroCon",
    "ModelConfig",
    "Parameter",
    "RunConfig",
    "SpaceMeshLab",
    "Tensor",
    "TrainConfig",
    "TtaConfig",
    "build_grid",
    "no_grad",
]
