"""Periodic-nested grouped attention forecaster on a small numpy autodiff core."""

__version__ = "0.1.0"

from .config import PenguinConfig, RunConfig, TrainConfig  # noqa: E402
from .model import PenguinModel  # noqa: E402

__all__ = ["PenguinConfig", "PenguinModel", "RunConfig", "TrainConfig", "__version__"]
