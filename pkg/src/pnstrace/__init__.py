"""Multimodal trajectory prediction with predecessor tracing, on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .config import TrainConfig  # noqa: E402
from .estimator import PnSPredictor, check_scenes  # noqa: E402
from .scene import Scene, build_scene  # noqa: E402

__all__ = ["PnSPredictor", "Scene", "TrainConfig", "build_scene", "check_scenes", "__version__"]
