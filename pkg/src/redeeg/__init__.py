"""Sleep EEG event detection with recurrent dense-segmentation networks."""

__version__ = "0.1.0"

from .sigio import EventList, Recording, Signal  # noqa: E402
from .redmodel import ModelConfig, REDNetwork  # noqa: E402
from .trainer import TrainConfig  # noqa: E402
from .estimators import MorletCWT, Preprocessor, REDDetector  # noqa: E402

__all__ = ["EventList", "Recording", "Signal", "ModelConfig", "REDNetwork", "TrainConfig",
           "MorletCWT", "Preprocessor", "REDDetector", "__version__"]
