"""Multi-frame super-resolution of simulated SPAD time-of-flight depth video."""

from .dufnet import DUFNetwork, NetConfig
from .estimators import BicubicUpscaler, DUFSuperResolver, SPADSimulator
from .spadsim import OpticalParams
from .trainer import TrainConfig

__version__ = "0.1.0"

__all__ = ["BicubicUpscaler", "DUFNetwork", "DUFSuperResolver", "NetConfig", "OpticalParams",
           "SPADSimulator", "TrainConfig", "__version__"]
