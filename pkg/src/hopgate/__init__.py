"""hopgate - FLOP-instrumented memory network QA with adaptive hop gating and FC pruning"""

__version__ = "0.1.0"

from .engine import HopPolicy, embed_memories, forward
from .gate import Gate, GateConfig, GateMode
from .pruning import PrunedFC, PruneParams
from .state import AppMode, HyperParams, ModelWeights, Prediction, Route, Variant
from .tensor import FlopCategory, FlopLedger

__all__ = [
    "AppMode",
    "FlopCategory",
    "FlopLedger",
    "Gate",
    "GateConfig",
    "GateMode",
    "HopPolicy",
    "HyperParams",
    "ModelWeights",
    "Prediction",
    "PrunedFC",
    "PruneParams",
    "Route",
    "Variant",
    "embed_memories",
    "forward",
]
