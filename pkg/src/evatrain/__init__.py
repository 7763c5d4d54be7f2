"""evatrain: off-policy trainer for the evasion policy.

Soft actor-critic over the evasim wire protocol: newline-JSON episodes pulled
from a TCP environment server, a linear noise curriculum applied at every
reset, periodic deterministic evaluation on a second session, and weight
export in the versioned JSON format the evasion package loads. The package
deliberately never imports evasim — the protocol and the weight file are the
whole contract.
"""

from .client import EnvClient, ProtocolDesyncError
from .config import TrainConfig, TrainConfigError
from .export import ExportError, export_weights, load_actor, weight_document
from .train import TrainResult, curriculum_alpha, train

__all__ = [
    "EnvClient",
    "ProtocolDesyncError",
    "TrainConfig",
    "TrainConfigError",
    "ExportError",
    "export_weights",
    "load_actor",
    "weight_document",
    "TrainResult",
    "curriculum_alpha",
    "train",
]
