"""deltaserve: a stateful multi-agent tool-calling inference server built on a
deterministic, cost-accounted mock model.

The stack replaces GPU forward passes with a copy-model engine so every
architectural property (delta-only per-turn cost, constant-time prefix
restore, speculative forward-pass reduction, streaming tool-call early stop)
is measurable and testable at desk scale.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .config import ServerConfig
from .scheduler import InferenceCore

__version__ = "0.1.0"

__all__ = ["InferenceCore", "ServerConfig", "KERNEL_BACKEND", "__version__"]
