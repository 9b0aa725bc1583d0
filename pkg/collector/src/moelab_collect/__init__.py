"""Routing-trace collection from MoE transformer checkpoints.

Hooks each supported model's router modules during plain forward
passes and writes the decisions as a binary .moet trace for the
analyzer toolkit to consume.
"""

from .adapters import MixtralAdapter, RouterTap, SwitchTransformersAdapter, resolve_adapter, supported_model_types
from .collect import CollectResult, collect_trace, iter_documents
from .config import CollectorConfig, TextSource
from .errors import CollectorError, StreamNotSupported, TokenizationUnderflow, UnsupportedArchitecture
from .writer import CollectedSequence, LayerSpec, encode_trace, write_moet

__version__ = "0.1.0"

__all__ = [
    "CollectResult",
    "CollectedSequence",
    "CollectorConfig",
    "CollectorError",
    "LayerSpec",
    "MixtralAdapter",
    "RouterTap",
    "StreamNotSupported",
    "SwitchTransformersAdapter",
    "TextSource",
    "TokenizationUnderflow",
    "UnsupportedArchitecture",
    "collect_trace",
    "encode_trace",
    "iter_documents",
    "resolve_adapter",
    "supported_model_types",
    "write_moet",
    "__version__",
]
