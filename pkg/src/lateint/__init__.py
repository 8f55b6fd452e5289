"""Late-interaction retrieval engine over token-level embedding files."""

from .types import (
    DocumentRecord,
    EngineError,
    EvalRecord,
    MappingNetwork,
    QueryBundle,
    TokenMatrix,
    VisualFeature,
    validate,
)

__all__ = [
    "DocumentRecord",
    "EngineError",
    "EvalRecord",
    "MappingNetwork",
    "QueryBundle",
    "TokenMatrix",
    "VisualFeature",
    "validate",
]
