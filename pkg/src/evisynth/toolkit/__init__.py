from .registry import (
    ParamSpec,
    ToolDefinition,
    ToolRegistry,
    ToolValidationError,
    validate_call,
)
from .queries import build_patent_query, parse_boolean_expression, render_boolean_expression
from .entities import EntityStore, UnresolvedEntityError, load_default_store
from .backends import FixtureBackend, ReplayMissError, ReplayStore, ToolExecutor

__all__ = [
    "ParamSpec",
    "ToolDefinition",
    "ToolRegistry",
    "ToolValidationError",
    "validate_call",
    "build_patent_query",
    "parse_boolean_expression",
    "render_boolean_expression",
    "EntityStore",
    "UnresolvedEntityError",
    "load_default_store",
    "FixtureBackend",
    "ReplayStore",
    "ReplayMissError",
    "ToolExecutor",
]
