"""Declarative tool schemas and argument validation/normalization.

Validation fills defaults, folds enum case to the canonical spelling, parses
dates, and rejects (never clamps) out-of-range values. Every error names the
offending field and the violated constraint, so agents can observe and
self-correct. validate_call is idempotent: running it on its own output is a
no-op.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Callable


class ToolValidationError(Exception):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass(frozen=True)
class ParamSpec:
    """One parameter: semantic type, required flag, and a machine-checkable constraint set."""

    name: str
    kind: str  # string | integer | enum | date | string_list | struct_list | boolean
    required: bool = False
    default: Any = None
    enum: tuple[str, ...] = ()
    minimum: int | None = None
    maximum: int | None = None
    pattern: str | None = None
    pattern_name: str | None = None
    date_format: str | None = None  # strptime format
    fields: tuple["ParamSpec", ...] = ()  # for struct_list items


@dataclass(frozen=True)
class ToolDefinition:
    name: str
    description: str
    params: tuple[ParamSpec, ...]
    backend: str = "fixture"  # fixture | replay | live
    rules: tuple[Callable[[dict], None], ...] = ()  # cross-field constraints

    def __post_init__(self) -> None:
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"tool {self.name!r}: duplicate param names")

    def param(self, name: str) -> ParamSpec | None:
        for spec in self.params:
            if spec.name == name:
                return spec
        return None


def _fold_enum(spec: ParamSpec, field_name: str, value: Any) -> str:
    if not isinstance(value, str):
        raise ToolValidationError(field_name, f"expected one of {list(spec.enum)}, got {value!r}")
    folded = {v.upper(): v for v in spec.enum}
    hit = folded.get(value.upper())
    if hit is None:
        raise ToolValidationError(field_name, f"must be one of {list(spec.enum)}, got {value!r}")
    return hit


def _check_date(spec: ParamSpec, field_name: str, value: Any) -> str:
    fmt = spec.date_format or "%Y/%m/%d"
    if not isinstance(value, str):
        raise ToolValidationError(field_name, f"expected a {fmt} date string")
    try:
        datetime.strptime(value, fmt)
    except ValueError:
        raise ToolValidationError(field_name, f"does not parse as {fmt}") from None
    return value


def _check_scalar(spec: ParamSpec, field_name: str, value: Any) -> Any:
    if spec.kind == "string":
        if not isinstance(value, str):
            raise ToolValidationError(field_name, "expected a string")
        if spec.pattern and not re.fullmatch(spec.pattern, value):
            constraint = spec.pattern_name or spec.pattern
            raise ToolValidationError(field_name, f"does not match {constraint}")
        return value
    if spec.kind == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ToolValidationError(field_name, "expected an integer")
        if spec.minimum is not None and value < spec.minimum:
            raise ToolValidationError(field_name, f"must be >= {spec.minimum} (limit {spec.minimum}..{spec.maximum})")
        if spec.maximum is not None and value > spec.maximum:
            raise ToolValidationError(field_name, f"must be <= {spec.maximum}")
        return value
    if spec.kind == "boolean":
        if not isinstance(value, bool):
            raise ToolValidationError(field_name, "expected a boolean")
        return value
    if spec.kind == "enum":
        return _fold_enum(spec, field_name, value)
    if spec.kind == "date":
        return _check_date(spec, field_name, value)
    raise ToolValidationError(field_name, f"unsupported param kind {spec.kind!r}")


def _check_value(spec: ParamSpec, field_name: str, value: Any) -> Any:
    if spec.kind == "string_list":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ToolValidationError(field_name, "expected a list of strings")
        item_spec = ParamSpec(spec.name, "string", pattern=spec.pattern, pattern_name=spec.pattern_name)
        return [_check_scalar(item_spec, f"{field_name}[{i}]", v) for i, v in enumerate(value)]
    if spec.kind == "struct_list":
        if not isinstance(value, list):
            raise ToolValidationError(field_name, "expected a list of objects")
        out = []
        for i, item in enumerate(value):
            if not isinstance(item, dict):
                raise ToolValidationError(f"{field_name}[{i}]", "expected an object")
            normalized: dict[str, Any] = {}
            known = {f.name for f in spec.fields}
            for key in item:
                if key not in known:
                    raise ToolValidationError(f"{field_name}[{i}].{key}", "unknown field")
            for sub in spec.fields:
                if sub.name not in item:
                    if sub.required:
                        raise ToolValidationError(f"{field_name}[{i}].{sub.name}", "required field missing")
                    if sub.default is not None:
                        normalized[sub.name] = sub.default
                    continue
                normalized[sub.name] = _check_scalar(sub, f"{field_name}[{i}].{sub.name}", item[sub.name])
            out.append(normalized)
        return out
    return _check_scalar(spec, field_name, value)


def validate_call(tool: ToolDefinition, args: dict[str, Any]) -> dict[str, Any]:
    """Normalize an argument map against the tool's schema.

    Returns a fresh map with defaults filled and enum case folded. Raises
    ToolValidationError naming the offending field on any violation.
    """
    known = {p.name for p in tool.params}
    for key in args:
        if key not in known:
            raise ToolValidationError(key, f"unknown parameter for tool {tool.name!r}")
    normalized: dict[str, Any] = {}
    for spec in tool.params:
        if spec.name not in args or args[spec.name] is None:
            if spec.required:
                raise ToolValidationError(spec.name, "required parameter missing")
            if spec.default is not None:
                normalized[spec.name] = spec.default
            continue
        normalized[spec.name] = _check_value(spec, spec.name, args[spec.name])
    for rule in tool.rules:
        rule(normalized)
    return normalized


class ToolRegistry:
    """Read-only after construction; safe for concurrent lookups."""

    def __init__(self) -> None:
        self._tools: dict[str, ToolDefinition] = {}

    def register(self, tool: ToolDefinition) -> None:
        if tool.name in self._tools:
            raise ValueError(f"tool {tool.name!r} already registered")
        self._tools[tool.name] = tool

    def get(self, name: str) -> ToolDefinition:
        if name not in self._tools:
            raise KeyError(f"tool {name!r} not registered")
        return self._tools[name]

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self._tools))

    def __contains__(self, name: str) -> bool:
        return name in self._tools
