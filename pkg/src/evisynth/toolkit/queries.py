"""Query-language helpers: tool schema definitions, Boolean syntax, patent query strings."""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from typing import Callable

from .registry import ParamSpec, ToolDefinition, ToolValidationError

INCHI_KEY_PATTERN = r"[A-Z]{14}-[A-Z]{10}-[A-Z]"

# Syntactic SMILES charset: enough to reject garbage without a cheminformatics
# dependency. A real canonicalizer can be plugged in for live backends.
_SMILES_CHARSET = re.compile(r"[A-Za-z0-9@+\-\[\]()=#$:/\\%.*]+")

ChemicalNormalizer = Callable[[str], str]


def syntactic_normalize_smiles(value: str) -> str:
    """Default normalizer: strip whitespace, enforce the SMILES charset and a leading element."""
    stripped = "".join(value.split())
    if not stripped or not _SMILES_CHARSET.fullmatch(stripped):
        raise ValueError(f"not a syntactically plausible SMILES string: {value!r}")
    if not (stripped[0].isalpha() and stripped[0].isupper()) and stripped[0] != "[":
        raise ValueError("SMILES must open with an uppercase element or a bracket atom")
    return stripped


_chemical_normalizer: ChemicalNormalizer = syntactic_normalize_smiles


def set_chemical_normalizer(normalizer: ChemicalNormalizer) -> None:
    """Swap in a different canonicalization routine (e.g. a cheminformatics one)."""
    global _chemical_normalizer
    _chemical_normalizer = normalizer


TRIAL_STATUS_VALUES = (
    "ACTIVE_NOT_RECRUITING",
    "APPROVED_FOR_MARKETING",
    "AVAILABLE",
    "COMPLETED",
    "ENROLLING_BY_INVITATION",
    "NO_LONGER_AVAILABLE",
    "NOT_YET_RECRUITING",
    "RECRUITING",
    "SUSPENDED",
    "TEMPORARILY_NOT_AVAILABLE",
    "TERMINATED",
    "UNKNOWN",
    "WITHDRAWN",
    "WITHHELD",
)

TRIAL_DEFAULT_FIELDS = (
    "NCTId",
    "BriefTitle",
    "OverallStatus",
    "BriefSummary",
    "Condition",
    "Phase",
    "InterventionName",
)


# ---------------------------------------------------------------------------
# Boolean condition syntax: AND/OR with parentheses, parsed then re-rendered
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoolNode:
    """Either an atom (op == '') or a connective over ≥2 children."""

    op: str
    atom: str = ""
    children: tuple["BoolNode", ...] = ()


def _tokenize(expression: str) -> list[str]:
    tokens: list[str] = []
    buf: list[str] = []
    for ch in expression:
        if ch in "()":
            if buf:
                tokens.append("".join(buf).strip())
                buf.clear()
            tokens.append(ch)
        elif ch.isspace():
            if buf:
                tokens.append("".join(buf).strip())
                buf.clear()
        else:
            buf.append(ch)
    if buf:
        tokens.append("".join(buf).strip())
    return [t for t in tokens if t]


def parse_boolean_expression(expression: str) -> BoolNode:
    """Parse AND/OR syntax with parentheses; raises ValueError on malformed input."""
    tokens = _tokenize(expression)
    if not tokens:
        raise ValueError("empty boolean expression")
    pos = 0

    def parse_expr() -> BoolNode:
        nonlocal pos
        operands = [parse_operand()]
        connectors: list[str] = []
        while pos < len(tokens) and tokens[pos].upper() in ("AND", "OR"):
            connectors.append(tokens[pos].upper())
            pos += 1
            operands.append(parse_operand())
        if not connectors:
            return operands[0]
        # left-to-right; same-level mixed connectors keep their positions
        node = operands[0]
        for connector, operand in zip(connectors, operands[1:]):
            if node.op == connector:
                node = BoolNode(connector, children=node.children + (operand,))
            else:
                node = BoolNode(connector, children=(node, operand))
        return node

    def parse_operand() -> BoolNode:
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError("dangling connector in boolean expression")
        if tokens[pos] == "(":
            pos += 1
            node = parse_expr()
            if pos >= len(tokens) or tokens[pos] != ")":
                raise ValueError("unbalanced parentheses in boolean expression")
            pos += 1
            return node
        if tokens[pos] == ")":
            raise ValueError("unexpected ')' in boolean expression")
        words: list[str] = []
        while pos < len(tokens) and tokens[pos] not in ("(", ")") and tokens[pos].upper() not in ("AND", "OR"):
            words.append(tokens[pos])
            pos += 1
        if not words:
            raise ValueError("empty operand in boolean expression")
        return BoolNode("", atom=" ".join(words))

    tree = parse_expr()
    if pos != len(tokens):
        raise ValueError("unbalanced parentheses in boolean expression")
    return tree


def render_boolean_expression(node: BoolNode, top: bool = True) -> str:
    if node.op == "":
        return node.atom if top else f"({node.atom})"
    inner = f" {node.op} ".join(render_boolean_expression(c, top=False) for c in node.children)
    return inner if top else f"({inner})"


# ---------------------------------------------------------------------------
# Cross-field rules
# ---------------------------------------------------------------------------

def _patents_require_terms(args: dict) -> None:
    if not args.get("text_terms") and not args.get("chemical_terms"):
        raise ToolValidationError("text_terms", "at least one text or chemical term is required")


def _patents_date_order(args: dict) -> None:
    start, end = args.get("start_date"), args.get("end_date")
    if start and end:
        lo = datetime.strptime(start, "%Y/%m/%d")
        hi = datetime.strptime(end, "%Y/%m/%d")
        if lo > hi:
            raise ToolValidationError("start_date", "start_date must be <= end_date")


def _trials_require_criterion(args: dict) -> None:
    if not any(args.get(k) for k in ("condition", "intervention", "term")):
        raise ToolValidationError("condition", "one of condition/intervention/term is required")


def _trials_boolean_syntax(args: dict) -> None:
    for name in ("condition", "intervention"):
        value = args.get(name)
        if value:
            try:
                args[name] = render_boolean_expression(parse_boolean_expression(value))
            except ValueError as exc:
                raise ToolValidationError(name, f"bad boolean syntax: {exc}") from None


def _trials_date_range(args: dict) -> None:
    value = args.get("date_range")
    if not value:
        return
    parts = value.split("..")
    if len(parts) != 2:
        raise ToolValidationError("date_range", "expected YYYY-MM-DD..YYYY-MM-DD")
    for part in parts:
        try:
            datetime.strptime(part, "%Y-%m-%d")
        except ValueError:
            raise ToolValidationError("date_range", f"endpoint {part!r} does not parse as %Y-%m-%d") from None


def _pubmed_balanced(args: dict) -> None:
    query = args.get("query", "")
    depth = 0
    for ch in query:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ToolValidationError("query", "unbalanced parentheses")
    if depth != 0:
        raise ToolValidationError("query", "unbalanced parentheses")
    if query.count('"') % 2 != 0:
        raise ToolValidationError("query", "unbalanced quotes")


# ---------------------------------------------------------------------------
# Tool definitions
# ---------------------------------------------------------------------------

def patents_tool() -> ToolDefinition:
    return ToolDefinition(
        name="search_patents",
        description="Patent search over text and chemical structure terms",
        params=(
            ParamSpec(
                "text_terms",
                "struct_list",
                fields=(
                    ParamSpec("value", "string", required=True),
                    ParamSpec("where", "enum", enum=("TITLE", "ABSTRACT", "CLAIM", "FULL_DOCUMENT"), default="FULL_DOCUMENT"),
                    ParamSpec("match", "enum", enum=("PARTIAL", "EXACT"), default="PARTIAL"),
                ),
            ),
            ParamSpec(
                "chemical_terms",
                "struct_list",
                fields=(
                    ParamSpec("value", "string", required=True),
                    ParamSpec("molecule_type", "enum", enum=("SMILES", "INCHI_KEY"), required=True),
                    ParamSpec("chemical_search_type", "enum", enum=("EXACT", "SIMILAR", "SUBSTRUCTURE"), default="EXACT"),
                ),
            ),
            ParamSpec("text_connector", "enum", enum=("AND", "OR"), default="AND"),
            ParamSpec("assignees", "string_list"),
            ParamSpec("status", "enum", enum=("GRANT", "APPLICATION", "ALL"), default="ALL"),
            ParamSpec("start_date", "date", date_format="%Y/%m/%d"),
            ParamSpec("end_date", "date", date_format="%Y/%m/%d"),
            ParamSpec("limit", "integer", default=10, minimum=10, maximum=100),
        ),
        rules=(_patents_require_terms, _patents_date_order, _validate_inchi_keys, _normalize_smiles_terms),
    )


def _validate_inchi_keys(args: dict) -> None:
    for i, term in enumerate(args.get("chemical_terms", [])):
        if term.get("molecule_type") == "INCHI_KEY" and not re.fullmatch(INCHI_KEY_PATTERN, term["value"]):
            raise ToolValidationError(
                f"chemical_terms[{i}].value", f"does not match InChIKey pattern {INCHI_KEY_PATTERN}"
            )


def _normalize_smiles_terms(args: dict) -> None:
    for i, term in enumerate(args.get("chemical_terms", [])):
        if term.get("molecule_type") == "SMILES":
            try:
                term["value"] = _chemical_normalizer(term["value"])
            except ValueError as exc:
                raise ToolValidationError(f"chemical_terms[{i}].value", str(exc)) from None


def trials_tool() -> ToolDefinition:
    return ToolDefinition(
        name="search_clinical_trials",
        description="Registered-trial search with Boolean condition/intervention syntax",
        params=(
            ParamSpec("condition", "string"),
            ParamSpec("intervention", "string"),
            ParamSpec("term", "string"),
            ParamSpec("status", "string_list"),
            ParamSpec("date_range", "string"),
            ParamSpec("limit", "integer", default=50, minimum=1, maximum=1000),
        ),
        rules=(_trials_require_criterion, _trials_status_values, _trials_boolean_syntax, _trials_date_range),
    )


def _trials_status_values(args: dict) -> None:
    statuses = args.get("status")
    if not statuses:
        return
    folded = []
    for i, value in enumerate(statuses):
        upper = value.upper()
        if upper not in TRIAL_STATUS_VALUES:
            raise ToolValidationError(f"status[{i}]", f"must be one of the {len(TRIAL_STATUS_VALUES)} registry statuses")
        folded.append(upper)
    args["status"] = folded


def pubmed_tool() -> ToolDefinition:
    return ToolDefinition(
        name="search_pubmed",
        description="Literature search in native field-tag syntax",
        params=(
            ParamSpec("query", "string", required=True),
            ParamSpec("max_results", "integer", default=80, minimum=1),
            ParamSpec("sort", "enum", enum=("relevance", "date"), default="relevance"),
            ParamSpec("min_date", "date", date_format="%Y/%m/%d"),
            ParamSpec("max_date", "date", date_format="%Y/%m/%d"),
        ),
        rules=(_pubmed_balanced,),
    )


def resolve_entity_tool() -> ToolDefinition:
    return ToolDefinition(
        name="resolve_entity",
        description="Map a natural-language mention to canonical identifiers",
        params=(
            ParamSpec("mention", "string", required=True),
            ParamSpec("kind", "enum", enum=("gene_target", "molecule", "disease", "cell_line"), required=True),
        ),
    )


def target_to_drugs_tool() -> ToolDefinition:
    return ToolDefinition(
        name="target_to_drugs",
        description="Drugs associated with a target (development phase >= 2)",
        params=(ParamSpec("target", "string", required=True),),
    )


def evidence_lookup_tool() -> ToolDefinition:
    return ToolDefinition(
        name="get_target_disease_evidence",
        description="Target-disease evidence rows from the local evidence fixture",
        params=(
            ParamSpec("target", "string", required=True),
            ParamSpec("disease", "string", required=True),
        ),
    )


def conference_abstracts_tool() -> ToolDefinition:
    return ToolDefinition(
        name="search_conference_abstracts",
        description="Filtered retrieval over the indexed conference-abstract corpus",
        params=(
            ParamSpec("query", "string", required=True),
            ParamSpec("genes", "string_list"),
            ParamSpec("disease_type", "string"),
            ParamSpec("abstract_type", "enum", enum=("late_breaking", "oral", "poster", "unknown")),
            ParamSpec("top_k", "integer", default=5, minimum=1, maximum=50),
        ),
    )


def default_tools() -> tuple[ToolDefinition, ...]:
    return (
        patents_tool(),
        trials_tool(),
        pubmed_tool(),
        resolve_entity_tool(),
        target_to_drugs_tool(),
        evidence_lookup_tool(),
        conference_abstracts_tool(),
    )


# ---------------------------------------------------------------------------
# Patent backend query string
# ---------------------------------------------------------------------------

_TEXT_FIELD_CODES = {"TITLE": "TI", "ABSTRACT": "AB", "CLAIM": "CL", "FULL_DOCUMENT": "FD"}
_CHEM_CODES = {"SUBSTRUCTURE": "SSS", "SIMILAR": "SIM", "EXACT": "CHEM"}


def build_patent_query(args: dict) -> str:
    """Render a validated patent argument map to the backend's field-code string.

    Pure function of the normalized args: same input, same string.
    """
    text_parts: list[str] = []
    for term in args.get("text_terms", []):
        code = _TEXT_FIELD_CODES[term["where"]]
        if term["match"] == "EXACT":
            text_parts.append(f'{code}="{term["value"]}"')
        else:
            text_parts.append(f'{code}=({term["value"]})')
    connector = f" {args.get('text_connector', 'AND')} "
    clauses: list[str] = []
    if text_parts:
        clauses.append(connector.join(text_parts))
    for term in args.get("chemical_terms", []):
        code = _CHEM_CODES[term["chemical_search_type"]]
        clauses.append(f"{code}=({term['value']})")
    for assignee in args.get("assignees", []):
        clauses.append(f'AN="{assignee}"')
    status = args.get("status", "ALL")
    if status != "ALL":
        clauses.append(f"ST={status}")
    if args.get("start_date") and args.get("end_date"):
        clauses.append(f"DR={args['start_date']}..{args['end_date']}")
    return " AND ".join(clauses)
