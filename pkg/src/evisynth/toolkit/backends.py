"""Fixture and record/replay backends for every registered tool.

Fixtures mimic the live services' response schemas exactly (trials return the
seven default fields, zero-result literature searches echo the backend's query
translation plus unrecognized terms) so agents exercise the same surface
offline. The replay store keeps one file per request digest.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Any

from ..core import Document, ProvenanceRef, Section, Table, TableRow
from .entities import EntityStore
from .queries import TRIAL_DEFAULT_FIELDS, default_tools, parse_boolean_expression, BoolNode
from .registry import ToolRegistry, validate_call


class BackendError(Exception):
    pass


class ReplayMissError(BackendError):
    def __init__(self, digest: str) -> None:
        super().__init__(f"replay miss: no recording for request digest {digest}")
        self.digest = digest


def request_digest(tool_name: str, args: dict[str, Any]) -> str:
    payload = json.dumps({"tool": tool_name, "args": args}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


# ---------------------------------------------------------------------------
# Document <-> JSON (for replay files and scripted fixtures)
# ---------------------------------------------------------------------------

def document_to_obj(doc: Document) -> dict:
    return {
        "sections": [{"name": s.name, "text": s.text} for s in doc.sections],
        "tables": [
            {
                "name": t.name,
                "columns": list(t.columns),
                "rows": [
                    {
                        "cells": list(r.cells),
                        "sources": [{"kind": s.kind, "value": s.value, "locator": s.locator} for s in r.sources],
                    }
                    for r in t.rows
                ],
            }
            for t in doc.tables
        ],
    }


def document_from_obj(obj: dict) -> Document:
    sections = tuple(Section(s["name"], s["text"]) for s in obj.get("sections", []))
    tables = tuple(
        Table(
            t["name"],
            tuple(t["columns"]),
            tuple(
                TableRow(
                    tuple(r["cells"]),
                    tuple(ProvenanceRef(s["kind"], s["value"], s.get("locator")) for s in r["sources"]),
                )
                for r in t["rows"]
            ),
        )
        for t in obj.get("tables", [])
    )
    return Document(sections=sections, tables=tables)


# ---------------------------------------------------------------------------
# Fixture backend
# ---------------------------------------------------------------------------

def _bool_matches(node: BoolNode, haystack: str) -> bool:
    if node.op == "":
        return node.atom.casefold() in haystack
    if node.op == "AND":
        return all(_bool_matches(c, haystack) for c in node.children)
    return any(_bool_matches(c, haystack) for c in node.children)


class FixtureBackend:
    """Serves tool calls from bundled JSON fixtures plus the entity store."""

    def __init__(self, fixtures_dir: Path, store: EntityStore) -> None:
        self._dir = fixtures_dir
        self._store = store
        self._cache: dict[str, Any] = {}

    def _load(self, name: str) -> Any:
        if name not in self._cache:
            path = self._dir / name
            self._cache[name] = json.loads(path.read_text(encoding="utf-8")) if path.exists() else []
        return self._cache[name]

    def execute(self, tool_name: str, args: dict[str, Any]) -> tuple[Document, list[str]]:
        handler = getattr(self, f"_run_{tool_name}", None)
        if handler is None:
            raise BackendError(f"no fixture backend for tool {tool_name!r}")
        return handler(args)

    # -- translation tools --------------------------------------------------

    def _run_resolve_entity(self, args: dict) -> tuple[Document, list[str]]:
        entity = self._store.resolve(args["mention"], args["kind"])
        source = ProvenanceRef("INTERNAL", "chembl_local")
        rows = (
            TableRow(
                (
                    entity.mention,
                    entity.kind,
                    entity.canonical_name,
                    ";".join(f"{ns}={ident}" for ns, ident in entity.ids),
                ),
                (source,),
            ),
        )
        table = Table("entities", ("mention", "kind", "canonical_name", "ids"), rows)
        return Document(tables=(table,)), []

    def _run_target_to_drugs(self, args: dict) -> tuple[Document, list[str]]:
        entity = self._store.resolve(args["target"], "gene_target")
        drugs = self._store.target_to_drugs(entity)
        source = ProvenanceRef("INTERNAL", "chembl_local")
        rows = tuple(TableRow((name, molecule, str(phase)), (source,)) for name, molecule, phase in drugs)
        table = Table("drugs", ("drug_name", "molecule_chembl_id", "max_phase"), rows)
        return Document(tables=(table,)), []

    # -- literature ----------------------------------------------------------

    def _run_search_pubmed(self, args: dict) -> tuple[Document, list[str]]:
        records = self._load("pubmed.json")
        terms = [t for t in re.split(r"[\s()\"]+", args["query"]) if t and t.upper() not in ("AND", "OR", "NOT")]
        bare = [re.sub(r"\[[^\]]*\]$", "", t) for t in terms]
        hits = []
        for record in records:
            haystack = f"{record['title']} {' '.join(record.get('keywords', []))}".casefold()
            if all(term.casefold() in haystack for term in bare):
                hits.append(record)
        hits = hits[: args.get("max_results", 80)]
        if not hits:
            vocabulary = {
                word.casefold()
                for record in records
                for word in re.split(r"\W+", f"{record['title']} {' '.join(record.get('keywords', []))}")
                if word
            }
            unrecognized = sorted({t for t in bare if t.casefold() not in vocabulary})
            translation = " AND ".join(f'"{t}"[All Fields]' for t in bare)
            diagnostics = [f"querytranslation: {translation}"]
            if unrecognized:
                diagnostics.append("unrecognized terms: " + ", ".join(unrecognized))
            return Document(sections=(Section("result", "0 results"),)), diagnostics
        rows = tuple(
            TableRow(
                (record["pmid"], record["title"], record["journal"], str(record["year"])),
                (ProvenanceRef("PMID", record["pmid"]),),
            )
            for record in hits
        )
        return Document(tables=(Table("publications", ("PMID", "Title", "Journal", "Year"), rows),)), []

    # -- trials ----------------------------------------------------------------

    def _run_search_clinical_trials(self, args: dict) -> tuple[Document, list[str]]:
        records = self._load("trials.json")
        hits = []
        for record in records:
            haystack = " ".join(str(record.get(f, "")) for f in TRIAL_DEFAULT_FIELDS).casefold()
            ok = True
            for criterion in ("condition", "intervention"):
                if args.get(criterion):
                    ok = ok and _bool_matches(parse_boolean_expression(args[criterion]), haystack)
            if args.get("term"):
                ok = ok and args["term"].casefold() in haystack
            if args.get("status"):
                ok = ok and record.get("OverallStatus", "").upper() in args["status"]
            if ok:
                hits.append(record)
        hits = hits[: args.get("limit", 50)]
        rows = tuple(
            TableRow(
                tuple(str(record.get(f, "")) for f in TRIAL_DEFAULT_FIELDS),
                (ProvenanceRef("NCT", record["NCTId"]),),
            )
            for record in hits
        )
        return Document(tables=(Table("trials", TRIAL_DEFAULT_FIELDS, rows),)), []

    # -- patents -----------------------------------------------------------------

    def _run_search_patents(self, args: dict) -> tuple[Document, list[str]]:
        records = self._load("patents.json")
        hits = []
        for record in records:
            haystack = f"{record['title']} {record.get('abstract', '')}".casefold()
            matches = [term["value"].casefold() in haystack for term in args.get("text_terms", [])]
            if args.get("text_connector", "AND") == "AND":
                text_ok = all(matches) if matches else True
            else:
                text_ok = any(matches) if matches else True
            chem_ok = all(
                term["value"] in record.get("chemistry", []) for term in args.get("chemical_terms", [])
            )
            status_ok = args.get("status", "ALL") == "ALL" or record.get("status") == args["status"]
            if text_ok and chem_ok and status_ok:
                hits.append(record)
        hits = hits[: args.get("limit", 10)]
        rows = tuple(
            TableRow(
                (record["patent_number"], record["title"], record.get("assignee", ""), record.get("status", "")),
                (ProvenanceRef("PATENT", record["patent_number"]),),
            )
            for record in hits
        )
        return Document(tables=(Table("patents", ("PatentNumber", "Title", "Assignee", "Status"), rows),)), []

    # -- target/disease evidence --------------------------------------------------

    def _run_get_target_disease_evidence(self, args: dict) -> tuple[Document, list[str]]:
        records = self._load("evidence.json")
        target = self._store.normalize_symbol(args["target"])
        hits = [
            record
            for record in records
            if self._store.normalize_symbol(record["target"]) == target
            and args["disease"].casefold() in record["disease"].casefold()
        ]
        rows = tuple(
            TableRow(
                (record["target"], record["disease"], record["evidence"], str(record["score"])),
                (ProvenanceRef(record["source_kind"], record["source_value"]),),
            )
            for record in hits
        )
        return Document(tables=(Table("evidence", ("Target", "Disease", "Evidence", "Score"), rows),)), []

    # -- conference abstracts (tiny fixture; the full index lives in corpus) -------

    def _run_search_conference_abstracts(self, args: dict) -> tuple[Document, list[str]]:
        records = self._load("abstracts.json")
        hits = []
        for record in records:
            if args.get("genes") and not set(args["genes"]) <= set(record.get("genes", [])):
                continue
            if args.get("disease_type") and record.get("disease_type") != args["disease_type"]:
                continue
            if args.get("abstract_type") and record.get("abstract_type") != args["abstract_type"]:
                continue
            hits.append(record)
        hits = hits[: args.get("top_k", 5)]
        rows = tuple(
            TableRow(
                (record["conference"], str(record["year"]), record["text"][:120]),
                (ProvenanceRef("DATASET", f"{record['conference']}-{record['year']}-p{record['page']}"),),
            )
            for record in hits
        )
        return Document(tables=(Table("abstracts", ("Conference", "Year", "Excerpt"), rows),)), []


class ReplayStore:
    """On-disk request/response store: one JSON file per request digest."""

    def __init__(self, directory: Path) -> None:
        self._dir = directory

    def path_for(self, digest: str) -> Path:
        return self._dir / f"{digest}.json"

    def record(self, tool_name: str, args: dict, doc: Document, diagnostics: list[str]) -> Path:
        self._dir.mkdir(parents=True, exist_ok=True)
        digest = request_digest(tool_name, args)
        payload = {
            "request": {"tool": tool_name, "args": args},
            "response": {"document": document_to_obj(doc), "diagnostics": diagnostics},
        }
        path = self.path_for(digest)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    def replay(self, tool_name: str, args: dict) -> tuple[Document, list[str]]:
        digest = request_digest(tool_name, args)
        path = self.path_for(digest)
        if not path.exists():
            raise ReplayMissError(digest)
        payload = json.loads(path.read_text(encoding="utf-8"))
        response = payload["response"]
        return document_from_obj(response["document"]), list(response["diagnostics"])


class ToolExecutor:
    """Validates then executes tool calls against the configured backend."""

    def __init__(
        self,
        registry: ToolRegistry,
        fixture: FixtureBackend,
        replay: ReplayStore | None = None,
        mode: str = "fixture",  # fixture | replay | record
    ) -> None:
        if mode not in ("fixture", "replay", "record"):
            raise BackendError(f"unknown executor mode {mode!r}")
        self.registry = registry
        self._fixture = fixture
        self._replay = replay
        self._mode = mode

    def validate(self, tool_name: str, args: dict) -> dict:
        return validate_call(self.registry.get(tool_name), args)

    def execute(self, tool_name: str, normalized_args: dict) -> tuple[Document, list[str]]:
        if self._mode == "replay":
            if self._replay is None:
                raise BackendError("replay mode requires a replay store")
            return self._replay.replay(tool_name, normalized_args)
        doc, diagnostics = self._fixture.execute(tool_name, normalized_args)
        if self._mode == "record" and self._replay is not None:
            self._replay.record(tool_name, normalized_args, doc, diagnostics)
        return doc, diagnostics

    def call(self, tool_name: str, args: dict) -> tuple[Document, list[str]]:
        return self.execute(tool_name, self.validate(tool_name, args))


def default_registry() -> ToolRegistry:
    registry = ToolRegistry()
    for tool in default_tools():
        registry.register(tool)
    return registry
