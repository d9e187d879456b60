"""Fixture-backed entity grounding: alias-folded lookup and target-to-drug mapping."""

from __future__ import annotations

import difflib
from importlib import resources
from pathlib import Path

from ..core import CanonicalEntity


class UnresolvedEntityError(Exception):
    def __init__(self, mention: str, kind: str, suggestions: list[str]) -> None:
        hint = f"; nearest aliases: {', '.join(suggestions)}" if suggestions else ""
        super().__init__(f"unresolved entity {mention!r} (kind {kind}){hint}")
        self.mention = mention
        self.suggestions = suggestions


def fold_alias(mention: str) -> str:
    """Case/punctuation fold: lowercase, keep only letters and digits."""
    return "".join(ch for ch in mention.casefold() if ch.isalnum())


class EntityStore:
    """Flat-table alias store: rows of (alias, kind, canonical_name, namespace, id).

    Lookup is insensitive to case and hyphen/space variants of any listed
    alias; the resolved entity carries every namespace id the store holds for
    that canonical name.
    """

    def __init__(self) -> None:
        # (folded alias, kind) -> canonical name; (canonical, kind) -> {namespace: id}
        self._alias: dict[tuple[str, str], str] = {}
        self._ids: dict[tuple[str, str], dict[str, str]] = {}
        self._aliases_of: dict[tuple[str, str], list[str]] = {}
        # target CHEMBL id -> [(drug name, molecule id, max phase)]
        self._drugs: dict[str, list[tuple[str, str, int]]] = {}

    def add_row(self, alias: str, kind: str, canonical_name: str, namespace: str, identifier: str) -> None:
        key = (fold_alias(alias), kind)
        self._alias[key] = canonical_name
        self._ids.setdefault((canonical_name, kind), {})[namespace] = identifier
        self._aliases_of.setdefault((canonical_name, kind), [])
        if alias not in self._aliases_of[(canonical_name, kind)]:
            self._aliases_of[(canonical_name, kind)].append(alias)

    def add_drug(self, target_chembl: str, drug_name: str, molecule_chembl: str, max_phase: int) -> None:
        self._drugs.setdefault(target_chembl, []).append((drug_name, molecule_chembl, max_phase))

    def resolve(self, mention: str, kind: str) -> CanonicalEntity:
        """Alias-insensitive lookup; unknown mentions raise with nearest-alias suggestions."""
        if not mention:
            raise ValueError("mention must be non-empty")
        canonical = self._alias.get((fold_alias(mention), kind))
        if canonical is None:
            pool = [a for (c, k), aliases in self._aliases_of.items() if k == kind for a in aliases]
            suggestions = difflib.get_close_matches(mention, pool, n=3, cutoff=0.6)
            raise UnresolvedEntityError(mention, kind, suggestions)
        ids = self._ids[(canonical, kind)]
        return CanonicalEntity(
            mention=mention,
            kind=kind,
            canonical_name=canonical,
            ids=tuple(sorted(ids.items())),
        )

    def target_to_drugs(self, target: CanonicalEntity) -> list[tuple[str, str, int]]:
        """Phase >= 2 drugs for a target, ordered by phase desc then name."""
        chembl = target.id_for("CHEMBL_TARGET")
        if chembl is None:
            raise ValueError(f"target {target.canonical_name!r} has no CHEMBL_TARGET id")
        if chembl not in self._drugs:
            raise UnresolvedEntityError(chembl, "gene_target", [])
        rows = [row for row in self._drugs[chembl] if row[2] >= 2]
        rows.sort(key=lambda row: (-row[2], row[0]))
        return rows

    def normalize_symbol(self, mention: str) -> str:
        """Canonical gene symbol via alias folding; unknown symbols fold to uppercase."""
        canonical = self._alias.get((fold_alias(mention), "gene_target"))
        if canonical is not None:
            return canonical
        return "".join(ch for ch in mention if ch.isalnum()).upper()

    def known_aliases(self, kind: str) -> tuple[str, ...]:
        return tuple(sorted({a for (c, k), aliases in self._aliases_of.items() if k == kind for a in aliases}))


def load_store(entities_path: Path, drugs_path: Path) -> EntityStore:
    store = EntityStore()
    for line in entities_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        alias, kind, canonical, namespace, identifier = [part.strip() for part in line.split("\t")]
        store.add_row(alias, kind, canonical, namespace, identifier)
    for line in drugs_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        target, drug, molecule, phase = [part.strip() for part in line.split("\t")]
        store.add_drug(target, drug, molecule, int(phase))
    return store


def data_dir() -> Path:
    return Path(str(resources.files("evisynth").joinpath("data")))


def load_default_store() -> EntityStore:
    base = data_dir()
    return load_store(base / "entities.tsv", base / "target_drugs.tsv")
