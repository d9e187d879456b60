"""Conference-abstract chunk metadata extraction and a filtered retrieval index.

Extraction is pure regex/dictionary work: deterministic and total over
arbitrary text. Retrieval filters candidates on metadata first, then ranks by
cosine similarity under a pluggable embedder; the default is a feature-hash
stub (384 dims) so everything runs offline.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .toolkit.entities import data_dir

INDEX_FORMAT = "evisynth-corpus-index"
INDEX_VERSION = 1
EMBEDDING_DIM = 384

NCT_RE = re.compile(r"NCT\d{8}")
PHASE_RE = re.compile(r"[Pp]hase\s*([0-9IVX]+(?:\s*/\s*[0-9IVX]+)?[ab]?)")
ABSTRACT_ID_RE = re.compile(r"[Aa]bstract\s+#?\s*([A-Za-z0-9.\-]+)")
LATE_BREAKING_RE = re.compile(r"late[\s-]?breaking", re.IGNORECASE)
ORAL_RE = re.compile(r"\boral\b", re.IGNORECASE)
POSTER_RE = re.compile(r"\bposter\b", re.IGNORECASE)

_ROMAN = {"I": "1", "II": "2", "III": "3", "IV": "4"}


class QueryError(Exception):
    pass


@dataclass(frozen=True)
class ChunkMetadata:
    conference: str
    year: int
    page: int
    abstract_id: str | None = None
    section_header: str | None = None
    disease_type: str | None = None
    genes: tuple[str, ...] = ()
    drugs: tuple[str, ...] = ()
    phase: str | None = None
    nct_ids: tuple[str, ...] = ()
    abstract_type: str = "unknown"

    def as_dict(self) -> dict:
        return {
            "conference": self.conference,
            "year": self.year,
            "page": self.page,
            "abstract_id": self.abstract_id,
            "section_header": self.section_header,
            "disease_type": self.disease_type,
            "genes": list(self.genes),
            "drugs": list(self.drugs),
            "phase": self.phase,
            "nct_ids": list(self.nct_ids),
            "abstract_type": self.abstract_type,
        }


@dataclass
class ExtractionConfig:
    genes: tuple[str, ...]
    disease_keywords: tuple[tuple[str, tuple[str, ...]], ...]  # (category, keywords)
    drugs: tuple[str, ...]
    _gene_re: re.Pattern[str] = field(init=False, repr=False)
    _drug_res: tuple[tuple[str, re.Pattern[str]], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        ordered = sorted(self.genes, key=len, reverse=True)
        self._gene_re = re.compile(r"\b(" + "|".join(re.escape(g) for g in ordered) + r")\b")
        self._drug_res = tuple(
            (drug, re.compile(r"\b" + re.escape(drug) + r"\b", re.IGNORECASE)) for drug in self.drugs
        )

    @classmethod
    def load_default(cls) -> "ExtractionConfig":
        base = data_dir()
        genes = tuple(
            line.strip()
            for line in (base / "oncogenes.txt").read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#")
        )
        categories = []
        for line in (base / "disease_categories.tsv").read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            category, keywords = line.split("\t")
            categories.append((category, tuple(keywords.split("|"))))
        drugs = tuple(
            line.strip()
            for line in (base / "drug_lexicon.txt").read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#")
        )
        return cls(genes=genes, disease_keywords=tuple(categories), drugs=drugs)


def _normalize_phase(raw: str) -> str:
    parts = [p.strip() for p in raw.split("/")]
    out = []
    for part in parts:
        suffix = ""
        core = part
        if core and core[-1] in "ab":
            core, suffix = core[:-1], core[-1]
        out.append(_ROMAN.get(core.upper(), core) + suffix)
    return "/".join(out)


def extract_metadata(
    text: str,
    conference: str,
    year: int,
    page: int,
    config: ExtractionConfig,
    section_header: str | None = None,
) -> ChunkMetadata:
    """Deterministic regex/dictionary extraction; absent fields stay optional or unknown."""
    nct_ids = tuple(dict.fromkeys(NCT_RE.findall(text)))
    genes = tuple(dict.fromkeys(config._gene_re.findall(text)))
    drugs = tuple(drug for drug, pattern in config._drug_res if pattern.search(text))
    phase_match = PHASE_RE.search(text)
    phase = _normalize_phase(phase_match.group(1)) if phase_match else None
    abstract_match = ABSTRACT_ID_RE.search(text)
    abstract_id = abstract_match.group(1) if abstract_match else None
    disease_type = None
    folded = text.casefold()
    for category, keywords in config.disease_keywords:
        if any(keyword.casefold() in folded for keyword in keywords):
            disease_type = category
            break
    if LATE_BREAKING_RE.search(text):
        abstract_type = "late_breaking"
    elif ORAL_RE.search(text):
        abstract_type = "oral"
    elif POSTER_RE.search(text):
        abstract_type = "poster"
    else:
        abstract_type = "unknown"
    return ChunkMetadata(
        conference=conference,
        year=year,
        page=page,
        abstract_id=abstract_id,
        section_header=section_header,
        disease_type=disease_type,
        genes=genes,
        drugs=drugs,
        phase=phase,
        nct_ids=nct_ids,
        abstract_type=abstract_type,
    )


# ---------------------------------------------------------------------------
# Embedding + index
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashEmbedder:
    """Feature-hash stub embedder: deterministic, offline, constant 384-dim output."""

    def __init__(self, dim: int = EMBEDDING_DIM) -> None:
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dim, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.casefold()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vector[bucket] += sign
        norm = np.linalg.norm(vector)
        if norm > 0:
            vector /= norm
        return vector


_LIST_FIELDS = frozenset({"genes", "drugs", "nct_ids"})
_SCALAR_FIELDS = frozenset(
    {"conference", "year", "page", "abstract_id", "section_header", "disease_type", "phase", "abstract_type"}
)


def metadata_matches(metadata: ChunkMetadata, metadata_filter: dict) -> bool:
    for key, wanted in metadata_filter.items():
        if key in _LIST_FIELDS:
            if wanted not in getattr(metadata, key):
                return False
        elif key in _SCALAR_FIELDS:
            if getattr(metadata, key) != wanted:
                return False
        else:
            raise QueryError(f"unknown metadata filter field {key!r}")
    return True


@dataclass(frozen=True)
class IndexedChunk:
    text: str
    metadata: ChunkMetadata
    embedding: np.ndarray
    order: int


class CorpusIndex:
    """Linear-scan retrieval index: metadata filter first, cosine ranking second."""

    def __init__(self, embedder: HashEmbedder | None = None) -> None:
        self.embedder = embedder or HashEmbedder()
        self._chunks: list[IndexedChunk] = []

    def add_chunk(self, text: str, metadata: ChunkMetadata) -> IndexedChunk:
        embedding = self.embedder.embed(text)
        if embedding.shape != (self.embedder.dim,):
            raise QueryError("embedder returned a wrong-length vector")
        chunk = IndexedChunk(text=text, metadata=metadata, embedding=embedding, order=len(self._chunks))
        self._chunks.append(chunk)
        return chunk

    def __len__(self) -> int:
        return len(self._chunks)

    def chunks(self) -> tuple[IndexedChunk, ...]:
        return tuple(self._chunks)

    def query(
        self, text: str, metadata_filter: dict | None = None, top_k: int | None = None
    ) -> list[tuple[IndexedChunk, float]]:
        """Candidates passing the filter, ranked by cosine; ties break by insertion order."""
        metadata_filter = metadata_filter or {}
        candidates = [c for c in self._chunks if metadata_matches(c.metadata, metadata_filter)]
        query_vec = self.embedder.embed(text)
        scored = [(chunk, float(np.dot(chunk.embedding, query_vec))) for chunk in candidates]
        scored.sort(key=lambda pair: (-pair[1], pair[0].order))
        if top_k is not None:
            scored = scored[:top_k]
        return scored

    # -- persistence: single file, versioned header ---------------------------

    def save(self, path: Path) -> None:
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "dim": self.embedder.dim,
            "chunks": [
                {"text": c.text, "metadata": c.metadata.as_dict(), "embedding": c.embedding.tolist()}
                for c in self._chunks
            ],
        }
        path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "CorpusIndex":
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload.get("format") != INDEX_FORMAT or payload.get("version") != INDEX_VERSION:
            raise QueryError(f"not a v{INDEX_VERSION} {INDEX_FORMAT} file")
        index = cls(HashEmbedder(payload["dim"]))
        for entry in payload["chunks"]:
            meta_raw = dict(entry["metadata"])
            metadata = ChunkMetadata(
                conference=meta_raw["conference"],
                year=meta_raw["year"],
                page=meta_raw["page"],
                abstract_id=meta_raw.get("abstract_id"),
                section_header=meta_raw.get("section_header"),
                disease_type=meta_raw.get("disease_type"),
                genes=tuple(meta_raw.get("genes", [])),
                drugs=tuple(meta_raw.get("drugs", [])),
                phase=meta_raw.get("phase"),
                nct_ids=tuple(meta_raw.get("nct_ids", [])),
                abstract_type=meta_raw.get("abstract_type", "unknown"),
            )
            chunk = IndexedChunk(
                text=entry["text"],
                metadata=metadata,
                embedding=np.asarray(entry["embedding"], dtype=np.float64),
                order=len(index._chunks),
            )
            index._chunks.append(chunk)
        return index


def parse_chunk_file(path: Path) -> tuple[str, dict]:
    """One structured-text file per chunk: key: value header lines, '---', then the text."""
    raw = path.read_text(encoding="utf-8")
    header, _, body = raw.partition("\n---\n")
    context: dict = {}
    for line in header.splitlines():
        if ":" in line:
            key, _, value = line.partition(":")
            context[key.strip()] = value.strip()
    return body.strip(), {
        "conference": context.get("conference", "unknown"),
        "year": int(context.get("year", 0)),
        "page": int(context.get("page", 0)),
        "section_header": context.get("section_header") or None,
    }
