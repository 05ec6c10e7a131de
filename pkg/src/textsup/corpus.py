"""Corpus and embedding data model: file formats, normalization, category means.

A corpus is an ordered list of categories, each with one or more text
descriptions. An embedding set carries one feature row per description,
order-aligned with its corpus. Rows are L2-normalized on load and stored
as float64 regardless of the file's declared precision, so cosine
similarity reduces to a plain dot product everywhere downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateVectorError, SchemaError
from .fileio import canonical_json, atomic_write_text, format_f32, format_f64, read_json

SOURCE_TAGS = ("template", "synonym", "generated", "custom")

CORPUS_SCHEMA_VERSION = 1
EMBEDDING_SCHEMA_VERSION = 1

#: Tolerance on |"unit" row norm - 1| accepted by validate().
NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class CategoryEntry:
    """One category with its ordered descriptions and per-description provenance."""

    name: str
    descriptions: tuple[str, ...]
    source_tags: tuple[str, ...]

    def __post_init__(self):
        if not self.name:
            raise SchemaError("category name must be non-empty")
        if len(self.descriptions) == 0:
            raise SchemaError(f"category {self.name!r} has no descriptions")
        if len(self.source_tags) != len(self.descriptions):
            raise SchemaError(
                f"category {self.name!r}: {len(self.source_tags)} source_tags for "
                f"{len(self.descriptions)} descriptions"
            )
        seen = set()
        for d in self.descriptions:
            if d in seen:
                raise SchemaError(f"category {self.name!r}: duplicate description {d!r}")
            seen.add(d)
        for t in self.source_tags:
            if t not in SOURCE_TAGS:
                raise SchemaError(f"category {self.name!r}: unknown source_tag {t!r}")


@dataclass(frozen=True)
class Corpus:
    """The supervision vocabulary: every category and its description set."""

    categories: tuple[CategoryEntry, ...]
    schema_version: int = CORPUS_SCHEMA_VERSION

    def __post_init__(self):
        if len(self.categories) == 0:
            raise SchemaError("corpus has no categories")
        names = [c.name for c in self.categories]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaError(f"duplicate category name(s): {sorted(dupes)}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "categories": [
                {
                    "name": c.name,
                    "descriptions": list(c.descriptions),
                    "source_tags": list(c.source_tags),
                }
                for c in self.categories
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Corpus":
        if not isinstance(doc, dict):
            raise SchemaError("corpus document must be a JSON object")
        if "categories" not in doc:
            raise SchemaError("corpus document missing field 'categories'")
        cats = []
        for i, raw in enumerate(doc["categories"]):
            for fld in ("name", "descriptions"):
                if fld not in raw:
                    raise SchemaError(f"categories[{i}] missing field {fld!r}")
            descriptions = tuple(raw["descriptions"])
            tags = tuple(raw.get("source_tags") or ("custom",) * len(descriptions))
            cats.append(CategoryEntry(raw["name"], descriptions, tags))
        return cls(tuple(cats), int(doc.get("schema_version", CORPUS_SCHEMA_VERSION)))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """Per-category description feature rows, unit-norm, all of dimension `dim`."""

    dim: int
    names: tuple[str, ...]
    matrices: tuple[np.ndarray, ...]  # one (s_n, dim) float64 array per category

    def __post_init__(self):
        if len(self.names) != len(self.matrices):
            raise SchemaError("names/matrices length mismatch")
        for name, mat in zip(self.names, self.matrices):
            if mat.ndim != 2 or mat.shape[1] != self.dim:
                raise SchemaError(f"category {name!r}: expected rows of dim {self.dim}, got shape {mat.shape}")
            if mat.shape[0] < 1:
                raise SchemaError(f"category {name!r}: no embedding rows")

    @property
    def num_categories(self) -> int:
        return len(self.names)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.matrices)


@dataclass(frozen=True)
class CategoryMeans:
    """Renormalized per-category mean embeddings (the class prototypes)."""

    names: tuple[str, ...]
    matrix: np.ndarray  # (m, dim), unit rows

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


@dataclass
class ValidationReport:
    """Everything found wrong with an embedding set / corpus pair."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def load_corpus(path: str | Path) -> Corpus:
    """Read and validate a corpus file."""
    return Corpus.from_dict(read_json(path))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical (key-sorted, newline-terminated) corpus form."""
    atomic_write_text(path, canonical_json(corpus.to_dict()))


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Rescale each row to unit L2 norm; zero rows are an error."""
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateVectorError("cannot normalize a zero vector")
    return rows / norms


def load_embeddings(path: str | Path, corpus: Corpus) -> EmbeddingSet:
    """Read an embedding file and align it against `corpus`.

    Rows are L2-normalized here no matter what the file holds; values are
    widened to float64 regardless of the file's `dtype`.
    """
    doc = read_json(path)
    for fld in ("dim", "dtype", "categories"):
        if fld not in doc:
            raise SchemaError(f"embedding document missing field {fld!r}")
    if doc["dtype"] not in ("f32", "f64"):
        raise SchemaError(f"embedding dtype must be f32 or f64, got {doc['dtype']!r}")
    dim = int(doc["dim"])
    if dim < 1:
        raise SchemaError(f"embedding dim must be positive, got {dim}")
    entries = doc["categories"]
    if len(entries) != len(corpus.categories):
        raise SchemaError(
            f"embedding file has {len(entries)} categories, corpus has {len(corpus.categories)}"
        )
    names = []
    mats = []
    for entry, cat in zip(entries, corpus.categories):
        name = entry.get("name")
        if name != cat.name:
            raise SchemaError(f"category order mismatch: embedding {name!r} vs corpus {cat.name!r}")
        vectors = entry.get("vectors")
        if vectors is None:
            raise SchemaError(f"category {name!r}: missing 'vectors'")
        if len(vectors) != len(cat.descriptions):
            raise SchemaError(
                f"category {name!r}: {len(vectors)} rows for {len(cat.descriptions)} descriptions"
            )
        mat = np.asarray(vectors, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != dim:
            raise SchemaError(f"category {name!r}: row dimension mismatch (expected {dim})")
        if not np.all(np.isfinite(mat)):
            raise SchemaError(f"category {name!r}: non-finite embedding values")
        try:
            mat = normalize_rows(mat)
        except DegenerateVectorError as exc:
            raise SchemaError(f"category {name!r}: zero embedding row") from exc
        names.append(name)
        mats.append(_freeze(mat))
    return EmbeddingSet(dim=dim, names=tuple(names), matrices=tuple(mats))


def write_embeddings(
    path: str | Path,
    names: Sequence[str],
    matrices: Iterable[np.ndarray],
    dtype: str = "f64",
    metadata: dict | None = None,
) -> None:
    """Write embedding rows in the interchange format (raw, not normalized here).

    Numbers are serialized at full precision for the declared dtype so the
    file round-trips losslessly.
    """
    if dtype not in ("f32", "f64"):
        raise SchemaError(f"dtype must be f32 or f64, got {dtype!r}")
    fmt = format_f32 if dtype == "f32" else format_f64
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    names = list(names)
    if not mats:
        raise SchemaError("no categories to write")
    if len(names) != len(mats):
        raise SchemaError(f"{len(names)} names for {len(mats)} matrices")
    for name, mat in zip(names, mats):
        if not np.all(np.isfinite(mat)):
            raise SchemaError(f"category {name!r}: refusing to write non-finite values")
    dim = mats[0].shape[1]
    lines: list[str] = ["{"]
    lines.append('  "categories": [')
    for ci, (name, mat) in enumerate(zip(names, mats)):
        if mat.ndim != 2 or mat.shape[1] != dim:
            raise SchemaError(f"category {name!r}: inconsistent dimension")
        lines.append("    {")
        lines.append(f'      "name": {canonical_json(name).strip()},')
        lines.append('      "vectors": [')
        if dtype == "f32":
            mat = mat.astype(np.float32).astype(np.float64)
        for ri in range(mat.shape[0]):
            row = ", ".join(fmt(v) for v in mat[ri])
            comma = "," if ri + 1 < mat.shape[0] else ""
            lines.append(f"        [{row}]{comma}")
        lines.append("      ]")
        lines.append("    }," if ci + 1 < len(mats) else "    }")
    lines.append("  ],")
    lines.append(f'  "dim": {dim},')
    lines.append(f'  "dtype": "{dtype}",')
    if metadata is not None:
        meta = canonical_json(metadata).strip().replace("\n", "\n  ")
        lines.append(f'  "metadata": {meta},')
    lines.append(f'  "schema_version": {EMBEDDING_SCHEMA_VERSION}')
    lines.append("}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def category_means(es: EmbeddingSet) -> CategoryMeans:
    """Average each category's rows, then renormalize the mean to unit length.

    Renormalizing keeps prototype-vs-anything cosine similarity equal to a
    dot product. A category whose descriptions cancel to a (near-)zero mean
    has no usable direction and is reported as degenerate.
    """
    rows = []
    for name, mat in zip(es.names, es.matrices):
        mu = mat.mean(axis=0)
        norm = np.linalg.norm(mu)
        if norm < 1e-12:
            raise DegenerateVectorError(f"category {name!r}: mean embedding is (near) zero")
        rows.append(mu / norm)
    return CategoryMeans(names=es.names, matrix=_freeze(np.stack(rows)))


def validate(es: EmbeddingSet, corpus: Corpus) -> ValidationReport:
    """Collect every invariant violation instead of stopping at the first."""
    report = ValidationReport()
    if es.num_categories != len(corpus.categories):
        report.add(
            f"count mismatch: embeddings have {es.num_categories} categories, "
            f"corpus has {len(corpus.categories)}"
        )
    for i, (name, mat) in enumerate(zip(es.names, es.matrices)):
        if i < len(corpus.categories) and name != corpus.categories[i].name:
            report.add(f"category {i}: name {name!r} does not match corpus {corpus.categories[i].name!r}")
        if i < len(corpus.categories) and mat.shape[0] != len(corpus.categories[i].descriptions):
            report.add(
                f"category {name!r}: {mat.shape[0]} rows for "
                f"{len(corpus.categories[i].descriptions)} descriptions"
            )
        if not np.all(np.isfinite(mat)):
            report.add(f"category {name!r}: non-finite values")
            continue
        norms = np.linalg.norm(mat, axis=1)
        bad = np.nonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)[0]
        for ri in bad:
            report.add(f"category {name!r}: row {int(ri)} has norm {norms[ri]:.9g}, expected 1")
    return report
