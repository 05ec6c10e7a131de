"""Corpus-to-embedding export.

Reads a corpus document (categories with ordered descriptions), runs the
configured text encoder over every description in corpus order, and writes
the interchange embedding format: JSON with `dim`, `dtype`, per-category
`vectors` arrays order-aligned with the corpus, and pinned encoder metadata.
Rows are written exactly as the encoder produced them (no normalization);
the consumer normalizes on load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import build_encoder


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExporterConfig:
    model_id: str
    corpus_path: Path
    output_path: Path
    batch_size: int = 32
    device: str = "cpu"
    dim: int = 512  # hashed-ngram only; pretrained encoders fix their own width


def _format_f32(value: float) -> str:
    """Shortest decimal that round-trips binary32."""
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def _load_corpus(path: Path) -> list[tuple[str, list[str]]]:
    if not path.exists():
        raise ExportError(f"no such corpus file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ExportError(f"{path}: invalid JSON: {exc}") from exc
    cats = doc.get("categories")
    if not cats:
        raise ExportError(f"{path}: corpus has no categories")
    out = []
    seen = set()
    for i, cat in enumerate(cats):
        name = cat.get("name")
        descriptions = cat.get("descriptions")
        if not name or not descriptions:
            raise ExportError(f"{path}: categories[{i}] needs a name and descriptions")
        if name in seen:
            raise ExportError(f"{path}: duplicate category {name!r}")
        seen.add(name)
        out.append((name, list(descriptions)))
    return out


def _render_document(
    names: list[str], matrices: list[np.ndarray], dim: int, metadata: dict
) -> str:
    lines = ["{", '  "categories": [']
    for ci, (name, mat) in enumerate(zip(names, matrices)):
        mat32 = mat.astype(np.float32).astype(np.float64)
        lines.append("    {")
        lines.append(f'      "name": {json.dumps(name, ensure_ascii=False)},')
        lines.append('      "vectors": [')
        for ri in range(mat32.shape[0]):
            row = ", ".join(_format_f32(v) for v in mat32[ri])
            comma = "," if ri + 1 < mat32.shape[0] else ""
            lines.append(f"        [{row}]{comma}")
        lines.append("      ]")
        lines.append("    }," if ci + 1 < len(matrices) else "    }")
    lines.append("  ],")
    lines.append(f'  "dim": {dim},')
    lines.append('  "dtype": "f32",')
    meta = json.dumps(metadata, ensure_ascii=False, sort_keys=True, indent=2)
    lines.append('  "metadata": ' + meta.replace("\n", "\n  ") + ",")
    lines.append('  "schema_version": 1')
    return "\n".join(lines) + "\n}\n"


def export(config: ExporterConfig) -> Path:
    """Run the encoder over the corpus and write the embedding file."""
    categories = _load_corpus(config.corpus_path)
    encoder = build_encoder(config.model_id, dim=config.dim, device=config.device)

    names: list[str] = []
    matrices: list[np.ndarray] = []
    for name, descriptions in categories:
        rows = encoder.encode(descriptions, batch_size=config.batch_size)
        if rows.shape[0] != len(descriptions):
            raise ExportError(f"encoder returned {rows.shape[0]} rows for {len(descriptions)} texts")
        names.append(name)
        matrices.append(np.asarray(rows, dtype=np.float64))

    dim = int(matrices[0].shape[1])
    metadata: dict = {
        "encoder": encoder.model_id if hasattr(encoder, "model_id") else config.model_id,
        "encoder_version": getattr(encoder, "version", "unknown"),
        "rows": int(sum(m.shape[0] for m in matrices)),
    }
    truncations = getattr(encoder, "truncations", None)
    if truncations:
        metadata["truncated_texts"] = sorted(truncations)

    text = _render_document(names, matrices, dim, metadata)
    config.output_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = config.output_path.with_name(config.output_path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, config.output_path)
    return config.output_path
