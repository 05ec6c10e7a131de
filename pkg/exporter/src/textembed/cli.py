"""Command line for the embedding exporter."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import HASHED_MODEL_ID
from .export import ExportError, ExporterConfig, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textembed")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="embed every corpus description and write the embedding file")
    p.add_argument("--model", default=HASHED_MODEL_ID,
                   help=f"'{HASHED_MODEL_ID}' (offline, deterministic) or a pretrained CLIP model id")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--device", default="cpu")
    p.add_argument("--dim", type=int, default=512, help="output width (hashed-ngram only)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = ExporterConfig(
        model_id=args.model,
        corpus_path=Path(args.corpus),
        output_path=Path(args.out),
        batch_size=args.batch_size,
        device=args.device,
        dim=args.dim,
    )
    try:
        path = export(config)
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote embeddings to {path}")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
