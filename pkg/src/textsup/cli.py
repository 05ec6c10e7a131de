"""Single executable for the whole pipeline.

Subcommands: enrich, select, train, classify, analyze, validate. Every
command reads an optional JSON config file; explicit flags override config
values, which override defaults. One global seed fans out to per-stage
seeds through `seeds.derive_seed` (labels "selection.random" and "train";
the trainer derives "train.init" / "train.shuffle" / "train.head" from its
stage seed), so re-seeding one stage never perturbs another.

Exit codes: 0 success, 2 transport failure, 3 validation/schema failure,
4 artifact digest mismatch, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, contrastive, corpus as corpus_mod, enrichment, selection, synthetic
from .errors import (
    ArtifactMismatchError,
    DegenerateVectorError,
    SchemaError,
    TextsupError,
    TransportError,
)
from .fileio import canonical_json, atomic_write_text, read_json, sha256_of_file
from .seeds import derive_seed

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_TRANSPORT = 2
EXIT_VALIDATION = 3
EXIT_MISMATCH = 4

#: Seeds used for the random-selection baseline sweep in `analyze`.
BASELINE_SEEDS = tuple(range(20))
ABLATION_CHANNELS = (32, 64, 128)


class PipelineConfig:
    """The parsed --config document with flag-over-config-over-default lookup."""

    def __init__(self, doc: dict | None):
        self.doc = doc or {}

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        if path is None:
            return cls({})
        return cls(read_json(path))

    def get(self, section: str, key: str, flag_value, default):
        if flag_value is not None:
            return flag_value
        sec = self.doc.get(section) or {}
        if key in sec:
            return sec[key]
        return default

    def path(self, key: str, flag_value) -> Path | None:
        raw = self.get("paths", key, flag_value, None)
        return None if raw is None else Path(raw)

    def require_path(self, key: str, flag_value) -> Path:
        p = self.path(key, flag_value)
        if p is None:
            raise SchemaError(f"missing required path {key!r} (flag or config paths.{key})")
        return p

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))


def _read_lines(path: Path) -> list[str]:
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    return [ln for ln in lines if ln and not ln.startswith("#")]


def _load_vectors(path: Path) -> np.ndarray:
    """Query vectors: JSON {"vectors": [[...]]} or whitespace-separated text rows."""
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        rows = [[float(v) for v in ln.split()] for ln in text.splitlines() if ln.strip()]
        if not rows:
            raise SchemaError(f"{path}: no vectors found")
        return np.asarray(rows, dtype=np.float64)
    if isinstance(doc, dict) and "vectors" in doc:
        return np.asarray(doc["vectors"], dtype=np.float64)
    if isinstance(doc, list):
        return np.asarray(doc, dtype=np.float64)
    raise SchemaError(f"{path}: expected a 'vectors' field or a JSON array")


def _load_corpus_and_embeddings(cfg: PipelineConfig, args) -> tuple:
    corpus_path = cfg.require_path("corpus", args.corpus)
    embeddings_path = cfg.require_path("embeddings", args.embeddings)
    corp = corpus_mod.load_corpus(corpus_path)
    es = corpus_mod.load_embeddings(embeddings_path, corp)
    return corp, es


def cmd_enrich(args) -> int:
    cfg = PipelineConfig.load(args.config)
    categories = _read_lines(Path(args.categories))
    if not categories:
        raise SchemaError("category list is empty")
    if args.templates:
        templates = tuple(enrichment.PromptTemplate(p) for p in _read_lines(Path(args.templates)))
    else:
        templates = tuple(enrichment.PromptTemplate(p) for p in enrichment.DEFAULT_TEMPLATES)
    synonyms = None
    if args.synonyms:
        synonyms = read_json(Path(args.synonyms))
        if not isinstance(synonyms, dict):
            raise SchemaError(f"{args.synonyms}: synonym file must be a JSON object")

    cache_dir = cfg.get("enrichment", "cache_dir", args.cache_dir, None)
    econfig = enrichment.EnrichmentConfig(
        target_count=int(cfg.get("enrichment", "target_count", args.target_count, 15)),
        templates=templates,
        endpoint=str(cfg.get("enrichment", "endpoint", args.endpoint, "")),
        model_name=str(cfg.get("enrichment", "model", args.model, "gpt-3.5-turbo")),
        api_key_env=str(cfg.get("enrichment", "api_key_env", None, "TEXTSUP_API_KEY")),
        temperature=float(cfg.get("enrichment", "temperature", None, 0.7)),
        max_retries=int(cfg.get("enrichment", "max_retries", None, 3)),
        backoff_base=float(cfg.get("enrichment", "backoff_base", None, 0.5)),
        cache_dir=None if cache_dir is None else Path(cache_dir),
    )
    if args.offline:
        transport = None
    else:
        if not econfig.endpoint:
            raise SchemaError("no endpoint configured; pass --endpoint or use --offline")
        transport = enrichment.HttpChatTransport(
            econfig.endpoint, econfig.api_key_env, econfig.auth_header
        )
    corp = enrichment.enrich_corpus(categories, econfig, transport, synonyms)
    corpus_mod.save_corpus(corp, Path(args.out))
    print(f"wrote corpus with {len(corp.categories)} categories to {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = PipelineConfig.load(args.config)
    corp, es = _load_corpus_and_embeddings(cfg, args)
    method = str(cfg.get("selection", "method", args.method, "paper"))
    seed = args.seed
    if seed is None:
        seed = cfg.get("selection", "seed", None, None)
    if seed is None:
        seed = derive_seed(cfg.seed, "selection.random")
    sconfig = selection.SelectionConfig(
        method=method,
        lam=float(cfg.get("selection", "lambda", args.lam, selection.DEFAULT_LAMBDA)),
        d=int(cfg.get("selection", "d", args.d, selection.DEFAULT_CHANNELS)),
        renormalize=bool(cfg.get("selection", "renormalize", None, True)),
        seed=int(seed),
    )
    result = selection.select(es, sconfig)
    out = cfg.require_path("ranking", args.out)
    atomic_write_text(out, result.canonical_text())
    print(f"wrote ranking ({sconfig.method}, d={sconfig.d} of D={es.dim}) to {out}")
    return EXIT_OK


def _train_data(cfg: PipelineConfig, args, corp, es, ranking):
    """Point features + prototypes for training: pipeline mode or synthetic toy."""
    tseed = int(cfg.get("train", "seed", None, derive_seed(cfg.seed, "train")))
    if es is not None and ranking is not None:
        means = corpus_mod.category_means(es)
        T = selection.apply_selection(means, ranking, renormalize=True).matrix
        num_classes = T.shape[0]
    else:
        T = synthetic.correlated_prototypes(int(cfg.get("train", "text_dim", None, 8)))
        num_classes = T.shape[0]
    batch = synthetic.gaussian_clusters(
        num_classes=num_classes,
        per_class=int(cfg.get("train", "points_per_class", args.points_per_class, 200)),
        dim=int(cfg.get("train", "input_dim", None, max(16, num_classes))),
        separation=float(cfg.get("train", "separation", None, 4.0)),
        seed=derive_seed(tseed, "train.data"),
    )
    return batch, T, tseed


def cmd_train(args) -> int:
    cfg = PipelineConfig.load(args.config)
    ranking = None
    ranking_digest = None
    es = corp = None
    ranking_path = cfg.path("ranking", args.ranking)
    if not args.synthetic and ranking_path is not None:
        corp, es = _load_corpus_and_embeddings(cfg, args)
        ranking = selection.SelectionResult.from_dict(read_json(ranking_path))
        ranking_digest = sha256_of_file(ranking_path)

    batch, T, tseed = _train_data(cfg, args, corp, es, ranking)
    tconfig = contrastive.TrainConfig(
        objective=str(cfg.get("train", "objective", args.objective, "infonce")),
        tau=float(cfg.get("train", "tau", args.tau, contrastive.DEFAULT_TAU)),
        learning_rate=float(cfg.get("train", "learning_rate", args.learning_rate, 0.05)),
        epochs=int(cfg.get("train", "epochs", args.epochs, 200)),
        batch_size=int(cfg.get("train", "batch_size", args.batch_size, 64)),
        seed=tseed,
        optimizer=str(cfg.get("train", "optimizer", args.optimizer, "sgd_momentum")),
    )
    hidden = int(cfg.get("train", "hidden", args.hidden, 64))
    proj, report = contrastive.train(batch, T, tconfig, hidden=hidden)

    projector_out = cfg.require_path("projector", args.projector_out)
    contrastive.save_projector(proj, projector_out, ranking_digest)

    out_dir = cfg.path("out_dir", args.report_dir)
    final = report.history[-1]
    if out_dir is not None:
        exp = analysis.ExperimentReport(
            run_id="train",
            config_digests={} if ranking_digest is None else {"ranking": ranking_digest},
            metrics={
                "final_loss": report.value,
                "final_accuracy": final[2],
                "gradient_norm": report.gradient_norm,
            },
            tables={
                "training_history": (
                    ["epoch", "loss", "accuracy"],
                    [[e, l, a] for e, l, a in report.history],
                )
            },
        )
        analysis.emit_report(exp, out_dir)
    print(f"trained {tconfig.objective}: final loss {report.value:.6f}, accuracy {final[2]:.4f}")
    return EXIT_OK


def cmd_classify(args) -> int:
    cfg = PipelineConfig.load(args.config)
    corp, es = _load_corpus_and_embeddings(cfg, args)
    means = corpus_mod.category_means(es)
    M = means.matrix

    ranking = None
    ranking_digest = None
    ranking_path = cfg.path("ranking", args.ranking)
    if ranking_path is not None:
        ranking = selection.SelectionResult.from_dict(read_json(ranking_path))
        ranking_digest = sha256_of_file(ranking_path)
        M = selection.apply_selection(M, ranking, renormalize=True)

    vectors_path = args.vectors or args.query_embedding
    if vectors_path is None:
        raise SchemaError("no input vectors; pass --vectors or --query-embedding")
    Q = _load_vectors(Path(vectors_path))
    if Q.ndim == 1:
        Q = Q[None, :]

    projector_path = cfg.path("projector", args.projector)
    if projector_path is not None:
        proj, stored_digest = contrastive.load_projector(projector_path)
        if stored_digest is not None and stored_digest != ranking_digest:
            raise ArtifactMismatchError(
                "projector was trained against a different ranking file "
                f"(stored digest {stored_digest[:12]}..., "
                f"got {'none' if ranking_digest is None else ranking_digest[:12] + '...'})"
            )
        Q = contrastive.project(proj, Q)
    else:
        if ranking is not None and Q.shape[1] == ranking.num_channels:
            Q = selection.apply_selection(Q, ranking, renormalize=True)
        else:
            Q = corpus_mod.normalize_rows(Q)
    if Q.shape[1] != M.shape[1]:
        raise SchemaError(
            f"query dim {Q.shape[1]} does not match prototype dim {M.shape[1]}"
        )

    idx, scores = contrastive.classify(Q, M)
    predictions = [
        {"index": int(i), "category": means.names[int(i)], "score": float(s)}
        for i, s in zip(idx, scores)
    ]
    doc = {"schema_version": 1, "predictions": predictions}
    if args.out:
        atomic_write_text(Path(args.out), canonical_json(doc))
    else:
        sys.stdout.write(canonical_json(doc))
    return EXIT_OK


def _holdout_split(es, holdout_count: int):
    """Last `holdout_count` descriptions of every category become the eval side."""
    if holdout_count < 1:
        raise ValueError(f"holdout must be >= 1, got {holdout_count}")
    if any(c <= holdout_count for c in es.counts):
        raise SchemaError(
            f"every category needs more than {holdout_count} descriptions to hold out"
        )
    train_mats = tuple(m[:-holdout_count] for m in es.matrices)
    hold_mats = tuple(m[-holdout_count:] for m in es.matrices)
    train = corpus_mod.EmbeddingSet(dim=es.dim, names=es.names, matrices=train_mats)
    hold = corpus_mod.EmbeddingSet(dim=es.dim, names=es.names, matrices=hold_mats)
    return train, hold


def cmd_analyze(args) -> int:
    cfg = PipelineConfig.load(args.config)
    corp, es = _load_corpus_and_embeddings(cfg, args)
    means = corpus_mod.category_means(es)
    out_dir = cfg.require_path("out_dir", args.out)

    sconfig = selection.SelectionConfig(
        method=str(cfg.get("selection", "method", args.method, "paper")),
        lam=float(cfg.get("selection", "lambda", args.lam, selection.DEFAULT_LAMBDA)),
        d=int(cfg.get("selection", "d", args.d, selection.DEFAULT_CHANNELS)),
    )
    ranking_path = cfg.path("ranking", args.ranking)
    if ranking_path is not None:
        sel = selection.SelectionResult.from_dict(read_json(ranking_path))
        digests = {"ranking": sha256_of_file(ranking_path)}
    else:
        sel = selection.select(es, sconfig)
        digests = {}

    report = analysis.ExperimentReport(run_id="analyze", config_digests=digests)

    # similarity matrices before/after selection
    sim_before = analysis.similarity_matrix(means)
    means_after = selection.apply_selection(means, sel, renormalize=True)
    sim_after = analysis.similarity_matrix(means_after)
    if args.matrices:
        report.matrices["similarity_full"] = sim_before
        report.matrices["similarity_selected"] = sim_after
    report.metrics["mean_offdiagonal_full"] = sim_before.mean_offdiagonal()
    report.metrics["mean_offdiagonal_selected"] = sim_after.mean_offdiagonal()

    # retrieval protocol: hold out the last h descriptions per category
    holdout_count = int(cfg.get("analysis", "holdout", args.holdout, 3))
    train_es, hold_es = _holdout_split(es, holdout_count)
    train_means = corpus_mod.category_means(train_es)
    train_sel = selection.select(train_es, sel.config) if sel.config.method != "random" else sel
    acc_rows: list[list] = []
    report.metrics["retrieval_full"] = analysis.retrieval_eval(hold_es, train_means, None)
    report.metrics["retrieval_selected"] = analysis.retrieval_eval(hold_es, train_means, train_sel)
    acc_rows.append(["full", es.dim, report.metrics["retrieval_full"]])
    acc_rows.append([train_sel.config.method, train_sel.d, report.metrics["retrieval_selected"]])

    rand_accs = []
    for s in BASELINE_SEEDS:
        rsel = selection.random_select(es.dim, train_sel.d, s)
        rand_accs.append(analysis.retrieval_eval(hold_es, train_means, rsel))
        acc_rows.append([f"random[{s}]", train_sel.d, rand_accs[-1]])
    report.metrics["retrieval_random_mean"] = float(np.mean(rand_accs))
    report.metrics["retrieval_random_std"] = float(np.std(rand_accs))

    if es.dim % train_sel.d == 0:
        pooled_hold = corpus_mod.EmbeddingSet(
            dim=train_sel.d,
            names=es.names,
            matrices=tuple(
                corpus_mod.normalize_rows(selection.pool_reduce(m, train_sel.d))
                for m in hold_es.matrices
            ),
        )
        pooled_means = corpus_mod.CategoryMeans(
            names=train_means.names,
            matrix=corpus_mod.normalize_rows(
                selection.pool_reduce(train_means.matrix, train_sel.d)
            ),
        )
        report.metrics["retrieval_pool"] = analysis.retrieval_eval(pooled_hold, pooled_means)
        acc_rows.append(["pool", train_sel.d, report.metrics["retrieval_pool"]])
    report.tables["retrieval_baselines"] = (["method", "d", "accuracy"], acc_rows)

    # channel-count ablation over one shared ranking
    ablation_rows: list[list] = []
    for d in ABLATION_CHANNELS:
        if d > es.dim:
            continue
        head = train_sel.head(d)
        ablation_rows.append([d, analysis.retrieval_eval(hold_es, train_means, head)])
    report.tables["channel_count_ablation"] = (["d", "retrieval_accuracy"], ablation_rows)

    # PCA of the reduced description embeddings
    if args.pca:
        reduced = selection.apply_selection(es, sel, renormalize=True)
        X = np.vstack(reduced.matrices)
        pca = analysis.pca_project(X, int(args.pca))
        rows = []
        r = 0
        for name, mat in zip(reduced.names, reduced.matrices):
            for _ in range(mat.shape[0]):
                rows.append([name] + [float(v) for v in pca.coordinates[r]] )
                r += 1
        cols = ["category"] + [f"pc{i + 1}" for i in range(int(args.pca))]
        report.tables["pca_coordinates"] = (cols, rows)
        for i, ratio in enumerate(pca.explained_variance_ratio):
            report.metrics[f"pca_explained_ratio_{i + 1}"] = float(ratio)

    paths = analysis.emit_report(report, out_dir)
    print(f"wrote {len(paths)} analysis artifacts to {out_dir}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = PipelineConfig.load(args.config)
    corp, es = _load_corpus_and_embeddings(cfg, args)
    report = corpus_mod.validate(es, corp)
    if report.ok:
        print(f"ok: {es.num_categories} categories, dim {es.dim}")
        return EXIT_OK
    for v in report.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textsup", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--corpus", help="corpus file")
        p.add_argument("--embeddings", help="embedding file")

    p = sub.add_parser("enrich", help="build an enriched description corpus")
    p.add_argument("--config")
    p.add_argument("--categories", required=True, help="text file, one category per line")
    p.add_argument("--templates", help="text file, one template per line")
    p.add_argument("--synonyms", help="JSON object mapping category -> synonym")
    p.add_argument("--target-count", type=int, default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--offline", action="store_true", help="templates/synonyms only, no network")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("select", help="rank channels and write the ranking file")
    common(p)
    p.add_argument("--method", choices=["paper", "ape", "random"], default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="ranking output path")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train the point projector")
    common(p)
    p.add_argument("--ranking", help="ranking file from `select`")
    p.add_argument("--synthetic", action="store_true", help="toy clusters + built-in prototypes")
    p.add_argument("--objective", choices=["infonce", "cross_entropy"], default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--optimizer", choices=["sgd", "sgd_momentum"], default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--points-per-class", type=int, default=None)
    p.add_argument("--projector-out", help="trained projector output path")
    p.add_argument("--report-dir", help="training report directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="cosine-similarity classification of query vectors")
    common(p)
    p.add_argument("--ranking")
    p.add_argument("--projector")
    p.add_argument("--vectors", help="query vector file (JSON or whitespace rows)")
    p.add_argument("--query-embedding", help="alias for --vectors (external encoder output)")
    p.add_argument("--out", help="predictions output path (default stdout)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("analyze", help="similarity matrices, retrieval baselines, PCA")
    common(p)
    p.add_argument("--ranking")
    p.add_argument("--method", choices=["paper", "ape"], default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--holdout", type=int, default=None)
    p.add_argument("--matrices", action="store_true", help="emit similarity matrix CSVs")
    p.add_argument("--pca", type=int, default=0, help="emit top-K PCA coordinates")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="check an embedding file against its corpus")
    common(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ArtifactMismatchError as exc:
        print(f"artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (SchemaError, DegenerateVectorError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TextsupError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
