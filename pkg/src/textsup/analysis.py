"""Desk-scale analysis artifacts: similarity matrices, PCA, retrieval scoring, reports.

Everything here is deterministic: the PCA eigensolver is a cyclic Jacobi
sweep with a fixed rotation order, report files are canonical JSON/CSV, and
the only timestamp lives in one labeled report field.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CategoryMeans, EmbeddingSet
from .fileio import canonical_json, atomic_write_text, format_sig9
from .selection import SelectionResult, apply_selection
from .contrastive import classify


@dataclass(frozen=True)
class SimilarityMatrix:
    """Pairwise cosine similarities between category prototypes."""

    names: tuple[str, ...]
    values: np.ndarray  # (m, m), symmetric, unit diagonal

    def mean_offdiagonal(self) -> float:
        m = self.values.shape[0]
        off = ~np.eye(m, dtype=bool)
        return float(self.values[off].mean())

    def ranked_pairs(self) -> list[tuple[float, str, str]]:
        """All unordered pairs sorted by similarity descending (ties by index)."""
        m = self.values.shape[0]
        pairs = []
        for i in range(m):
            for j in range(i + 1, m):
                pairs.append((-self.values[i, j], i, j))
        pairs.sort()
        return [(-s, self.names[i], self.names[j]) for s, i, j in pairs]


def similarity_matrix(means: CategoryMeans) -> SimilarityMatrix:
    """Cosine similarity of every prototype pair (dot products of unit rows).

    The product is symmetrized to scrub last-ulp BLAS asymmetry.
    """
    V = means.matrix @ means.matrix.T
    V = (V + V.T) / 2.0
    V.flags.writeable = False
    return SimilarityMatrix(names=means.names, values=V)


@dataclass(frozen=True)
class PcaProjection:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    coordinates: np.ndarray  # (N, k)
    explained_variance_ratio: np.ndarray  # (k,), non-increasing
    degenerate: bool = False  # zero-variance input


def jacobi_eigh(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps the strict upper triangle in a fixed (row-major) order until the
    off-diagonal Frobenius norm drops below tol * max(1, |A|_F). Returns
    (eigenvalues, eigenvectors-as-columns), unsorted.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, atol=1e-10):
        raise ValueError("matrix must be symmetric")
    V = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(A)))
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A * A) - np.sum(np.diag(A) ** 2))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= threshold / (n * n):
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * A[:, p] - s * A[:, q]
                rot_q = s * A[:, p] + c * A[:, q]
                A[:, p], A[:, q] = rot_p, rot_q
                rot_p = c * A[p, :] - s * A[q, :]
                rot_q = s * A[p, :] + c * A[q, :]
                A[p, :], A[q, :] = rot_p, rot_q
                rot_p = c * V[:, p] - s * V[:, q]
                rot_q = s * V[:, p] + c * V[:, q]
                V[:, p], V[:, q] = rot_p, rot_q
    return np.diag(A).copy(), V


def pca_project(X: np.ndarray, k: int) -> PcaProjection:
    """Top-k principal components of the rows of X.

    Centers by the column mean, eigendecomposes the population covariance
    with the Jacobi solver, sorts eigenpairs by eigenvalue descending (ties
    by original index), and fixes each component's sign so its
    largest-magnitude entry is positive. Zero-variance input yields zero
    explained-variance ratios and is flagged degenerate.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    N, d = X.shape
    if N < 2:
        raise ValueError(f"PCA needs at least 2 rows, got {N}")
    if not 1 <= k <= min(N, d):
        raise ValueError(f"k must be in [1, {min(N, d)}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / N
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.lexsort((np.arange(d), -eigvals))
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    comps = eigvecs[:, :k].T.copy()
    for r in range(k):
        lead = np.argmax(np.abs(comps[r]))
        if comps[r, lead] < 0:
            comps[r] = -comps[r]
    total = float(eigvals.sum())
    degenerate = total <= 0.0
    ratios = np.zeros(k) if degenerate else eigvals[:k] / total
    return PcaProjection(
        mean=mean,
        components=comps,
        coordinates=Xc @ comps.T,
        explained_variance_ratio=ratios,
        degenerate=degenerate,
    )


def retrieval_eval(
    holdout: EmbeddingSet,
    means: CategoryMeans,
    sel: SelectionResult | None = None,
) -> float:
    """Fraction of held-out description embeddings closest to their own prototype.

    With a selection, both the queries and the prototypes are reduced and
    renormalized before scoring.
    """
    if holdout.names != means.names:
        raise ValueError("holdout and means must cover the same categories in the same order")
    M = means.matrix
    if sel is not None:
        M = apply_selection(M, sel, renormalize=True)
    correct = 0
    total = 0
    for n, rows in enumerate(holdout.matrices):
        Q = rows
        if sel is not None:
            Q = apply_selection(Q, sel, renormalize=True)
        pred, _ = classify(Q, M)
        correct += int(np.sum(pred == n))
        total += rows.shape[0]
    return correct / total


def toy_metrics(pred, truth, m: int) -> dict[str, float]:
    """Overall accuracy, macro recall over present classes, and mean IoU.

    IoU per class comes from the confusion matrix; classes absent from both
    pred and truth are excluded from the IoU mean, classes absent from truth
    are excluded from the recall mean.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError("pred and truth must be 1-D and the same length")
    if pred.size == 0:
        raise ValueError("empty prediction list")
    for arr, what in ((pred, "pred"), (truth, "truth")):
        if arr.min() < 0 or arr.max() >= m:
            raise ValueError(f"{what} indices out of range [0, {m})")
    conf = np.zeros((m, m), dtype=np.int64)
    np.add.at(conf, (truth, pred), 1)
    tp = np.diag(conf).astype(np.float64)
    truth_count = conf.sum(axis=1).astype(np.float64)
    pred_count = conf.sum(axis=0).astype(np.float64)

    accuracy = float(tp.sum() / pred.size)
    present = truth_count > 0
    recalls = tp[present] / truth_count[present]
    union = truth_count + pred_count - tp
    seen = union > 0
    ious = tp[seen] / union[seen]
    return {
        "accuracy": accuracy,
        "mean_class_accuracy": float(recalls.mean()),
        "toy_miou": float(ious.mean()),
    }


@dataclass
class ExperimentReport:
    """Metrics plus the tabular artifacts a run wants written to disk."""

    run_id: str
    config_digests: dict[str, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)
    matrices: dict[str, SimilarityMatrix] = field(default_factory=dict)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)


def _format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_sig9(float(v))
    return str(v)


def emit_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """Write report.json plus one CSV per matrix/table; returns the paths.

    Output bytes are identical across runs for identical inputs, except for
    the labeled `generated_at` field in report.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    artifacts: dict[str, str] = {}
    for name, matrix in sorted(report.matrices.items()):
        path = out_dir / f"{name}.csv"
        lines = ["category," + ",".join(matrix.names)]
        for i, row_name in enumerate(matrix.names):
            lines.append(row_name + "," + ",".join(format_sig9(v) for v in matrix.values[i]))
        atomic_write_text(path, "\n".join(lines) + "\n")
        artifacts[name] = path.name
        written.append(path)

    for name, (columns, rows) in sorted(report.tables.items()):
        path = out_dir / f"{name}.csv"
        lines = [",".join(columns)]
        for row in rows:
            lines.append(",".join(_format_cell(v) for v in row))
        atomic_write_text(path, "\n".join(lines) + "\n")
        artifacts[name] = path.name
        written.append(path)

    doc = {
        "run_id": report.run_id,
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "config_digests": report.config_digests,
        "metrics": {k: float(v) for k, v in report.metrics.items()},
        "artifacts": artifacts,
    }
    report_path = out_dir / "report.json"
    atomic_write_text(report_path, canonical_json(doc))
    written.append(report_path)
    return written
