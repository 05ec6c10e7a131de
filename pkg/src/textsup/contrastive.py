"""Training objectives, a small point-feature projector, and cosine classification.

Two objectives are supported: a temperature-scaled softmax contrastive
loss over point-vs-prototype similarities, and plain softmax cross-entropy
over a linear class head. Both return exact analytic gradients, verified
against central finite differences by `finite_diff_check`.

The projector is a tiny fully-connected network trained by (momentum) SGD
on CPU with a fixed summation order, so identical seeds give bit-identical
training histories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import normalize_rows, _freeze
from .errors import DivergenceError, SchemaError
from .fileio import canonical_json, read_json, atomic_write_text
from .seeds import derive_seed

DEFAULT_TAU = 0.07
MOMENTUM = 0.9
UNIT_ROW_TOLERANCE = 1e-4


@dataclass(frozen=True)
class PointBatch:
    """Raw per-point features with integer category labels."""

    features: np.ndarray  # (N, d_in) float64
    labels: np.ndarray  # (N,) int64, in [0, m)

    def __post_init__(self):
        feats = _freeze(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must be one index per feature row")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def size(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


@dataclass
class Projector:
    """Fully-connected map from raw point features to the text-feature space.

    Hidden layers use `activation`; the final layer is linear and its output
    is L2-normalized by `project`. Layer sizes are whatever the weight list
    implies; the default factory builds the two-layer [d_in, hidden, d] shape.
    """

    weights: list[np.ndarray]  # weights[l] has shape (in_l, out_l)
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and parallel")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {l}: inconsistent weight/bias shapes")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def out_dim(self) -> int:
        return int(self.weights[-1].shape[1])

    @classmethod
    def initialize(cls, d_in: int, hidden: int, d_out: int, activation: str = "relu", seed: int = 0) -> "Projector":
        """He-scaled gaussian init of the standard [d_in, hidden, d_out] shape.

        Hidden biases start slightly positive so no input row can have its
        entire hidden layer dead at initialization (which would put an exact
        zero through the output normalization).
        """
        rng = np.random.Generator(np.random.PCG64(seed))
        sizes = [d_in, hidden, d_out]
        weights, biases = [], []
        last = len(sizes) - 2
        for l, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            biases.append(np.zeros(fan_out) if l == last else np.full(fan_out, 0.1))
        return cls(weights=weights, biases=biases, activation=activation)

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Pre-normalization output plus the per-layer inputs needed for backprop."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"input dim {X.shape[1]} does not match projector d_in {self.layer_sizes[0]}")
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if l < last:
                h = _activate(h, self.activation)
            acts.append(h)
        return h, acts


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activation_grad(a: np.ndarray, kind: str) -> np.ndarray:
    # expressed in terms of the activation output a = act(z)
    return (a > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "infonce"  # infonce | cross_entropy
    tau: float = DEFAULT_TAU
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "sgd_momentum"  # sgd | sgd_momentum (0.9)

    def __post_init__(self):
        if self.objective not in ("infonce", "cross_entropy"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LossReport:
    """Final loss, final gradient norm, and the (epoch, loss, accuracy) history."""

    value: float
    gradient_norm: float
    history: list[tuple[int, float, float]] = field(default_factory=list)


def _check_unit_rows(M: np.ndarray, what: str) -> None:
    norms = np.linalg.norm(M, axis=1)
    worst = np.max(np.abs(norms - 1.0)) if norms.size else 0.0
    # NaN must fail too, so test the complement
    if not worst <= UNIT_ROW_TOLERANCE:
        raise ValueError(f"{what} rows must be unit-norm (worst deviation {worst:.3g})")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def infonce_loss(
    P: np.ndarray, T: np.ndarray, labels: np.ndarray, tau: float = DEFAULT_TAU
) -> tuple[float, np.ndarray]:
    """Softmax contrastive loss over point-prototype similarities.

    Computes the mean over points of -log softmax(P @ T.T / tau)[label],
    max-shifted for stability. The returned gradient is the exact derivative
    of that mean with respect to the entries of P taken as free variables;
    normalization of P is the caller's chain-rule responsibility.
    """
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if P.ndim != 2 or T.ndim != 2 or P.shape[1] != T.shape[1]:
        raise ValueError(f"shape mismatch: P {P.shape} vs T {T.shape}")
    if labels.shape != (P.shape[0],):
        raise ValueError("labels must be one index per row of P")
    if labels.size and (labels.min() < 0 or labels.max() >= T.shape[0]):
        raise ValueError("labels out of range for T")
    _check_unit_rows(P, "P")
    _check_unit_rows(T, "T")

    N = P.shape[0]
    logits = (P @ T.T) / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    per_point = lse - shifted[np.arange(N), labels]
    loss = float(per_point.mean())

    G = _softmax_rows(logits)
    G[np.arange(N), labels] -= 1.0
    grad = (G @ T) / (tau * N)
    return loss, grad


def cross_entropy_loss(Z: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over logits; gradient is (softmax - onehot)/N."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise ValueError("logits contain non-finite values")
    if labels.shape != (Z.shape[0],):
        raise ValueError("labels must be one index per logit row")
    if labels.size and (labels.min() < 0 or labels.max() >= Z.shape[1]):
        raise ValueError("label out of range")

    N = Z.shape[0]
    shifted = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float((lse - shifted[np.arange(N), labels]).mean())
    grad = _softmax_rows(Z)
    grad[np.arange(N), labels] -= 1.0
    return loss, grad / N


def project(proj: Projector, batch: PointBatch | np.ndarray) -> np.ndarray:
    """Forward pass with the final L2 normalization applied."""
    X = batch.features if isinstance(batch, PointBatch) else np.asarray(batch, dtype=np.float64)
    H, _ = proj.forward(X)
    return normalize_rows(H)


def _normalization_backward(H: np.ndarray, P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    # p = h/|h|  =>  dL/dh = (dL/dp - p (p . dL/dp)) / |h|
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    return (dP - P * np.sum(dP * P, axis=1, keepdims=True)) / norms


def _backprop(proj: Projector, acts: list[np.ndarray], delta: np.ndarray):
    """Gradients for every layer given dL/d(pre-normalization output)."""
    grads_W = [None] * len(proj.weights)
    grads_b = [None] * len(proj.biases)
    for l in range(len(proj.weights) - 1, -1, -1):
        grads_W[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ proj.weights[l].T) * _activation_grad(acts[l], proj.activation)
    return grads_W, grads_b


def classify(P: np.ndarray, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest prototype by dot product (cosine for unit rows).

    Returns (predicted index, similarity score) per row; ties resolve to the
    lowest index.
    """
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if P.ndim != 2 or T.ndim != 2 or P.shape[1] != T.shape[1]:
        raise ValueError(f"shape mismatch: P {P.shape} vs T {T.shape}")
    scores = P @ T.T
    idx = scores.argmax(axis=1)
    return idx.astype(np.int64), scores[np.arange(P.shape[0]), idx]


def train(
    batch: PointBatch,
    T: np.ndarray | None,
    config: TrainConfig,
    hidden: int = 64,
    out_dim: int | None = None,
) -> tuple[Projector, LossReport]:
    """Mini-batch gradient descent of the projector under the chosen objective.

    With the contrastive objective, T is the (m, d) matrix of unit-norm text
    prototypes and similarity logits flow through the projector's normalized
    output. With cross-entropy, T is ignored: a linear k-way head on the
    (unnormalized) projector output is trained jointly and discarded, which
    is the classic label-supervised setup.
    """
    num_classes = int(batch.labels.max()) + 1 if batch.labels.size else 0
    if config.objective == "infonce":
        if T is None:
            raise ValueError("infonce objective requires text prototypes T")
        T = np.asarray(T, dtype=np.float64)
        _check_unit_rows(T, "T")
        if batch.labels.size and batch.labels.max() >= T.shape[0]:
            raise ValueError("labels reference rows beyond T")
        d_out = int(T.shape[1])
    elif out_dim is not None:
        d_out = int(out_dim)
    elif T is not None:
        # keep the feature dimension comparable with a contrastive run
        d_out = int(np.asarray(T).shape[1])
    else:
        d_out = num_classes

    proj = Projector.initialize(
        batch.dim, hidden, d_out, seed=derive_seed(config.seed, "train.init")
    )
    shuffle_rng = np.random.Generator(
        np.random.PCG64(derive_seed(config.seed, "train.shuffle"))
    )

    head_W = None
    head_b = None
    if config.objective == "cross_entropy":
        head_rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "train.head")))
        head_W = head_rng.standard_normal((d_out, num_classes)) * np.sqrt(1.0 / d_out)
        head_b = np.zeros(num_classes)

    params = list(proj.weights) + list(proj.biases)
    if head_W is not None:
        params += [head_W, head_b]
    velocity = [np.zeros_like(p) for p in params]
    use_momentum = config.optimizer == "sgd_momentum"

    N = batch.size
    X = batch.features
    y = batch.labels
    history: list[tuple[int, float, float]] = []
    final_grad_norm = 0.0

    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(N)
        epoch_loss = 0.0
        for start in range(0, N, config.batch_size):
            idx = perm[start : start + config.batch_size]
            Xb, yb = X[idx], y[idx]
            # overflow in a diverging run is caught by the isfinite check
            with np.errstate(over="ignore", invalid="ignore"):
                H, acts = proj.forward(Xb)
            if not np.all(np.isfinite(H)):
                raise DivergenceError(epoch)

            if config.objective == "infonce":
                P = normalize_rows(H)
                loss, dP = infonce_loss(P, T, yb, config.tau)
                delta = _normalization_backward(H, P, dP)
                grads_W, grads_b = _backprop(proj, acts, delta)
                grads = grads_W + grads_b
            else:
                logits = H @ head_W + head_b
                if not np.all(np.isfinite(logits)):
                    raise DivergenceError(epoch)
                loss, dZ = cross_entropy_loss(logits, yb)
                g_head_W = H.T @ dZ
                g_head_b = dZ.sum(axis=0)
                delta = dZ @ head_W.T
                grads_W, grads_b = _backprop(proj, acts, delta)
                grads = grads_W + grads_b + [g_head_W, g_head_b]

            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            epoch_loss += loss * len(idx)

            with np.errstate(over="ignore", invalid="ignore"):
                for p, g, v in zip(params, grads, velocity):
                    if use_momentum:
                        v *= MOMENTUM
                        v -= config.learning_rate * g
                        p += v
                    else:
                        p -= config.learning_rate * g
                final_grad_norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))

        epoch_loss /= N
        with np.errstate(over="ignore", invalid="ignore"):
            if config.objective == "infonce":
                pred, _ = classify(project(proj, batch), T)
            else:
                H_full, _ = proj.forward(X)
                pred = (H_full @ head_W + head_b).argmax(axis=1)
        acc = float(np.mean(pred == y)) if N else 0.0
        history.append((epoch, float(epoch_loss), acc))

    report = LossReport(value=history[-1][1], gradient_norm=final_grad_norm, history=history)
    return proj, report


def finite_diff_check(
    objective: str,
    instance_seed: int,
    tau: float = DEFAULT_TAU,
    step: float = 1e-5,
) -> float:
    """Max relative disagreement between analytic and central-difference gradients.

    Builds a small random instance from the seed, differentiates the scalar
    loss entry-by-entry, and returns max|g_a - g_fd| / max(max|g_a|, max|g_fd|).
    """
    rng = np.random.Generator(np.random.PCG64(instance_seed))
    if objective == "infonce":
        N, m, d = 8, 5, 6
        P = normalize_rows(rng.standard_normal((N, d)))
        T = normalize_rows(rng.standard_normal((m, d)))
        labels = rng.integers(0, m, size=N)
        _, grad = infonce_loss(P, T, labels, tau)

        def loss_at(M: np.ndarray) -> float:
            logits = (M @ T.T) / tau
            shifted = logits - logits.max(axis=1, keepdims=True)
            lse = np.log(np.exp(shifted).sum(axis=1))
            return float((lse - shifted[np.arange(N), labels]).mean())

        X0 = P
    elif objective == "cross_entropy":
        N, k = 8, 5
        Z = rng.standard_normal((N, k))
        labels = rng.integers(0, k, size=N)
        _, grad = cross_entropy_loss(Z, labels)

        def loss_at(M: np.ndarray) -> float:
            shifted = M - M.max(axis=1, keepdims=True)
            lse = np.log(np.exp(shifted).sum(axis=1))
            return float((lse - shifted[np.arange(N), labels]).mean())

        X0 = Z
    else:
        raise ValueError(f"unknown objective {objective!r}")

    fd = np.zeros_like(grad)
    for i in range(X0.shape[0]):
        for j in range(X0.shape[1]):
            plus = X0.copy()
            minus = X0.copy()
            plus[i, j] += step
            minus[i, j] -= step
            fd[i, j] = (loss_at(plus) - loss_at(minus)) / (2.0 * step)
    scale = max(np.max(np.abs(grad)), np.max(np.abs(fd)), 1e-12)
    return float(np.max(np.abs(grad - fd)) / scale)


def save_projector(proj: Projector, path: str | Path, ranking_digest: str | None = None) -> None:
    """Write the trained projector with the ranking digest it was trained against."""
    doc = {
        "schema_version": 1,
        "layer_sizes": proj.layer_sizes,
        "activation": proj.activation,
        "weights": [W.tolist() for W in proj.weights],
        "biases": [b.tolist() for b in proj.biases],
        "ranking_digest": ranking_digest,
    }
    atomic_write_text(path, canonical_json(doc))


def load_projector(path: str | Path) -> tuple[Projector, str | None]:
    doc = read_json(path)
    for fld in ("layer_sizes", "activation", "weights", "biases"):
        if fld not in doc:
            raise SchemaError(f"projector document missing field {fld!r}")
    proj = Projector(
        weights=[np.asarray(W, dtype=np.float64) for W in doc["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in doc["biases"]],
        activation=doc["activation"],
    )
    if proj.layer_sizes != list(doc["layer_sizes"]):
        raise SchemaError("projector layer_sizes do not match the stored weights")
    return proj, doc.get("ranking_digest")
