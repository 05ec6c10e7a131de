"""Training-free significant channel selection for text embeddings.

The idea: score every embedding channel by how much description diversity
it preserves within a category (low intra-class similarity) and how well
it separates categories (high inter-class variance), combine the two into
a ranking, and keep the top-d channels. Variants: the inter-class
similarity rule (minimize similarity across categories instead of within),
a seeded random pick, and average-pooling as a non-selection baseline.

All scores are computed channel-wise. For unit-norm vectors the elementwise
product t_i * t_j sums to their cosine similarity, so each channel's entry
is literally that channel's contribution to the similarity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .corpus import CategoryMeans, EmbeddingSet, category_means, normalize_rows, _freeze
from .errors import SchemaError
from .fileio import canonical_json, sha256_of_text

DEFAULT_LAMBDA = 0.7
DEFAULT_CHANNELS = 64


def _freeze_indices(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.flags.writeable = False
    return a


class ScoreKind(str, enum.Enum):
    INTRA_SIMILARITY = "intra_similarity"
    INTER_SIMILARITY = "inter_similarity"
    INTER_VARIANCE = "inter_variance"
    RANKING = "ranking"


@dataclass(frozen=True)
class ChannelScores:
    """A per-channel score vector of one declared kind."""

    values: np.ndarray
    kind: ScoreKind

    def __post_init__(self):
        v = _freeze(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 1:
            raise ValueError(f"channel scores must be 1-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("channel scores contain non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class SelectionConfig:
    """How to pick channels: method, mixing weight, target dimension."""

    method: str = "paper"  # paper | ape | random | pool
    lam: float = DEFAULT_LAMBDA
    d: int = DEFAULT_CHANNELS
    renormalize: bool = True
    seed: int = 0
    # ape method only: divide the cross-category sum by m^2 or by the
    # m(m-1) ordered pairs actually summed
    ape_pair_normalization: str = "m_squared"

    def __post_init__(self):
        if self.method not in ("paper", "ape", "random", "pool"):
            raise ValueError(f"unknown selection method {self.method!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.ape_pair_normalization not in ("m_squared", "ordered_pairs"):
            raise ValueError(f"unknown ape_pair_normalization {self.ape_pair_normalization!r}")


@dataclass(frozen=True)
class SelectionResult:
    """A full channel ranking plus the chosen top-d subset.

    `order` is the descending-score permutation of all channels (ties broken
    by ascending index), so one result serves every d via its prefixes.
    `selected` is the first d of `order`, re-sorted ascending as the
    canonical gather order.
    """

    order: np.ndarray
    selected: np.ndarray
    config: SelectionConfig
    scores: Mapping[str, ChannelScores] = field(default_factory=dict)

    def __post_init__(self):
        order = _freeze_indices(self.order)
        selected = _freeze_indices(self.selected)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "selected", selected)
        D = order.shape[0]
        if sorted(order.tolist()) != list(range(D)):
            raise ValueError("order is not a permutation of the channel indices")
        if selected.shape[0] != self.config.d:
            raise ValueError(f"selected has {selected.shape[0]} indices, config.d = {self.config.d}")
        if set(selected.tolist()) != set(order[: selected.shape[0]].tolist()):
            raise ValueError("selected must hold exactly the top-d entries of order")

    @property
    def num_channels(self) -> int:
        return int(self.order.shape[0])

    @property
    def d(self) -> int:
        return int(self.selected.shape[0])

    def head(self, d: int) -> "SelectionResult":
        """The same ranking truncated to its top-d prefix."""
        if not 1 <= d <= self.num_channels:
            raise ValueError(f"d must be in [1, {self.num_channels}], got {d}")
        return SelectionResult(
            order=self.order,
            selected=np.sort(self.order[:d]),
            config=replace(self.config, d=d),
            scores=self.scores,
        )

    def to_dict(self) -> dict:
        def score_list(key: str):
            cs = self.scores.get(key)
            return None if cs is None else [float(v) for v in cs.values]

        return {
            "schema_version": 1,
            "D": self.num_channels,
            "d": self.d,
            "method": self.config.method,
            "lambda": self.config.lam,
            "renormalize": self.config.renormalize,
            "seed": self.config.seed,
            "order": self.order.tolist(),
            "selected": self.selected.tolist(),
            "scores": {"S": score_list("S"), "V": score_list("V"), "R": score_list("R")},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SelectionResult":
        for fld in ("D", "d", "method", "lambda", "order", "selected"):
            if fld not in doc:
                raise SchemaError(f"ranking document missing field {fld!r}")
        config = SelectionConfig(
            method=doc["method"],
            lam=float(doc["lambda"]),
            d=int(doc["d"]),
            renormalize=bool(doc.get("renormalize", True)),
            seed=int(doc.get("seed", 0)),
        )
        if len(doc["order"]) != int(doc["D"]):
            raise SchemaError(
                f"ranking document claims D={doc['D']} but order has {len(doc['order'])} entries"
            )
        scores = {}
        raw_scores = doc.get("scores") or {}
        kinds = {
            "S": ScoreKind.INTER_SIMILARITY if doc["method"] == "ape" else ScoreKind.INTRA_SIMILARITY,
            "V": ScoreKind.INTER_VARIANCE,
            "R": ScoreKind.RANKING,
        }
        for key, kind in kinds.items():
            if raw_scores.get(key) is not None:
                scores[key] = ChannelScores(np.asarray(raw_scores[key], dtype=np.float64), kind)
        return cls(
            order=np.asarray(doc["order"], dtype=np.int64),
            selected=np.asarray(doc["selected"], dtype=np.int64),
            config=config,
            scores=scores,
        )

    def canonical_text(self) -> str:
        return canonical_json(self.to_dict())

    def digest(self) -> str:
        return sha256_of_text(self.canonical_text())


def _raw_means(es: EmbeddingSet) -> np.ndarray:
    """Plain per-category row means (NOT renormalized)."""
    return np.stack([m.mean(axis=0) for m in es.matrices])


def intra_class_similarity(es: EmbeddingSet) -> ChannelScores:
    """Per-channel average similarity between descriptions of the same category.

    For category n with rows t_n^1..t_n^s the double sum over all (i, j)
    pairs, self-pairs included, of t_n^i * t_n^j divided by s^2 equals the
    elementwise square of the category's raw mean row; the result averages
    that over categories. Categories may have different description counts.
    """
    mus = _raw_means(es)
    return ChannelScores(np.mean(mus * mus, axis=0), ScoreKind.INTRA_SIMILARITY)


def inter_class_similarity(
    es: EmbeddingSet, pair_normalization: str = "m_squared"
) -> ChannelScores:
    """Per-channel average similarity between descriptions of different categories.

    Sums t_a^i * t_b^j over all ordered category pairs a != b (each pair
    scaled by 1/(s_a * s_b)) and divides by m^2, or by the m(m-1) ordered
    pairs when `pair_normalization="ordered_pairs"`.
    """
    if pair_normalization not in ("m_squared", "ordered_pairs"):
        raise ValueError(f"unknown pair_normalization {pair_normalization!r}")
    m = es.num_categories
    if m < 2:
        raise ValueError(f"inter-class similarity needs at least 2 categories, got {m}")
    mus = _raw_means(es)
    total = mus.sum(axis=0)
    cross = total * total - np.sum(mus * mus, axis=0)
    denom = m * m if pair_normalization == "m_squared" else m * (m - 1)
    return ChannelScores(cross / denom, ScoreKind.INTER_SIMILARITY)


def inter_class_variance(means: CategoryMeans) -> ChannelScores:
    """Per-channel population variance of the category prototype rows."""
    m = means.matrix.shape[0]
    if m < 2:
        raise ValueError(f"inter-class variance needs at least 2 categories, got {m}")
    return ChannelScores(np.var(means.matrix, axis=0), ScoreKind.INTER_VARIANCE)


def rank_channels(S: ChannelScores, V: ChannelScores, lam: float = DEFAULT_LAMBDA) -> ChannelScores:
    """Combined significance: R = lam * V - (1 - lam) * S, elementwise."""
    if S.kind not in (ScoreKind.INTRA_SIMILARITY, ScoreKind.INTER_SIMILARITY):
        raise ValueError(f"S must be a similarity score, got kind {S.kind.value!r}")
    if V.kind is not ScoreKind.INTER_VARIANCE:
        raise ValueError(f"V must be inter-class variance, got kind {V.kind.value!r}")
    if len(S) != len(V):
        raise ValueError(f"score length mismatch: {len(S)} vs {len(V)}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return ChannelScores(lam * V.values - (1.0 - lam) * S.values, ScoreKind.RANKING)


def descending_order(values: np.ndarray) -> np.ndarray:
    """Indices sorted by value descending, ties broken by ascending index."""
    values = np.asarray(values, dtype=np.float64)
    return np.lexsort((np.arange(values.shape[0]), -values)).astype(np.int64)


def select_top_d(R: ChannelScores, d: int, config: SelectionConfig | None = None) -> SelectionResult:
    """Keep the d highest-ranked channels (canonical ascending index order)."""
    D = len(R)
    if not 1 <= d <= D:
        raise ValueError(f"d must be in [1, {D}], got {d}")
    order = descending_order(R.values)
    cfg = replace(config, d=d) if config is not None else SelectionConfig(d=d)
    return SelectionResult(
        order=order,
        selected=np.sort(order[:d]),
        config=cfg,
        scores={"R": R},
    )


def apply_selection(obj, sel: SelectionResult, renormalize: bool | None = None):
    """Gather the selected channels out of a vector, matrix, or data model object.

    Accepts a 1-D vector, a 2-D row matrix, an EmbeddingSet, or
    CategoryMeans; returns the same shape of thing reduced to dimension d.
    With renormalize (default: the selection config's flag) each reduced
    vector is rescaled to unit norm; a reduced vector of all zeros has no
    direction left and raises.
    """
    if renormalize is None:
        renormalize = sel.config.renormalize
    idx = sel.selected

    def reduce_matrix(mat: np.ndarray) -> np.ndarray:
        if mat.shape[-1] != sel.num_channels:
            raise ValueError(
                f"dimension mismatch: data has {mat.shape[-1]} channels, selection has {sel.num_channels}"
            )
        out = np.asarray(mat, dtype=np.float64)[..., idx]
        if renormalize:
            out = normalize_rows(out)
        return out

    if isinstance(obj, EmbeddingSet):
        return EmbeddingSet(
            dim=sel.d,
            names=obj.names,
            matrices=tuple(_freeze(reduce_matrix(m)) for m in obj.matrices),
        )
    if isinstance(obj, CategoryMeans):
        return CategoryMeans(names=obj.names, matrix=_freeze(reduce_matrix(obj.matrix)))
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim == 1:
        return reduce_matrix(arr[None, :])[0]
    if arr.ndim == 2:
        return reduce_matrix(arr)
    raise ValueError(f"cannot apply selection to array of ndim {arr.ndim}")


def pool_reduce(v: np.ndarray, d: int) -> np.ndarray:
    """Average contiguous channel groups down to dimension d (D must divide evenly)."""
    arr = np.asarray(v, dtype=np.float64)
    D = arr.shape[-1]
    if d < 1 or D % d != 0:
        raise ValueError(f"d={d} must divide the channel count D={D}")
    group = D // d
    return arr.reshape(*arr.shape[:-1], d, group).mean(axis=-1)


def random_select(D: int, d: int, seed: int) -> SelectionResult:
    """Uniform channel sample without replacement, reproducible by seed.

    The generator is numpy PCG64 seeded with `seed`; `order` is its
    permutation of [0, D) and `selected` the sorted first d entries, so the
    monotone-nesting property holds per seed.
    """
    if not 1 <= d <= D:
        raise ValueError(f"d must be in [1, {D}], got {d}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(D).astype(np.int64)
    return SelectionResult(
        order=order,
        selected=np.sort(order[:d]),
        config=SelectionConfig(method="random", d=d, seed=seed),
        scores={},
    )


def select(es: EmbeddingSet, config: SelectionConfig) -> SelectionResult:
    """Dispatch on config.method and produce the full SelectionResult.

    `paper` ranks by intra-class similarity + inter-class variance; `ape`
    swaps in the inter-class similarity rule; `random` ignores scores.
    Pooling transforms values rather than picking indices, so it is not a
    valid index-selection method here.
    """
    if config.method == "pool":
        raise ValueError("pooling is a value transform, not an index selection; use pool_reduce")
    if config.d > es.dim:
        raise ValueError(f"d={config.d} exceeds embedding dim D={es.dim}")
    if config.method == "random":
        return random_select(es.dim, config.d, config.seed)
    if config.method == "paper":
        S = intra_class_similarity(es)
    else:
        S = inter_class_similarity(es, config.ape_pair_normalization)
    V = inter_class_variance(category_means(es))
    R = rank_channels(S, V, config.lam)
    result = select_top_d(R, config.d, config=config)
    return SelectionResult(
        order=result.order,
        selected=result.selected,
        config=config,
        scores={"S": S, "V": V, "R": R},
    )
