"""Seeded synthetic data for the desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .contrastive import PointBatch


def gaussian_clusters(
    num_classes: int = 4,
    per_class: int = 200,
    dim: int = 16,
    separation: float = 4.0,
    noise_std: float = 1.0,
    seed: int = 0,
) -> PointBatch:
    """Separable isotropic Gaussian blobs, one per class.

    Class c's mean sits at separation * noise_std along axis c, so any two
    means are separation * sqrt(2) * noise_std apart (>= 4x the within-class
    std at the default separation). Requires num_classes <= dim.
    """
    if num_classes > dim:
        raise ValueError(f"need dim >= num_classes, got {dim} < {num_classes}")
    rng = np.random.Generator(np.random.PCG64(seed))
    means = np.zeros((num_classes, dim))
    means[np.arange(num_classes), np.arange(num_classes)] = separation * noise_std
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.standard_normal((num_classes * per_class, dim)) * noise_std
    return PointBatch(features=means[labels] + noise, labels=labels)


def correlated_prototypes(dim: int = 8) -> np.ndarray:
    """Four unit prototypes where cos(t0, t1) = 0.8 and cos(t2, t3) = 0.

    t0 = e0, t1 = 0.8 e0 + 0.6 e1, t2 = e2, t3 = e3; every other pair is
    orthogonal. Used to test whether training transfers the prototype
    correlation structure onto learned point features.
    """
    if dim < 4:
        raise ValueError(f"need dim >= 4, got {dim}")
    T = np.zeros((4, dim))
    T[0, 0] = 1.0
    T[1, 0] = 0.8
    T[1, 1] = 0.6
    T[2, 2] = 1.0
    T[3, 3] = 1.0
    return T


def orthonormal_prototypes(num_classes: int, dim: int) -> np.ndarray:
    """One standard-basis unit row per class (requires num_classes <= dim)."""
    if num_classes > dim:
        raise ValueError(f"need dim >= num_classes, got {dim} < {num_classes}")
    T = np.zeros((num_classes, dim))
    T[np.arange(num_classes), np.arange(num_classes)] = 1.0
    return T
