"""Weighted Kabsch-Umeyama rigid alignment of corresponded point sets.

Given weighted correspondences, the optimal translation is the difference
of the weighted centroids and the optimal rotation comes from the SVD of
the weighted cross-covariance, with the standard determinant sign fix on
the smallest singular direction so the result is always a proper rotation.
All computation is in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geom import RigidTransform, apply_transform

#: Second singular value below this (relative to the largest) marks an
#: ambiguous rotation: the configuration does not pin down all axes.
DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True)
class Correspondences:
    """Paired points with non-negative weights.

    A well-posed rotation needs at least 3 non-collinear pairs with
    positive weight; thinner configurations are solved best-effort and
    flagged by :func:`register`.
    """

    source: NDArray[np.float64]   # (n, 3)
    target: NDArray[np.float64]   # (n, 3)
    weights: NDArray[np.float64]  # (n,) >= 0

    def __post_init__(self) -> None:
        s = np.asarray(self.source, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.target, dtype=np.float64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if s.shape != t.shape:
            raise ValueError("source and target must have equal row counts")
        if w.shape[0] != s.shape[0]:
            raise ValueError("weights length differs from pair count")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        if w.sum() <= 0:
            raise ValueError("sum of weights must be positive")
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "target", t)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    degenerate: bool


def register(c: Correspondences) -> RegistrationResult:
    """Least-squares rigid transform mapping source into target.

    Minimizes the weighted sum of squared pair residuals. Degenerate
    configurations (ambiguous rotation) return a flagged best-effort
    result instead of raising, so sequence-level evaluation never aborts.
    """
    w = c.weights / c.weights.sum()
    mu_s = w @ c.source
    mu_t = w @ c.target
    sc = c.source - mu_s
    tc = c.target - mu_t

    cov = (sc * w[:, None]).T @ tc
    u, sing, vt = np.linalg.svd(cov)
    v = vt.T
    d = np.eye(3)
    d[2, 2] = np.sign(np.linalg.det(v @ u.T)) or 1.0
    rotation = v @ d @ u.T

    degenerate = bool(sing[1] <= DEGENERACY_RTOL * max(sing[0], np.finfo(float).tiny))
    transform = RigidTransform(rotation, mu_t - rotation @ mu_s)
    return RegistrationResult(transform=transform, degenerate=degenerate)


def weighted_residual(c: Correspondences, t: RigidTransform) -> float:
    """Root of the weighted mean squared pair residual, in meters."""
    w = c.weights / c.weights.sum()
    diff = apply_transform(t, c.source) - c.target
    return float(np.sqrt(np.sum(w * np.sum(diff * diff, axis=1))))
