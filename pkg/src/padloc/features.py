"""Pluggable per-keypoint feature providers.

The deterministic geometric baseline summarizes each keypoint's local
neighborhood (height, reflectance, neighbor count, covariance eigenvalues
with linearity/planarity/sphericity ratios, mean neighbor offset norm) and
lifts the base vector to the working feature dimension through a fixed
seeded random orthogonal map. A loaded-linear provider applies an
externally supplied affine map on top, for experimenting with trained
projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from . import tensorio
from .geom import KeypointSet, PointCloud

# Base-vector layout. The block starting at NEIGHBOR_COUNT is invariant
# under rigid motions; HEIGHT only under z-preserving ones.
HEIGHT = 0
REFLECTANCE = 1
NEIGHBOR_COUNT = 2
EIGENVALUES = slice(3, 6)     # local covariance eigenvalues, descending
SHAPE_RATIOS = slice(6, 9)    # linearity, planarity, sphericity
MEAN_OFFSET = 9
EIGEN_BLOCK = slice(3, 9)     # eigenvalues plus derived ratios
BASE_DIM = 10


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-keypoint features (n, f) plus a per-row quality mask.

    ``quality`` is False for keypoints with an empty neighborhood or rows
    that could not be normalized (zero vectors are left as zeros).
    """

    values: NDArray[np.float64]
    quality: NDArray[np.bool_]

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if not np.isfinite(vals).all():
            raise ValueError("feature entries must be finite")
        q = np.asarray(self.quality, dtype=bool).reshape(-1)
        if q.shape[0] != vals.shape[0]:
            raise ValueError("quality mask length differs from row count")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "quality", q)

    @property
    def f(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureProviderConfig:
    kind: str = "geometric-baseline"   # or "loaded-linear"
    radius: float = 2.0                # neighborhood radius in meters
    f: int = 640
    normalize: bool = True
    include_xyz: bool = False          # appending raw xyz breaks translation invariance
    seed: int = 0
    weight_path: str | Path | None = None

    def __post_init__(self) -> None:
        if self.f < 8:
            raise ValueError("feature dimension must be >= 8")
        if self.radius <= 0:
            raise ValueError("neighborhood radius must be > 0")
        if self.kind not in ("geometric-baseline", "loaded-linear"):
            raise ValueError(f"unknown provider kind {self.kind!r}")

    @property
    def base_dim(self) -> int:
        return BASE_DIM + (3 if self.include_xyz else 0)


def base_descriptors(cloud: PointCloud, keys: KeypointSet,
                     cfg: FeatureProviderConfig) -> tuple[NDArray, NDArray]:
    """Raw per-keypoint base vectors (n, base_dim) and the quality mask."""
    tree = cKDTree(cloud.xyz)
    min_z = cloud.xyz[:, 2].min()
    refl = cloud.reflectance

    n = len(keys)
    base = np.zeros((n, cfg.base_dim))
    quality = np.ones(n, dtype=bool)

    balls = tree.query_ball_point(keys.coords, r=cfg.radius)
    for row, (idx, ball) in enumerate(zip(keys.indices, balls)):
        point = cloud.xyz[idx]
        base[row, HEIGHT] = point[2] - min_z
        base[row, REFLECTANCE] = 0.0 if refl is None else refl[idx]

        # The ball always contains the keypoint itself.
        neighbor_count = len(ball) - 1
        base[row, NEIGHBOR_COUNT] = neighbor_count
        if neighbor_count == 0:
            quality[row] = False
        else:
            local = cloud.xyz[ball]
            centered = local - local.mean(axis=0)
            cov = centered.T @ centered / local.shape[0]
            eigs = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
            base[row, EIGENVALUES] = eigs
            if eigs[0] > 1e-15:
                base[row, SHAPE_RATIOS] = (
                    (eigs[0] - eigs[1]) / eigs[0],
                    (eigs[1] - eigs[2]) / eigs[0],
                    eigs[2] / eigs[0],
                )
            offsets = local - point
            norms = np.linalg.norm(offsets, axis=1)
            base[row, MEAN_OFFSET] = norms.sum() / neighbor_count

        if cfg.include_xyz:
            base[row, BASE_DIM:] = point
    return base, quality


def orthogonal_lift(cfg: FeatureProviderConfig) -> NDArray:
    """Seeded random matrix with orthonormal columns, (f, base_dim)."""
    rng = np.random.default_rng(cfg.seed)
    m = rng.normal(size=(cfg.f, cfg.base_dim))
    q, _ = np.linalg.qr(m)
    return q


def _finalize(raw: NDArray, quality: NDArray, normalize: bool) -> FeatureMatrix:
    if not normalize:
        return FeatureMatrix(values=raw, quality=quality)
    norms = np.linalg.norm(raw, axis=1)
    ok = norms > 1e-12
    values = np.where(ok[:, None], raw / np.where(ok, norms, 1.0)[:, None], 0.0)
    return FeatureMatrix(values=values, quality=quality & ok)


class GeometricProvider:
    """Deterministic geometric baseline feature provider."""

    def __init__(self, cfg: FeatureProviderConfig):
        self.cfg = cfg
        self._lift = orthogonal_lift(cfg)

    def lifted(self, cloud: PointCloud, keys: KeypointSet) -> tuple[NDArray, NDArray]:
        base, quality = base_descriptors(cloud, keys, self.cfg)
        return base @ self._lift.T, quality

    def compute(self, cloud: PointCloud, keys: KeypointSet) -> FeatureMatrix:
        raw, quality = self.lifted(cloud, keys)
        return _finalize(raw, quality, self.cfg.normalize)


class LinearProvider:
    """Geometric features followed by a loaded affine map (f_in -> f)."""

    def __init__(self, cfg: FeatureProviderConfig, weight: NDArray, bias: NDArray):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64).reshape(-1)
        if weight.ndim != 2 or weight.shape[0] != cfg.f or bias.shape[0] != cfg.f:
            raise ValueError(
                f"weight shape mismatch: got {weight.shape} / bias {bias.shape}, "
                f"expected ({cfg.f}, f_in) / ({cfg.f},)"
            )
        self.cfg = cfg
        self.weight = weight
        self.bias = bias
        # The inner geometric stage runs at the affine map's input width.
        inner = FeatureProviderConfig(
            kind="geometric-baseline", radius=cfg.radius, f=weight.shape[1],
            normalize=cfg.normalize, include_xyz=cfg.include_xyz, seed=cfg.seed,
        )
        self._geometric = GeometricProvider(inner)

    def compute(self, cloud: PointCloud, keys: KeypointSet) -> FeatureMatrix:
        raw, quality = self._geometric.lifted(cloud, keys)
        mapped = raw @ self.weight.T + self.bias
        return _finalize(mapped, quality, self.cfg.normalize)


def geometric_features(cloud: PointCloud, keys: KeypointSet,
                       cfg: FeatureProviderConfig) -> FeatureMatrix:
    """One-shot geometric baseline computation."""
    return GeometricProvider(cfg).compute(cloud, keys)


def load_linear_provider(path: str | Path, cfg: FeatureProviderConfig) -> LinearProvider:
    """Build a loaded-linear provider from a tensor container."""
    tensors = tensorio.load_tensors(path)
    if "linear.w" not in tensors or "linear.b" not in tensors:
        raise ValueError("weight file must hold tensors 'linear.w' and 'linear.b'")
    return LinearProvider(cfg, tensors["linear.w"], tensors["linear.b"])


def save_linear_weights(path: str | Path, weight: NDArray, bias: NDArray) -> None:
    tensorio.save_tensors(path, {"linear.w": weight, "linear.b": bias})


def make_provider(cfg: FeatureProviderConfig):
    if cfg.kind == "geometric-baseline":
        return GeometricProvider(cfg)
    if cfg.weight_path is None:
        raise ValueError("loaded-linear provider needs a weight file path")
    return load_linear_provider(cfg.weight_path, cfg)
