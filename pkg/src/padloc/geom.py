"""Core geometric types, SE(3) algebra, and farthest point sampling.

Rotations are kept as full 3x3 matrices (the registration solver produces
them directly), translations as 3-vectors in meters. All types are frozen
and all operations are pure functions, so everything here is safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

F64: TypeAlias = np.float64
Points: TypeAlias = NDArray[F64]  # (N, 3)
Mat3: TypeAlias = NDArray[F64]    # (3, 3)
Vec3: TypeAlias = NDArray[F64]    # (3,)

#: Orthonormality / unit-determinant tolerance for a valid rotation.
ROTATION_TOL = 1e-9

#: Drift threshold above which composed rotations are re-orthonormalized.
ORTHO_DRIFT_TOL = 1e-12


def _as_f64(x) -> NDArray[F64]:
    return np.asarray(x, dtype=np.float64)


def orthonormality_error(rotation: Mat3) -> float:
    """Frobenius norm of R^T R - I."""
    r = _as_f64(rotation)
    return float(np.linalg.norm(r.T @ r - np.eye(3)))


def nearest_rotation(matrix: Mat3) -> Mat3:
    """Project a near-rotation 3x3 matrix onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(_as_f64(matrix))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1.0
        r = u @ vt
    return r


@dataclass(frozen=True, slots=True)
class Point3:
    """A single 3D point in meters (sensor frame)."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        if not all(np.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("point coordinates must be finite")

    def as_array(self) -> Vec3:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class PointCloud:
    """A LiDAR scan: xyz coordinates plus optional reflectance and labels.

    ``labels`` is a :class:`padloc.kitti.PanopticLabels` when present; it is
    typed loosely here to keep this module free of IO concerns.
    """

    xyz: Points
    reflectance: NDArray[F64] | None = None
    labels: object | None = None

    def __post_init__(self) -> None:
        xyz = _as_f64(self.xyz).reshape(-1, 3)
        object.__setattr__(self, "xyz", xyz)
        if not np.isfinite(xyz).all():
            raise ValueError("point coordinates must be finite")
        if self.reflectance is not None:
            refl = _as_f64(self.reflectance).reshape(-1)
            if refl.shape[0] != xyz.shape[0]:
                raise ValueError("reflectance length does not match point count")
            object.__setattr__(self, "reflectance", refl)
        if self.labels is not None and len(self.labels) != xyz.shape[0]:
            raise ValueError("label length does not match point count")

    def __len__(self) -> int:
        return self.xyz.shape[0]


@dataclass(frozen=True)
class RigidTransform:
    """An element of SE(3): proper rotation plus translation."""

    rotation: Mat3
    translation: Vec3

    def __post_init__(self) -> None:
        r = _as_f64(self.rotation).reshape(3, 3)
        t = _as_f64(self.translation).reshape(3)
        if orthonormality_error(r) > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not +1")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise ValueError("transform entries must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def as_matrix(self) -> NDArray[F64]:
        """Homogeneous 4x4 representation."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class KeypointSet:
    """Indices of sampled keypoints plus their coordinates."""

    indices: NDArray[np.int64]
    coords: Points

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        coords = _as_f64(self.coords).reshape(-1, 3)
        if idx.shape[0] != coords.shape[0]:
            raise ValueError("indices and coords disagree in length")
        if np.unique(idx).shape[0] != idx.shape[0]:
            raise ValueError("keypoint indices must be unique")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return self.indices.shape[0]


# ---------------------------------------------------------------------------
# SE(3) operations
# ---------------------------------------------------------------------------

def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition applying ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    if orthonormality_error(r) > ORTHO_DRIFT_TOL:
        r = nearest_rotation(r)
    return RigidTransform(r, t)


def inverse(t: RigidTransform) -> RigidTransform:
    """Inverse transform; its rotation is exactly the transpose."""
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def apply_transform(t: RigidTransform, pts: Points) -> Points:
    """Apply ``t`` to an (n, 3) matrix of points, row-wise R p + t."""
    pts = _as_f64(pts).reshape(-1, 3)
    return pts @ t.rotation.T + t.translation


def rotation_about_z(angle_rad: float) -> Mat3:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_transform(rng: np.random.Generator,
                     max_translation: float = 10.0) -> RigidTransform:
    """Uniformly random rotation (QR-based) with bounded random translation."""
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(q, t)


# ---------------------------------------------------------------------------
# Farthest point sampling
# ---------------------------------------------------------------------------

def farthest_point_sampling(cloud: PointCloud, n: int, seed: int = 0) -> KeypointSet:
    """Greedy max-min keypoint selection.

    The first point is ``seed mod len(cloud)``; each following point
    maximizes its minimum squared distance to the already selected ones.
    Returns min(n, len(cloud)) unique indices, deterministically.
    """
    if len(cloud) == 0:
        raise ValueError("empty input")
    if n < 1:
        raise ValueError("n must be >= 1")

    pts = cloud.xyz
    count = min(n, len(cloud))
    selected = np.empty(count, dtype=np.int64)
    selected[0] = seed % len(cloud)

    # Squared distances are monotone-equivalent to Euclidean and cheaper.
    dist = np.sum((pts - pts[selected[0]]) ** 2, axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dist))
        selected[i] = nxt
        dist = np.minimum(dist, np.sum((pts - pts[nxt]) ** 2, axis=1))

    return KeypointSet(indices=selected, coords=pts[selected])
