"""Synthetic labeled scenes, pairs, and trajectories for oracle-style tests.

Scenes are collections of box and sphere surfaces, each carrying a unique
instance id and a semantic id from the "thing" classes, so matching,
registration, and panoptic-loss behavior can be verified against known
ground truth without any real data or trained weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .descriptor import Descriptor
from .geom import PointCloud, RigidTransform, apply_transform, inverse, random_transform, rotation_about_z
from .kitti import PanopticLabels

#: Semantic ids assigned to synthetic objects, cycled in order (all "things").
THING_CLASS_POOL = (10, 18, 30, 20, 11, 13, 15)

#: Semantic id of the optional ground plane ("road", a "stuff" class).
GROUND_CLASS = 40


@dataclass(frozen=True, slots=True)
class SceneSpec:
    """Recipe for one synthetic scene."""

    n_objects: int = 4
    points_per_object: int = 64
    noise_sigma: float = 0.0
    seed: int = 0
    ground_points: int = 0

    def __post_init__(self) -> None:
        if self.n_objects < 1 or self.points_per_object < 1:
            raise ValueError("object and point counts must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")


def _sample_box_surface(rng: np.random.Generator, half: NDArray, count: int) -> NDArray:
    """Uniform samples on the surface of an axis-aligned box, area-weighted."""
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    axis = rng.choice(3, size=count, p=areas / areas.sum())
    side = rng.choice([-1.0, 1.0], size=count)
    pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    pts[np.arange(count), axis] = side * half[axis]
    return pts


def _sample_sphere_surface(rng: np.random.Generator, radius: float, count: int) -> NDArray:
    v = rng.normal(size=(count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return radius * v


def synth_scene(spec: SceneSpec) -> tuple[PointCloud, RigidTransform]:
    """Build a labeled scene plus a random ground-truth transform.

    The transform is the one :func:`synth_pair` uses to produce the second
    cloud; it is returned here so callers can derive their own moved copies.
    Reproducible for a fixed spec.
    """
    rng = np.random.default_rng(spec.seed)
    chunks: list[NDArray] = []
    semantic: list[NDArray] = []
    instance: list[NDArray] = []

    for obj in range(spec.n_objects):
        center = np.array([
            rng.uniform(-15.0, 15.0),
            rng.uniform(-15.0, 15.0),
            rng.uniform(0.5, 3.0),
        ])
        if obj % 2 == 0:
            half = rng.uniform(0.5, 2.0, size=3)
            pts = _sample_box_surface(rng, half, spec.points_per_object)
        else:
            pts = _sample_sphere_surface(rng, rng.uniform(0.5, 2.0), spec.points_per_object)
        chunks.append(center + pts)
        semantic.append(np.full(spec.points_per_object,
                                THING_CLASS_POOL[obj % len(THING_CLASS_POOL)], dtype=np.uint16))
        instance.append(np.full(spec.points_per_object, obj + 1, dtype=np.uint16))

    if spec.ground_points > 0:
        ground = np.zeros((spec.ground_points, 3))
        ground[:, :2] = rng.uniform(-30.0, 30.0, size=(spec.ground_points, 2))
        chunks.append(ground)
        semantic.append(np.full(spec.ground_points, GROUND_CLASS, dtype=np.uint16))
        instance.append(np.zeros(spec.ground_points, dtype=np.uint16))

    xyz = np.vstack(chunks)
    labels = PanopticLabels(np.concatenate(semantic), np.concatenate(instance))
    cloud = PointCloud(xyz=xyz, reflectance=rng.uniform(0.0, 1.0, size=len(xyz)), labels=labels)
    return cloud, random_transform(rng)


def synth_pair(spec: SceneSpec) -> tuple[PointCloud, PointCloud, RigidTransform]:
    """A scene and its transformed copy: second = T . first (+ noise).

    Point order, reflectance, and labels are shared, so the ground-truth
    correspondence is the identity permutation.
    """
    first, transform = synth_scene(spec)
    moved = apply_transform(transform, first.xyz)
    if spec.noise_sigma > 0:
        noise_rng = np.random.default_rng([spec.seed, 1])
        moved = moved + noise_rng.normal(scale=spec.noise_sigma, size=moved.shape)
    second = PointCloud(xyz=moved, reflectance=first.reflectance, labels=first.labels)
    return first, second, transform


# ---------------------------------------------------------------------------
# Trajectories with planted revisits
# ---------------------------------------------------------------------------

def figure_eight_poses(samples_per_lap: int, laps: int = 2,
                       scale: float = 150.0) -> list[RigidTransform]:
    """Sensor poses along a figure-eight, traversed ``laps`` times.

    The curve parameter is reduced modulo one lap, so scan k and scan
    k + samples_per_lap sit at bit-identical poses: exact planted revisits.
    Yaw follows the direction of travel.
    """
    poses = []
    for k in range(samples_per_lap * laps):
        t = 2.0 * np.pi * (k % samples_per_lap) / samples_per_lap
        x = scale * np.sin(t)
        y = scale * np.sin(t) * np.cos(t)
        yaw = np.arctan2(np.cos(2.0 * t), np.cos(t))
        poses.append(RigidTransform(rotation_about_z(yaw), np.array([x, y, 0.0])))
    return poses


def render_scans(world: PointCloud, poses: list[RigidTransform]) -> list[PointCloud]:
    """Sensor-frame scans of a static world: scan_k = pose_k^-1 . world."""
    scans = []
    for pose in poses:
        scans.append(PointCloud(
            xyz=apply_transform(inverse(pose), world.xyz),
            reflectance=world.reflectance,
            labels=world.labels,
        ))
    return scans


def position_descriptor(position: NDArray, g: int, scale: float = 100.0,
                        noise_sigma: float = 0.0,
                        rng: np.random.Generator | None = None) -> Descriptor:
    """Oracle descriptor derived from a ground-truth position.

    Embeds (x, y, z, scale) on the unit sphere (injective for scale != 0),
    zero-padded to length g; two scans get identical descriptors exactly
    when their positions coincide. Optional Gaussian noise is added before
    renormalization to degrade retrieval in a controlled way.
    """
    if g < 4:
        raise ValueError("descriptor length must be >= 4")
    v = np.zeros(g)
    v[:3] = np.asarray(position, dtype=np.float64).reshape(3)
    v[3] = scale
    v /= np.linalg.norm(v)
    if noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        v = v + rng.normal(scale=noise_sigma, size=g)
        v /= np.linalg.norm(v)
    return Descriptor(values=v)
