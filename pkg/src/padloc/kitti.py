"""KITTI-odometry scan, panoptic label, and ground-truth pose IO.

File formats:
  scans   ``.bin``    little-endian float32 quadruples (x, y, z, reflectance)
  labels  ``.label``  little-endian uint32 per point; lower 16 bits semantic
                      class id, upper 16 bits instance id
  poses   plain text, 12 whitespace-separated reals per line (row-major 3x4)

Semantic ids are grouped into seven super-classes (flat, human, vehicle,
construction, object, nature, void) following the Cityscapes grouping; the
mapping ships as an editable text config and unknown ids fall back to void.
Moving-class variants are merged into their static counterparts by default.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geom import PointCloud, RigidTransform, nearest_rotation, orthonormality_error

log = logging.getLogger(__name__)

#: Fixed super-class order; also the column order of meta-semantic one-hots.
SUPER_CLASSES = ("flat", "human", "vehicle", "construction", "object", "nature", "void")

VOID_INDEX = SUPER_CLASSES.index("void")

#: Moving-class ids mapped onto their static counterparts.
MOVING_TO_STATIC = {
    252: 10,   # car
    253: 31,   # bicyclist
    254: 30,   # person
    255: 32,   # motorcyclist
    256: 16,   # on-rails
    257: 13,   # bus
    258: 18,   # truck
    259: 20,   # other-vehicle
}

#: Pose rotation blocks with more drift than float noise are projected back
#: onto SO(3); KITTI files carry limited precision (drift up to ~1e-6).
POSE_REPAIR_TOL = 1e-12


# ---------------------------------------------------------------------------
# Super-class table
# ---------------------------------------------------------------------------

def parse_superclass_table(text: str) -> dict[int, str]:
    """Parse ``semantic_id = group`` lines; ``#`` starts a comment."""
    table: dict[int, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed super-class entry at line {lineno}: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        group = value.lower()
        if group not in SUPER_CLASSES:
            raise ValueError(f"unknown super-class {value!r} at line {lineno}")
        table[int(key)] = group
    return table


def load_superclass_table(path: str | Path) -> dict[int, str]:
    return parse_superclass_table(Path(path).read_text())


def default_superclass_table() -> dict[int, str]:
    """The packaged default table (SemanticKITTI ids, Cityscapes groups)."""
    text = resources.files("padloc").joinpath("data/superclasses.cfg").read_text()
    return parse_superclass_table(text)


def superclass_indices(semantic: NDArray[np.integer],
                       table: dict[int, str] | None = None) -> NDArray[np.int64]:
    """Map semantic ids to super-class indices; unknown ids map to void."""
    if table is None:
        table = default_superclass_table()
    lookup = np.full(65536, VOID_INDEX, dtype=np.int64)
    for sem_id, group in table.items():
        lookup[sem_id] = SUPER_CLASSES.index(group)
    return lookup[np.asarray(semantic, dtype=np.int64)]


def merge_moving(semantic: NDArray[np.integer]) -> NDArray[np.uint16]:
    """Replace moving-class ids with their static counterparts."""
    out = np.asarray(semantic, dtype=np.uint16).copy()
    for moving, static in MOVING_TO_STATIC.items():
        out[out == moving] = static
    return out


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PanopticLabels:
    """Per-point semantic class, instance id, and derived super-class index."""

    semantic: NDArray[np.uint16]
    instance: NDArray[np.uint16]
    super_class: NDArray[np.int64] = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        sem = np.asarray(self.semantic, dtype=np.uint16).reshape(-1)
        inst = np.asarray(self.instance, dtype=np.uint16).reshape(-1)
        if sem.shape != inst.shape:
            raise ValueError("semantic and instance label lengths differ")
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", inst)
        if self.super_class is None:
            object.__setattr__(self, "super_class", superclass_indices(sem))
        else:
            sc = np.asarray(self.super_class, dtype=np.int64).reshape(-1)
            if sc.shape != sem.shape:
                raise ValueError("super_class length differs from semantic")
            object.__setattr__(self, "super_class", sc)

    def __len__(self) -> int:
        return self.semantic.shape[0]

    def merged_moving(self) -> "PanopticLabels":
        return PanopticLabels(merge_moving(self.semantic), self.instance)


@dataclass(frozen=True)
class SequenceIndex:
    """Scan paths in temporal order with optional labels and poses."""

    scans: tuple[Path, ...]
    labels: tuple[Path, ...] | None = None
    poses: tuple[RigidTransform, ...] | None = None

    def __post_init__(self) -> None:
        if self.labels is not None and len(self.labels) != len(self.scans):
            raise ValueError("label files do not align 1:1 with scans")
        if self.poses is not None and len(self.poses) != len(self.scans):
            raise ValueError("poses do not align 1:1 with scans")

    def __len__(self) -> int:
        return len(self.scans)

    @staticmethod
    def from_dir(seq_dir: str | Path) -> "SequenceIndex":
        """Index a KITTI-style directory: velodyne/*.bin, labels/*.label, poses.txt."""
        seq_dir = Path(seq_dir)
        scan_dir = seq_dir / "velodyne"
        if not scan_dir.is_dir():
            raise FileNotFoundError(f"no velodyne/ directory under {seq_dir}")
        scans = tuple(sorted(scan_dir.glob("*.bin")))
        if not scans:
            raise FileNotFoundError(f"no .bin scans under {scan_dir}")

        labels: tuple[Path, ...] | None = None
        label_dir = seq_dir / "labels"
        if label_dir.is_dir():
            labels = tuple(sorted(label_dir.glob("*.label")))
            if len(labels) != len(scans):
                raise ValueError("label files do not align 1:1 with scans")

        poses = None
        pose_file = seq_dir / "poses.txt"
        if pose_file.is_file():
            poses = tuple(read_poses(pose_file))
        return SequenceIndex(scans=scans, labels=labels, poses=poses)


# ---------------------------------------------------------------------------
# Scan IO
# ---------------------------------------------------------------------------

def read_scan(path: str | Path) -> PointCloud:
    """Decode a velodyne ``.bin`` scan; non-finite points are dropped."""
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise ValueError(f"malformed scan {path}: {len(raw)} bytes not divisible by 16")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(data).all(axis=1)
    if not finite.all():
        log.warning("dropped %d non-finite points from %s", int((~finite).sum()), path)
        data = data[finite]
    return PointCloud(xyz=data[:, :3], reflectance=data[:, 3])


def write_scan(path: str | Path, cloud: PointCloud) -> None:
    refl = cloud.reflectance
    if refl is None:
        refl = np.zeros(len(cloud))
    data = np.hstack([cloud.xyz, refl.reshape(-1, 1)]).astype("<f4")
    Path(path).write_bytes(data.tobytes())


# ---------------------------------------------------------------------------
# Label IO
# ---------------------------------------------------------------------------

def decode_label_words(words: NDArray[np.uint32]) -> PanopticLabels:
    words = np.asarray(words, dtype=np.uint32)
    semantic = (words & 0xFFFF).astype(np.uint16)
    instance = (words >> 16).astype(np.uint16)
    return PanopticLabels(semantic=semantic, instance=instance)


def encode_label_words(labels: PanopticLabels) -> NDArray[np.uint32]:
    return (labels.instance.astype(np.uint32) << 16) | labels.semantic.astype(np.uint32)


def read_labels(path: str | Path, expected_count: int) -> PanopticLabels:
    raw = Path(path).read_bytes()
    if len(raw) != 4 * expected_count:
        raise ValueError(
            f"label/scan length mismatch: {path} holds {len(raw) // 4} labels, "
            f"expected {expected_count}"
        )
    return decode_label_words(np.frombuffer(raw, dtype="<u4"))


def write_labels(path: str | Path, labels: PanopticLabels) -> None:
    Path(path).write_bytes(encode_label_words(labels).astype("<u4").tobytes())


# ---------------------------------------------------------------------------
# Pose IO
# ---------------------------------------------------------------------------

def read_poses(path: str | Path) -> list[RigidTransform]:
    """Parse a KITTI pose file (row-major 3x4 per nonempty line)."""
    poses: list[RigidTransform] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        tokens = line.split()
        if len(tokens) != 12:
            raise ValueError(f"malformed pose line {lineno}: expected 12 values, got {len(tokens)}")
        values = np.array([float(tok) for tok in tokens]).reshape(3, 4)
        rotation = values[:, :3]
        if (orthonormality_error(rotation) > POSE_REPAIR_TOL
                or abs(np.linalg.det(rotation) - 1.0) > POSE_REPAIR_TOL):
            rotation = nearest_rotation(rotation)
        poses.append(RigidTransform(rotation, values[:, 3]))
    return poses


def write_poses(path: str | Path, poses: list[RigidTransform]) -> None:
    lines = []
    for pose in poses:
        block = np.hstack([pose.rotation, pose.translation.reshape(3, 1)])
        lines.append(" ".join(repr(float(v)) for v in block.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")
