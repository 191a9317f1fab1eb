"""Forward evaluation of the training losses.

Covers the retrieval triplet loss, the geometric pose and matching losses,
the panoptic semantic / meta-semantic misclassification losses, and the
multi-matched-object penalty, plus the bidirectional weighted total. All
matrix losses are mean absolute errors over every entry; everything here
is a pure function suitable for oracle-style verification.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np
from numpy.typing import NDArray

from .geom import RigidTransform, apply_transform
from .kitti import SUPER_CLASSES, PanopticLabels, default_superclass_table


@dataclass(frozen=True)
class OneHotMatrix:
    """(n, C) binary matrix with exactly one 1 per row."""

    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("one-hot matrix must be 2-D")
        if not np.isin(v, (0.0, 1.0)).all() or not (v.sum(axis=1) == 1.0).all():
            raise ValueError("each row must have exactly one 1")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ObjectAdjacency:
    """(n, n) binary instance-connectivity matrix, symmetric with unit diagonal."""

    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.isin(v, (0.0, 1.0)).all():
            raise ValueError("adjacency must be binary")
        if (v != v.T).any() or (np.diag(v) != 1.0).any():
            raise ValueError("adjacency must be symmetric with unit diagonal")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, slots=True)
class LossWeights:
    """Per-term weights and the triplet margin."""

    w_tri: float = 1.0
    w_pos: float = 1.0
    w_mat: float = 0.05
    w_sem: float = 0.125
    w_mes: float = 0.5
    w_mmo: float = 10.0
    margin: float = 0.5

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{f.name} must be finite and >= 0")


# ---------------------------------------------------------------------------
# Individual losses
# ---------------------------------------------------------------------------

def _values(x) -> NDArray[np.float64]:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def triplet_loss(d_a, d_p, d_n, margin: float) -> float:
    """max(d(anchor, positive) - d(anchor, negative) + margin, 0), L2 distance."""
    a, p, n = _values(d_a), _values(d_p), _values(d_n)
    if a.shape != p.shape or a.shape != n.shape:
        raise ValueError("descriptor lengths differ")
    d_ap = np.linalg.norm(a - p)
    d_an = np.linalg.norm(a - n)
    return float(max(d_ap - d_an + margin, 0.0))


def pose_loss(h_hat: RigidTransform, h_gt: RigidTransform, q_a: NDArray) -> float:
    """Mean absolute coordinate error between both transforms applied to q_a."""
    diff = apply_transform(h_hat, q_a) - apply_transform(h_gt, q_a)
    return float(np.mean(np.abs(diff)))


def match_loss(h_gt: RigidTransform, q_a: NDArray, m_hat: NDArray, q_p: NDArray) -> float:
    """Mean absolute error between transformed anchors and matched positives."""
    diff = apply_transform(h_gt, q_a) - np.asarray(m_hat, dtype=np.float64) @ np.asarray(q_p, dtype=np.float64)
    return float(np.mean(np.abs(diff)))


def semantic_loss(k_a, m_hat: NDArray, k_p) -> float:
    """Mean absolute error between anchor one-hots and projected positive one-hots."""
    ka, kp = _values(k_a), _values(k_p)
    if ka.shape[1] != kp.shape[1]:
        raise ValueError("class dimensions differ")
    return float(np.mean(np.abs(ka - np.asarray(m_hat, dtype=np.float64) @ kp)))


def meta_semantic_loss(j_a, m_hat: NDArray, j_p) -> float:
    """Semantic loss over the super-class one-hots."""
    return semantic_loss(j_a, m_hat, j_p)


def mmo_loss(o_a, m_ap: NDArray, o_p, m_pa: NDArray) -> float:
    """Penalty for matching one anchor object onto several positive objects.

    mean over all anchor-pair entries of (1 - O_a) * (M_ap . O_p . M_pa);
    same-object entries are masked out, so only mass that links two
    different anchor objects through a common positive object contributes.
    """
    oa, op = _values(o_a), _values(o_p)
    m_ap = np.asarray(m_ap, dtype=np.float64)
    m_pa = np.asarray(m_pa, dtype=np.float64)
    cross = m_ap @ op @ m_pa
    if cross.shape != oa.shape:
        raise ValueError("matching matrices do not map between the two adjacencies")
    return float(np.mean((1.0 - oa) * cross))


# ---------------------------------------------------------------------------
# Panoptic matrix construction
# ---------------------------------------------------------------------------

def semantic_class_ids(table: dict[int, str] | None = None) -> tuple[int, ...]:
    """Canonical one-hot column order: sorted known semantic ids."""
    if table is None:
        table = default_superclass_table()
    return tuple(sorted(table))


def one_hot_semantic(labels: PanopticLabels, class_ids: tuple[int, ...] | None = None,
                     merge_moving: bool = True) -> OneHotMatrix:
    """One-hot encode semantic ids; unknown ids fall into the void column."""
    if class_ids is None:
        class_ids = semantic_class_ids()
    work = labels.merged_moving() if merge_moving else labels
    column = {sem_id: col for col, sem_id in enumerate(class_ids)}
    void_col = column[0]
    out = np.zeros((len(work), len(class_ids)))
    for row, sem in enumerate(work.semantic):
        out[row, column.get(int(sem), void_col)] = 1.0
    return OneHotMatrix(out)


def one_hot_superclass(labels: PanopticLabels) -> OneHotMatrix:
    out = np.zeros((len(labels), len(SUPER_CLASSES)))
    out[np.arange(len(labels)), labels.super_class] = 1.0
    return OneHotMatrix(out)


def build_object_adjacency(labels: PanopticLabels) -> ObjectAdjacency:
    """Connect thing points sharing instance id and semantic class.

    Stuff points (instance id 0) are singleton nodes: diagonal 1 and no
    edges, so the multi-matched-object penalty only acts on genuine
    object splitting.
    """
    sem = labels.semantic.astype(np.int64)
    inst = labels.instance.astype(np.int64)
    n = len(labels)
    thing = inst != 0
    same_inst = inst[:, None] == inst[None, :]
    same_sem = sem[:, None] == sem[None, :]
    adjacency = same_inst & same_sem & thing[:, None] & thing[None, :]
    adjacency |= np.eye(n, dtype=bool)
    return ObjectAdjacency(adjacency.astype(np.float64))


def subset_labels(labels: PanopticLabels, indices: NDArray) -> PanopticLabels:
    idx = np.asarray(indices, dtype=np.int64)
    return PanopticLabels(labels.semantic[idx], labels.instance[idx])


# ---------------------------------------------------------------------------
# Weighted bidirectional total
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class DirectionalLosses:
    """One direction's registration-side loss terms."""

    pose: float
    matching: float
    semantic: float
    meta_semantic: float
    mmo: float


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted total plus the averaged per-term values behind it."""

    total: float
    triplet: float
    pose: float
    matching: float
    semantic: float
    meta_semantic: float
    mmo: float

    def to_json_dict(self) -> dict[str, float]:
        return {
            "triplet": self.triplet,
            "pose": self.pose,
            "matching": self.matching,
            "semantic": self.semantic,
            "meta_semantic": self.meta_semantic,
            "mmo": self.mmo,
            "total": self.total,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def total_loss(triplet: float, forward: DirectionalLosses,
               reverse: DirectionalLosses | None, lw: LossWeights) -> LossBreakdown:
    """Weighted sum; directional terms average forward and reverse passes.

    ``reverse=None`` evaluates the forward-only regime.
    """
    if reverse is None:
        avg = forward
    else:
        avg = DirectionalLosses(
            pose=0.5 * (forward.pose + reverse.pose),
            matching=0.5 * (forward.matching + reverse.matching),
            semantic=0.5 * (forward.semantic + reverse.semantic),
            meta_semantic=0.5 * (forward.meta_semantic + reverse.meta_semantic),
            mmo=0.5 * (forward.mmo + reverse.mmo),
        )
    total = (lw.w_tri * triplet + lw.w_pos * avg.pose + lw.w_mat * avg.matching
             + lw.w_sem * avg.semantic + lw.w_mes * avg.meta_semantic + lw.w_mmo * avg.mmo)
    return LossBreakdown(total=total, triplet=triplet, pose=avg.pose,
                         matching=avg.matching, semantic=avg.semantic,
                         meta_semantic=avg.meta_semantic, mmo=avg.mmo)
