"""Descriptor database, loop-closure decision protocol, and metrics.

Queries run an exact linear nearest-neighbor search over all scans stored
at least window+1 frames earlier (temporal exclusion), with similarity
defined as negative L2 distance. Sweeping the decision threshold over the
observed scores yields the precision-recall curve and the derived metrics:
average precision (step integration), maximum F1, and extended precision
(mean of the precision at the lowest-recall operating point and the best
recall at full precision).

A query counts as a false negative at a threshold when it has at least
one admissible ground-truth-positive frame but its best candidate either
falls below the threshold or points at a geometrically wrong frame.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geom import RigidTransform, compose, inverse

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 50


def _descriptor_values(d) -> NDArray[np.float64]:
    return np.asarray(getattr(d, "values", d), dtype=np.float64)


@dataclass(frozen=True, slots=True)
class LoopCandidate:
    """Best admissible match for one query scan."""

    query_index: int
    match_index: int
    score: float                     # negative L2 descriptor distance
    threshold: float | None = None   # decision threshold, applied by the caller


@dataclass
class DescriptorDB:
    """Ordered store of (scan index, descriptor) with temporal exclusion."""

    window: int = DEFAULT_WINDOW
    _indices: list[int] = field(default_factory=list)
    _descriptors: list[NDArray[np.float64]] = field(default_factory=list)

    def add(self, scan_index: int, descriptor) -> None:
        if self._indices and scan_index <= self._indices[-1]:
            raise ValueError("scan indices must be strictly increasing")
        self._indices.append(int(scan_index))
        self._descriptors.append(_descriptor_values(descriptor))

    def __len__(self) -> int:
        return len(self._indices)

    def query(self, scan_index: int, descriptor) -> LoopCandidate | None:
        """Closest stored descriptor among scans <= scan_index - window - 1.

        Returns None when the exclusion window leaves no admissible scan.
        Ties break toward the smaller stored index.
        """
        cutoff = scan_index - self.window - 1
        admissible = [k for k, idx in enumerate(self._indices) if idx <= cutoff]
        if not admissible:
            return None
        query = _descriptor_values(descriptor)
        stack = np.stack([self._descriptors[k] for k in admissible])
        distances = np.linalg.norm(stack - query, axis=1)
        best = int(np.argmin(distances))  # first minimum: smallest index wins ties
        return LoopCandidate(
            query_index=int(scan_index),
            match_index=self._indices[admissible[best]],
            score=-float(distances[best]),
        )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class PairRecord:
    i: int
    j: int
    score: float
    is_tp: bool


@dataclass(frozen=True)
class LoopEvalReport:
    """PR curve, threshold sweep counts, metrics, and registration errors."""

    curve: tuple[tuple[float, float, float], ...]   # (precision, recall, threshold)
    counts: tuple[tuple[int, int, int, float], ...]  # (tp, fp, fn, threshold)
    ap: float
    max_f1: float
    ep: float
    pairs: tuple[PairRecord, ...]
    no_positives: bool = False
    pair_errors: tuple[tuple[int, int, float, float], ...] = ()  # (i, j, r_err, t_err)
    mean_r_err: float | None = None
    mean_t_err: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "ap": self.ap,
            "max_f1": self.max_f1,
            "ep": self.ep,
            "no_positives": self.no_positives,
            "curve": [{"precision": p, "recall": r, "threshold": t} for p, r, t in self.curve],
            "counts": [{"tp": tp, "fp": fp, "fn": fn, "threshold": t}
                       for tp, fp, fn, t in self.counts],
            "pairs": [{"i": p.i, "j": p.j, "score": p.score, "is_tp": p.is_tp}
                      for p in self.pairs],
            "pair_errors": [{"i": i, "j": j, "r_err_deg": r, "t_err_m": t}
                            for i, j, r, t in self.pair_errors],
            "mean_r_err_deg": self.mean_r_err,
            "mean_t_err_m": self.mean_t_err,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def pr_curve_csv(self) -> str:
        lines = ["precision,recall,threshold"]
        lines += [f"{p!r},{r!r},{t!r}" for p, r, t in self.curve]
        return "\n".join(lines) + "\n"

    def pairs_csv(self) -> str:
        lines = ["i,j,score,is_tp"]
        lines += [f"{p.i},{p.j},{p.score!r},{int(p.is_tp)}" for p in self.pairs]
        return "\n".join(lines) + "\n"


def has_admissible_positive(positions: NDArray, i: int, radius: float, window: int) -> bool:
    cutoff = i - window  # slice end: indices 0 .. i - window - 1
    if cutoff <= 0:
        return False
    d = np.linalg.norm(positions[:cutoff] - positions[i], axis=1)
    return bool((d <= radius).any())


def evaluate_sequence(candidates: list[LoopCandidate], gt_poses: list[RigidTransform],
                      positive_radius: float, window: int = DEFAULT_WINDOW,
                      estimated_transforms: dict[tuple[int, int], RigidTransform] | None = None,
                      ) -> LoopEvalReport:
    """Sweep thresholds over the candidate scores and compute all metrics.

    ``estimated_transforms`` optionally maps (i, j) to the estimated
    scan_i -> scan_j transform; registration errors are reported for every
    geometrically-true pair present in it.
    """
    missing = sorted({c.query_index for c in candidates if c.query_index >= len(gt_poses)}
                     | {c.match_index for c in candidates if c.match_index >= len(gt_poses)})
    if missing:
        raise ValueError(f"missing poses for indices {missing}")

    positions = np.array([p.translation for p in gt_poses]).reshape(-1, 3)
    total_positives = sum(
        has_admissible_positive(positions, i, positive_radius, window)
        for i in range(len(gt_poses))
    )

    pairs = []
    for c in candidates:
        dist = float(np.linalg.norm(positions[c.query_index] - positions[c.match_index]))
        pairs.append(PairRecord(i=c.query_index, j=c.match_index, score=c.score,
                                is_tp=dist <= positive_radius))

    no_positives = total_positives == 0
    if no_positives:
        log.warning("no ground-truth loop closures within %.2f m; AP emitted as 0",
                    positive_radius)

    curve: list[tuple[float, float, float]] = []
    counts: list[tuple[int, int, int, float]] = []
    for tau in sorted({p.score for p in pairs}, reverse=True):
        accepted = [p for p in pairs if p.score >= tau]
        tp = sum(p.is_tp for p in accepted)
        fp = len(accepted) - tp
        fn = total_positives - tp
        precision = tp / (tp + fp)
        recall = tp / total_positives if total_positives else 0.0
        curve.append((precision, recall, tau))
        counts.append((tp, fp, fn, tau))

    ap = 0.0
    prev_recall = 0.0
    for precision, recall, _ in curve:  # thresholds descending: recall non-decreasing
        ap += (recall - prev_recall) * precision
        prev_recall = recall

    max_f1 = 0.0
    for precision, recall, _ in curve:
        if precision + recall > 0:
            max_f1 = max(max_f1, 2.0 * precision * recall / (precision + recall))

    ep = 0.0
    if curve:
        min_recall = min(r for _, r, _ in curve)
        p_r0 = max(p for p, r, _ in curve if r == min_recall)
        r_p100 = max((r for p, r, _ in curve if p == 1.0), default=0.0)
        ep = 0.5 * (p_r0 + r_p100)

    pair_errors = []
    if estimated_transforms:
        for p in pairs:
            if p.is_tp and (p.i, p.j) in estimated_transforms:
                gt_rel = compose(inverse(gt_poses[p.j]), gt_poses[p.i])
                r_err, t_err = registration_errors(estimated_transforms[(p.i, p.j)], gt_rel)
                pair_errors.append((p.i, p.j, r_err, t_err))

    return LoopEvalReport(
        curve=tuple(curve),
        counts=tuple(counts),
        ap=0.0 if no_positives else ap,
        max_f1=max_f1,
        ep=ep,
        pairs=tuple(pairs),
        no_positives=no_positives,
        pair_errors=tuple(pair_errors),
        mean_r_err=float(np.mean([e[2] for e in pair_errors])) if pair_errors else None,
        mean_t_err=float(np.mean([e[3] for e in pair_errors])) if pair_errors else None,
    )


def registration_errors(h_hat: RigidTransform, h_gt: RigidTransform) -> tuple[float, float]:
    """Rotation geodesic error in degrees and translation error in meters.

    The angle of R_gt^T R_hat is evaluated as atan2(|sin|, cos) with the
    sine taken from the skew part: identical to the arccos of the trace,
    but without the precision floor near zero (arccos(1 - ulp) is already
    about 2e-8 rad, which would mask sub-microdegree errors).
    """
    r_rel = h_gt.rotation.T @ h_hat.rotation
    sin_vec = 0.5 * np.array([
        r_rel[2, 1] - r_rel[1, 2],
        r_rel[0, 2] - r_rel[2, 0],
        r_rel[1, 0] - r_rel[0, 1],
    ])
    cos = np.clip((np.trace(r_rel) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.degrees(np.arctan2(np.linalg.norm(sin_vec), cos))
    t_err = np.linalg.norm(h_hat.translation - h_gt.translation)
    return float(angle), float(t_err)
