"""End-to-end wiring: scans in, transforms / losses / loop reports out.

These functions connect sampling, features, matching, registration,
descriptors, and evaluation under one :class:`~padloc.config.RunConfig`.
The CLI is a thin shell over them; tests and notebook-style scripts can
call them directly.

Oracle modes make the pipeline verifiable without trained weights:
``oracle_matching`` injects the identity correspondence (valid for
synthetic pairs that share point order), and ``oracle_descriptors``
derives descriptors from ground-truth positions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .descriptor import Descriptor, VladWeights, describe
from .features import FeatureMatrix, FeatureProviderConfig, make_provider
from .geom import (KeypointSet, PointCloud, RigidTransform,
                   farthest_point_sampling, inverse)
from .kitti import PanopticLabels, SequenceIndex, read_labels, read_scan
from .loopdb import DescriptorDB, LoopCandidate, LoopEvalReport, evaluate_sequence
from .losses import (DirectionalLosses, LossBreakdown, build_object_adjacency,
                     match_loss, meta_semantic_loss, mmo_loss, one_hot_semantic,
                     one_hot_superclass, pose_loss, semantic_loss, subset_labels,
                     total_loss, triplet_loss)
from .matching import EncoderWeights, MatchResult, match
from .registration import Correspondences, RegistrationResult, register, weighted_residual
from .synth import position_descriptor

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Component construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Components:
    """Provider and weight bundles derived from a RunConfig."""

    provider: object
    encoder: EncoderWeights
    vlad: VladWeights


def build_components(cfg: RunConfig) -> Components:
    feature_cfg = FeatureProviderConfig(
        kind="loaded-linear" if cfg.feature_weights else "geometric-baseline",
        radius=cfg.feature_radius,
        f=cfg.f,
        include_xyz=cfg.include_xyz,
        seed=cfg.seed,
        weight_path=cfg.feature_weights,
    )
    provider = make_provider(feature_cfg)
    if cfg.encoder_weights:
        encoder = EncoderWeights.load(cfg.encoder_weights, f=cfg.f, h=cfg.heads, mode=cfg.mode)
    else:
        encoder = EncoderWeights.random(f=cfg.f, h=cfg.heads, seed=cfg.seed, mode=cfg.mode)
    if cfg.vlad_weights:
        vlad = VladWeights.load(cfg.vlad_weights, f=cfg.f, k=cfg.k, g=cfg.g)
    else:
        vlad = VladWeights.random(f=cfg.f, k=cfg.k, g=cfg.g, seed=cfg.seed)
    return Components(provider=provider, encoder=encoder, vlad=vlad)


def keypoints_and_features(cloud: PointCloud, cfg: RunConfig,
                           comps: Components) -> tuple[KeypointSet, FeatureMatrix]:
    keys = farthest_point_sampling(cloud, cfg.n_keypoints, seed=cfg.seed)
    return keys, comps.provider.compute(cloud, keys)


def scan_descriptor(cloud: PointCloud, cfg: RunConfig, comps: Components) -> Descriptor:
    _, feats = keypoints_and_features(cloud, cfg, comps)
    return describe(feats.values, comps.vlad)


# ---------------------------------------------------------------------------
# Pair matching and registration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairMatch:
    """Keypoints and both matching directions for one scan pair."""

    keys_a: KeypointSet
    keys_b: KeypointSet
    forward: MatchResult    # a -> b
    backward: MatchResult   # b -> a


def _identity_match(n: int, q_t: np.ndarray) -> MatchResult:
    eye = np.eye(n)
    return MatchResult(matching=eye, projected=q_t.copy(), confidence=np.ones(n))


def match_pair(cloud_a: PointCloud, cloud_b: PointCloud, cfg: RunConfig,
               comps: Components, oracle_matching: bool = False) -> PairMatch:
    keys_a = farthest_point_sampling(cloud_a, cfg.n_keypoints, seed=cfg.seed)
    if oracle_matching:
        if len(cloud_a) != len(cloud_b):
            raise ValueError("oracle matching needs clouds with shared point order")
        keys_b = KeypointSet(indices=keys_a.indices, coords=cloud_b.xyz[keys_a.indices])
        n = len(keys_a)
        return PairMatch(
            keys_a=keys_a,
            keys_b=keys_b,
            forward=_identity_match(n, keys_b.coords),
            backward=_identity_match(n, keys_a.coords),
        )
    keys_b = farthest_point_sampling(cloud_b, cfg.n_keypoints, seed=cfg.seed)
    feats_a = comps.provider.compute(cloud_a, keys_a)
    feats_b = comps.provider.compute(cloud_b, keys_b)
    return PairMatch(
        keys_a=keys_a,
        keys_b=keys_b,
        forward=match(feats_a, feats_b, keys_b.coords, comps.encoder, cfg.diversity),
        backward=match(feats_b, feats_a, keys_a.coords, comps.encoder, cfg.diversity),
    )


def register_from_match(keys: KeypointSet, result: MatchResult) -> tuple[RegistrationResult, float]:
    """Weighted registration of source keypoints onto projected targets."""
    weights = result.confidence
    if weights.sum() <= 0:
        # Fully uniform attention rows give zero confidence everywhere;
        # fall back to unweighted so evaluation can continue.
        weights = np.ones(len(weights))
    corr = Correspondences(source=keys.coords, target=result.projected, weights=weights)
    reg = register(corr)
    return reg, weighted_residual(corr, reg.transform)


def register_pair(cloud_a: PointCloud, cloud_b: PointCloud, cfg: RunConfig,
                  comps: Components, oracle_matching: bool = False,
                  ) -> tuple[RegistrationResult, float, PairMatch]:
    pair = match_pair(cloud_a, cloud_b, cfg, comps, oracle_matching)
    reg, residual = register_from_match(pair.keys_a, pair.forward)
    return reg, residual, pair


# ---------------------------------------------------------------------------
# Loss evaluation over a labeled pair
# ---------------------------------------------------------------------------

def _direction_losses(keys_s: KeypointSet, keys_t: KeypointSet, m_st: np.ndarray,
                      m_ts: np.ndarray, h_gt: RigidTransform, reg: RegistrationResult,
                      labels_s: PanopticLabels, labels_t: PanopticLabels) -> DirectionalLosses:
    sub_s = subset_labels(labels_s, keys_s.indices)
    sub_t = subset_labels(labels_t, keys_t.indices)
    return DirectionalLosses(
        pose=pose_loss(reg.transform, h_gt, keys_s.coords),
        matching=match_loss(h_gt, keys_s.coords, m_st, keys_t.coords),
        semantic=semantic_loss(one_hot_semantic(sub_s), m_st, one_hot_semantic(sub_t)),
        meta_semantic=meta_semantic_loss(one_hot_superclass(sub_s), m_st,
                                         one_hot_superclass(sub_t)),
        mmo=mmo_loss(build_object_adjacency(sub_s), m_st,
                     build_object_adjacency(sub_t), m_ts),
    )


def pair_losses(cloud_a: PointCloud, cloud_b: PointCloud, h_gt: RigidTransform,
                cfg: RunConfig, comps: Components, oracle_matching: bool = False,
                negative: PointCloud | None = None,
                include_reverse: bool = True,
                mmo_transpose_fallback: bool = False) -> LossBreakdown:
    """Forward (+ reverse) loss breakdown for a labeled pair.

    ``h_gt`` maps cloud_a into cloud_b. The reverse direction reuses the
    same weights with swapped inputs and the inverted ground truth. The
    triplet term needs a negative sample; it is 0 when none is given.
    ``mmo_transpose_fallback`` feeds the transpose of the forward matching
    into the object penalty instead of the reverse head's matrix.
    """
    if cloud_a.labels is None or cloud_b.labels is None:
        raise ValueError("panoptic labels are required for loss evaluation")

    pair = match_pair(cloud_a, cloud_b, cfg, comps, oracle_matching)
    reg_fwd, _ = register_from_match(pair.keys_a, pair.forward)

    m_ab = pair.forward.matching
    m_ba = pair.backward.matching
    if mmo_transpose_fallback:
        m_ba_for_mmo, m_ab_for_mmo = m_ab.T, m_ba.T
    else:
        m_ba_for_mmo, m_ab_for_mmo = m_ba, m_ab

    forward = _direction_losses(pair.keys_a, pair.keys_b, m_ab, m_ba_for_mmo,
                                h_gt, reg_fwd, cloud_a.labels, cloud_b.labels)
    reverse = None
    if include_reverse:
        reg_rev, _ = register_from_match(pair.keys_b, pair.backward)
        reverse = _direction_losses(pair.keys_b, pair.keys_a, m_ba, m_ab_for_mmo,
                                    inverse(h_gt), reg_rev, cloud_b.labels, cloud_a.labels)

    tri = 0.0
    if negative is not None:
        d_a = scan_descriptor(cloud_a, cfg, comps)
        d_p = scan_descriptor(cloud_b, cfg, comps)
        d_n = scan_descriptor(negative, cfg, comps)
        tri = triplet_loss(d_a, d_p, d_n, cfg.loss.margin)

    return total_loss(tri, forward, reverse, cfg.loss)


# ---------------------------------------------------------------------------
# Sequence-level loop closure detection
# ---------------------------------------------------------------------------

def _load_sequence(seq_dir: Path) -> tuple[SequenceIndex, list[PointCloud]]:
    index = SequenceIndex.from_dir(seq_dir)
    clouds = []
    for pos, scan_path in enumerate(index.scans):
        cloud = read_scan(scan_path)
        if index.labels is not None:
            labels = read_labels(index.labels[pos], len(cloud))
            cloud = PointCloud(xyz=cloud.xyz, reflectance=cloud.reflectance, labels=labels)
        clouds.append(cloud)
    return index, clouds


def detect_loops(seq_dir: str | Path, cfg: RunConfig,
                 oracle_descriptors: bool = False,
                 descriptor_noise: float = 0.0,
                 oracle_matching: bool = False,
                 register_candidates: bool = True) -> tuple[LoopEvalReport, list[LoopCandidate]]:
    """Build descriptors scan by scan, query the database, and evaluate."""
    index, clouds = _load_sequence(Path(seq_dir))
    if index.poses is None:
        raise FileNotFoundError(f"no poses.txt under {seq_dir}; ground truth required")
    poses = list(index.poses)

    comps = build_components(cfg)
    noise_rng = np.random.default_rng(cfg.seed)

    db = DescriptorDB(window=cfg.window)
    candidates: list[LoopCandidate] = []
    if len(clouds) < cfg.window + 2:
        log.warning("sequence of %d scans is shorter than window+2; no candidates possible",
                    len(clouds))
    for i, cloud in enumerate(clouds):
        if oracle_descriptors:
            d = position_descriptor(poses[i].translation, cfg.g,
                                    noise_sigma=descriptor_noise, rng=noise_rng)
        else:
            d = scan_descriptor(cloud, cfg, comps)
        candidate = db.query(i, d)
        if candidate is not None:
            candidates.append(candidate)
        db.add(i, d)

    estimated: dict[tuple[int, int], RigidTransform] = {}
    if register_candidates:
        for c in candidates:
            reg, _, _ = register_pair(clouds[c.query_index], clouds[c.match_index],
                                      cfg, comps, oracle_matching)
            estimated[(c.query_index, c.match_index)] = reg.transform

    report = evaluate_sequence(candidates, poses, cfg.positive_radius, cfg.window, estimated)
    return report, candidates


def path_markers_csv(report: LoopEvalReport, poses: list[RigidTransform]) -> str:
    """Plot-ready trajectory: x, y, and a loop flag per scan.

    A scan is flagged when it is the query of a candidate accepted at the
    best-F1 threshold.
    """
    best_tau = None
    best_f1 = -1.0
    for precision, recall, tau in report.curve:
        if precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
            if f1 > best_f1:
                best_f1, best_tau = f1, tau
    flagged = {p.i for p in report.pairs if best_tau is not None and p.score >= best_tau}
    lines = ["x,y,loop_flag"]
    for i, pose in enumerate(poses):
        x, y = float(pose.translation[0]), float(pose.translation[1])
        lines.append(f"{x!r},{y!r},{int(i in flagged)}")
    return "\n".join(lines) + "\n"
