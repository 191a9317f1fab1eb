"""LiDAR loop-closure detection and point cloud registration.

The pipeline: farthest-point keypoints with geometric features, a
cross-attention matching head with diversity-based confidence weights,
weighted Kabsch-Umeyama registration, panoptic training losses, NetVLAD +
context-gating global descriptors, and a loop-closure evaluation harness
over KITTI-format sequences and synthetic scenes.
"""

from .config import ConfigError, RunConfig
from .descriptor import Descriptor, VladWeights, context_gate, describe, descriptor_distance, netvlad
from .features import (FeatureMatrix, FeatureProviderConfig, GeometricProvider,
                       LinearProvider, geometric_features, load_linear_provider,
                       make_provider)
from .geom import (KeypointSet, Point3, PointCloud, RigidTransform, apply_transform,
                   compose, farthest_point_sampling, inverse, random_transform,
                   rotation_about_z)
from .kitti import (PanopticLabels, SequenceIndex, SUPER_CLASSES, default_superclass_table,
                    load_superclass_table, read_labels, read_poses, read_scan,
                    write_labels, write_poses, write_scan)
from .loopdb import (DescriptorDB, LoopCandidate, LoopEvalReport, evaluate_sequence,
                     registration_errors)
from .losses import (DirectionalLosses, LossBreakdown, LossWeights, ObjectAdjacency,
                     OneHotMatrix, build_object_adjacency, match_loss,
                     meta_semantic_loss, mmo_loss, one_hot_semantic, one_hot_superclass,
                     pose_loss, semantic_loss, subset_labels, total_loss, triplet_loss)
from .matching import (EncoderWeights, MatchResult, attention_matrix, confidence_weights,
                       match, parse_confidence_metric, row_confidence)
from .registration import Correspondences, RegistrationResult, register, weighted_residual
from .synth import (SceneSpec, figure_eight_poses, position_descriptor, render_scans,
                    synth_pair, synth_scene)
from .tensorio import load_tensors, save_tensors

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
