import numpy as np
import pytest

from padloc.config import RunConfig
from padloc.geom import compose, inverse
from padloc.kitti import write_labels, write_poses, write_scan
from padloc.pipeline import (build_components, detect_loops, match_pair, pair_losses,
                             path_markers_csv, register_pair, scan_descriptor)
from padloc.synth import SceneSpec, figure_eight_poses, render_scans, synth_pair, synth_scene

SMALL_CFG = RunConfig(n_keypoints=48, f=16, g=8, k=4, heads=4, feature_radius=3.0)


@pytest.fixture(scope="module")
def comps():
    return build_components(SMALL_CFG)


@pytest.fixture(scope="module")
def noise_free_pair():
    return synth_pair(SceneSpec(n_objects=4, points_per_object=32, noise_sigma=0.0, seed=5))


def test_oracle_matching_recovers_transform(comps, noise_free_pair):
    cloud_a, cloud_b, transform = noise_free_pair
    reg, residual, _ = register_pair(cloud_a, cloud_b, SMALL_CFG, comps, oracle_matching=True)
    assert not reg.degenerate
    assert np.abs(reg.transform.rotation - transform.rotation).max() < 1e-9
    assert np.abs(reg.transform.translation - transform.translation).max() < 1e-9
    assert residual < 1e-9


def test_oracle_matching_self_registration_is_identity(comps, noise_free_pair):
    cloud_a, _, _ = noise_free_pair
    reg, residual, _ = register_pair(cloud_a, cloud_a, SMALL_CFG, comps, oracle_matching=True)
    assert np.abs(reg.transform.rotation - np.eye(3)).max() < 1e-6
    assert np.abs(reg.transform.translation).max() < 1e-6
    assert residual < 1e-9


def test_oracle_matching_swapped_inputs_give_inverse(comps, noise_free_pair):
    cloud_a, cloud_b, _ = noise_free_pair
    fwd, _, _ = register_pair(cloud_a, cloud_b, SMALL_CFG, comps, oracle_matching=True)
    rev, _, _ = register_pair(cloud_b, cloud_a, SMALL_CFG, comps, oracle_matching=True)
    round_trip = compose(fwd.transform, rev.transform)
    assert np.abs(round_trip.rotation - np.eye(3)).max() < 1e-6
    assert np.abs(round_trip.translation).max() < 1e-6


def test_oracle_matching_requires_shared_point_order(comps):
    cloud_a, _, _ = synth_pair(SceneSpec(n_objects=2, points_per_object=16, seed=0))
    cloud_b, _, _ = synth_pair(SceneSpec(n_objects=2, points_per_object=17, seed=0))
    with pytest.raises(ValueError, match="shared point order"):
        match_pair(cloud_a, cloud_b, SMALL_CFG, comps, oracle_matching=True)


def test_learned_path_runs_end_to_end(comps, noise_free_pair):
    # Untrained weights make no accuracy promise; the contract is that the
    # full path produces valid, finite outputs.
    cloud_a, cloud_b, _ = noise_free_pair
    reg, residual, pair = register_pair(cloud_a, cloud_b, SMALL_CFG, comps)
    assert np.isfinite(pair.forward.matching).all()
    assert np.abs(pair.forward.matching.sum(axis=1) - 1.0).max() < 1e-6
    assert ((pair.forward.confidence >= 0) & (pair.forward.confidence <= 1)).all()
    assert np.isfinite(residual)
    assert abs(np.linalg.det(reg.transform.rotation) - 1.0) < 1e-9


def test_pair_losses_vanish_with_oracle(comps, noise_free_pair):
    cloud_a, cloud_b, transform = noise_free_pair
    out = pair_losses(cloud_a, cloud_b, transform, SMALL_CFG, comps, oracle_matching=True)
    assert out.pose < 1e-9
    assert out.matching < 1e-9
    assert out.semantic < 1e-9
    assert out.meta_semantic < 1e-9
    assert out.mmo < 1e-9
    assert out.total < 1e-8


def test_pair_losses_direction_swap_symmetry(comps):
    for seed in range(3):
        cloud_a, cloud_b, transform = synth_pair(
            SceneSpec(n_objects=3, points_per_object=24, noise_sigma=0.02, seed=seed))
        ab = pair_losses(cloud_a, cloud_b, transform, SMALL_CFG, comps)
        ba = pair_losses(cloud_b, cloud_a, inverse(transform), SMALL_CFG, comps)
        assert abs(ab.total - ba.total) < 1e-9


def test_pair_losses_require_labels(comps):
    from padloc.geom import PointCloud, RigidTransform
    bare = PointCloud(xyz=np.random.default_rng(0).normal(size=(30, 3)))
    with pytest.raises(ValueError, match="labels"):
        pair_losses(bare, bare, RigidTransform.identity(), SMALL_CFG, comps)


def test_pair_losses_transpose_fallback_runs(comps, noise_free_pair):
    cloud_a, cloud_b, transform = noise_free_pair
    out = pair_losses(cloud_a, cloud_b, transform, SMALL_CFG, comps,
                      mmo_transpose_fallback=True)
    assert np.isfinite(out.total)


def test_scan_descriptor_is_deterministic(comps, noise_free_pair):
    cloud_a, _, _ = noise_free_pair
    d1 = scan_descriptor(cloud_a, SMALL_CFG, comps)
    d2 = scan_descriptor(cloud_a, SMALL_CFG, comps)
    assert np.array_equal(d1.values, d2.values)
    assert abs(np.linalg.norm(d1.values) - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# Sequence-level detection
# ---------------------------------------------------------------------------

def write_sequence(tmp_path, samples_per_lap=16, laps=2, scale=120.0):
    world, _ = synth_scene(SceneSpec(n_objects=4, points_per_object=24, seed=3))
    poses = figure_eight_poses(samples_per_lap, laps, scale)
    scans = render_scans(world, poses)
    (tmp_path / "velodyne").mkdir(parents=True)
    (tmp_path / "labels").mkdir()
    for i, scan in enumerate(scans):
        write_scan(tmp_path / "velodyne" / f"{i:06d}.bin", scan)
        write_labels(tmp_path / "labels" / f"{i:06d}.label", scan.labels)
    write_poses(tmp_path / "poses.txt", poses)
    return poses


def test_detect_loops_oracle_is_perfect(tmp_path):
    poses = write_sequence(tmp_path)
    cfg = RunConfig(n_keypoints=48, f=16, g=8, k=4, window=10, positive_radius=4.0)
    report, candidates = detect_loops(tmp_path, cfg, oracle_descriptors=True,
                                      oracle_matching=True)
    assert report.ap == 1.0
    assert report.max_f1 == 1.0
    assert report.mean_r_err is not None and report.mean_r_err < 1e-6
    assert report.mean_t_err is not None and report.mean_t_err < 1e-6
    assert all(c.match_index <= c.query_index - cfg.window - 1 for c in candidates)

    csv = path_markers_csv(report, poses)
    lines = csv.strip().splitlines()
    assert lines[0] == "x,y,loop_flag"
    assert len(lines) == len(poses) + 1
    assert any(line.endswith(",1") for line in lines[1:])


def test_detect_loops_noise_degrades_ap(tmp_path):
    write_sequence(tmp_path)
    cfg = RunConfig(n_keypoints=48, f=16, g=8, k=4, window=10, positive_radius=4.0)
    aps = []
    for sigma in (0.1, 0.5, 1.5):
        report, _ = detect_loops(tmp_path, cfg, oracle_descriptors=True,
                                 descriptor_noise=sigma, register_candidates=False)
        aps.append(report.ap)
    assert aps[0] >= aps[1] >= aps[2]
    assert aps[0] > aps[2]


def test_detect_loops_short_sequence_warns(tmp_path, caplog):
    write_sequence(tmp_path, samples_per_lap=4, laps=1)
    cfg = RunConfig(n_keypoints=48, f=16, g=8, k=4, window=10)
    with caplog.at_level("WARNING"):
        report, candidates = detect_loops(tmp_path, cfg, oracle_descriptors=True)
    assert candidates == []
    assert "shorter than window+2" in caplog.text


def test_detect_loops_requires_poses(tmp_path):
    write_sequence(tmp_path)
    (tmp_path / "poses.txt").unlink()
    cfg = RunConfig(n_keypoints=48, f=16, g=8, k=4, window=10)
    with pytest.raises(FileNotFoundError, match="poses"):
        detect_loops(tmp_path, cfg, oracle_descriptors=True)


def test_detect_loops_learned_descriptors_run(tmp_path):
    # Real descriptor path on a tiny sequence: no accuracy claim, but the
    # report must be structurally sound.
    write_sequence(tmp_path, samples_per_lap=8, laps=2)
    cfg = RunConfig(n_keypoints=32, f=16, g=8, k=4, window=4, positive_radius=4.0)
    report, candidates = detect_loops(tmp_path, cfg, register_candidates=False)
    assert len(candidates) > 0
    assert 0.0 <= report.ap <= 1.0
