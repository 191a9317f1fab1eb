import numpy as np
import pytest

from padloc.features import (EIGEN_BLOCK, EIGENVALUES, HEIGHT, MEAN_OFFSET,
                             NEIGHBOR_COUNT, SHAPE_RATIOS, FeatureProviderConfig,
                             base_descriptors, geometric_features,
                             load_linear_provider, orthogonal_lift, save_linear_weights)
from padloc.geom import (KeypointSet, PointCloud, apply_transform,
                         farthest_point_sampling, random_transform)

CFG = FeatureProviderConfig(f=16, radius=2.0, seed=0)


def grid_cloud():
    xs, ys = np.meshgrid(np.linspace(-3, 3, 13), np.linspace(-3, 3, 13))
    xyz = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    return PointCloud(xyz=xyz)


def test_output_shape_matches_keys_and_f():
    rng = np.random.default_rng(0)
    cloud = PointCloud(xyz=rng.normal(size=(120, 3)) * 3)
    keys = farthest_point_sampling(cloud, 20, seed=1)
    feats = geometric_features(cloud, keys, CFG)
    assert feats.values.shape == (20, 16)
    assert feats.quality.shape == (20,)


def test_isolated_point_flagged_zero_neighborhood():
    xyz = np.vstack([np.zeros((5, 3)) + np.arange(5)[:, None] * 0.1,
                     [[100.0, 100.0, 100.0]]])
    cloud = PointCloud(xyz=xyz)
    keys = farthest_point_sampling(cloud, 6, seed=0)
    base, quality = base_descriptors(cloud, keys, CFG)
    row = int(np.where(keys.indices == 5)[0][0])
    assert not quality[row]
    assert base[row, NEIGHBOR_COUNT] == 0
    assert np.all(base[row, EIGEN_BLOCK] == 0)
    assert base[row, MEAN_OFFSET] == 0


def test_planar_neighborhood_eigenvalues():
    # Interior grid points: the 2 m ball stays inside the grid, so the two
    # in-plane covariance eigenvalues agree and planarity dominates.
    cloud = grid_cloud()
    interior = np.array([84, 83, 85, 71, 97])  # center and its neighbors
    keys = KeypointSet(indices=interior, coords=cloud.xyz[interior])
    base, quality = base_descriptors(cloud, keys, CFG)
    assert quality.all()
    ratios = base[:, SHAPE_RATIOS]
    sphericity = ratios[:, 2]
    planarity = ratios[:, 1]
    assert np.all(sphericity < 1e-12)
    assert np.all(planarity >= ratios.max(axis=1) - 1e-12)
    # Third eigenvalue vanishes on a perfect plane.
    assert np.all(base[:, EIGENVALUES][:, 2] < 1e-15)


def test_height_and_reflectance_slots():
    xyz = np.array([[0, 0, 1.0], [0.5, 0, 2.0], [0, 0.5, 3.0]])
    cloud = PointCloud(xyz=xyz, reflectance=np.array([0.2, 0.4, 0.6]))
    keys = farthest_point_sampling(cloud, 3, seed=0)
    base, _ = base_descriptors(cloud, keys, CFG)
    by_index = {int(i): row for i, row in zip(keys.indices, base)}
    assert by_index[2][HEIGHT] == pytest.approx(2.0)
    assert by_index[1][REFLECTANCE_SLOT] == pytest.approx(0.4)


REFLECTANCE_SLOT = 1


def test_deterministic_given_seed():
    rng = np.random.default_rng(4)
    cloud = PointCloud(xyz=rng.normal(size=(60, 3)) * 4)
    keys = farthest_point_sampling(cloud, 10, seed=2)
    a = geometric_features(cloud, keys, CFG)
    b = geometric_features(cloud, keys, CFG)
    assert np.array_equal(a.values, b.values)


def test_rows_unit_norm_when_normalized():
    rng = np.random.default_rng(4)
    cloud = PointCloud(xyz=rng.normal(size=(60, 3)) * 4)
    keys = farthest_point_sampling(cloud, 10, seed=2)
    feats = geometric_features(cloud, keys, CFG)
    norms = np.linalg.norm(feats.values[feats.quality], axis=1)
    assert np.abs(norms - 1.0).max() < 1e-6


def test_eigen_block_rigid_invariance():
    rng = np.random.default_rng(9)
    cloud = PointCloud(xyz=rng.normal(size=(200, 3)) * 5)
    keys = farthest_point_sampling(cloud, 25, seed=3)
    base, _ = base_descriptors(cloud, keys, CFG)
    for k in range(5):
        t = random_transform(np.random.default_rng(30 + k))
        moved = PointCloud(xyz=apply_transform(t, cloud.xyz))
        moved_keys = farthest_point_sampling(moved, 25, seed=3)
        # Same start index and preserved distances: FPS picks the same points.
        assert np.array_equal(moved_keys.indices, keys.indices)
        moved_base, _ = base_descriptors(moved, moved_keys, CFG)
        block = slice(NEIGHBOR_COUNT, MEAN_OFFSET + 1)
        assert np.abs(moved_base[:, block] - base[:, block]).max() < 1e-6


def test_orthogonal_lift_preserves_norms():
    q = orthogonal_lift(CFG)
    assert q.shape == (16, CFG.base_dim)
    assert np.allclose(q.T @ q, np.eye(CFG.base_dim), atol=1e-12)


def test_include_xyz_extends_base():
    cfg = FeatureProviderConfig(f=16, radius=2.0, include_xyz=True)
    cloud = grid_cloud()
    keys = farthest_point_sampling(cloud, 4, seed=0)
    base, _ = base_descriptors(cloud, keys, cfg)
    assert base.shape[1] == 13
    assert np.allclose(base[:, 10:], keys.coords)


# ---------------------------------------------------------------------------
# Linear provider
# ---------------------------------------------------------------------------

def test_identity_weights_match_geometric(tmp_path):
    path = tmp_path / "w.pdlc"
    save_linear_weights(path, np.eye(16), np.zeros(16))
    provider = load_linear_provider(path, CFG)
    cloud = grid_cloud()
    keys = farthest_point_sampling(cloud, 6, seed=1)
    assert np.array_equal(provider.compute(cloud, keys).values,
                          geometric_features(cloud, keys, CFG).values)


def test_zero_weights_flag_all_rows(tmp_path):
    path = tmp_path / "w.pdlc"
    save_linear_weights(path, np.zeros((16, 16)), np.zeros(16))
    provider = load_linear_provider(path, CFG)
    cloud = grid_cloud()
    keys = farthest_point_sampling(cloud, 6, seed=1)
    feats = provider.compute(cloud, keys)
    assert np.all(feats.values == 0)
    assert not feats.quality.any()


def test_random_weights_match_naive_matmul(tmp_path):
    rng = np.random.default_rng(21)
    weight = rng.normal(size=(16, 16))
    bias = rng.normal(size=16)
    path = tmp_path / "w.pdlc"
    save_linear_weights(path, weight, bias)

    cfg = FeatureProviderConfig(f=16, radius=2.0, seed=0, normalize=False)
    provider = load_linear_provider(path, cfg)
    cloud = grid_cloud()
    keys = farthest_point_sampling(cloud, 5, seed=1)
    out = provider.compute(cloud, keys).values

    base, _ = base_descriptors(cloud, keys, cfg)
    lifted = base @ orthogonal_lift(cfg).T
    expected = np.empty_like(out)
    for i in range(lifted.shape[0]):       # naive elementwise oracle
        for k in range(weight.shape[0]):
            acc = bias[k]
            for j in range(lifted.shape[1]):
                acc += lifted[i, j] * weight[k, j]
            expected[i, k] = acc
    assert np.abs(out - expected).max() < 1e-6


def test_weight_shape_mismatch(tmp_path):
    path = tmp_path / "w.pdlc"
    save_linear_weights(path, np.zeros((8, 16)), np.zeros(8))
    with pytest.raises(ValueError, match="weight shape mismatch"):
        load_linear_provider(path, CFG)


def test_config_validation():
    with pytest.raises(ValueError):
        FeatureProviderConfig(f=4)
    with pytest.raises(ValueError):
        FeatureProviderConfig(radius=0.0)
    with pytest.raises(ValueError):
        FeatureProviderConfig(kind="magic")
