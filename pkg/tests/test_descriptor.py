import dataclasses
import math

import numpy as np
import pytest

from padloc.descriptor import (Descriptor, VladWeights, context_gate, describe,
                               descriptor_distance, netvlad)

F, K, G = 12, 4, 8
W = VladWeights.random(f=F, k=K, g=G, seed=0)


def random_features(rng, n=20):
    return rng.normal(size=(n, F))


def test_descriptor_requires_unit_norm():
    with pytest.raises(ValueError):
        Descriptor(values=np.ones(4))
    d = Descriptor(values=np.ones(4) / 2.0)
    assert len(d) == 4


def test_single_cluster_closed_form():
    w1 = VladWeights.random(f=F, k=1, g=G, seed=1)
    rng = np.random.default_rng(2)
    feats = random_features(rng, 15)
    v = netvlad(feats, w1)

    residual = feats.sum(axis=0) - 15 * w1.centers[0]   # all-ones assignment
    flat = residual / np.linalg.norm(residual)          # intra + global norm coincide
    expected = w1.reduce_w @ flat + w1.reduce_b
    assert np.abs(v - expected).max() < 1e-9


def test_residual_cancellation_guard():
    # Every feature sits exactly on cluster 2 and the bias pins the
    # assignment there: that cluster's residual sum vanishes.
    biased = dataclasses.replace(
        W,
        assign_w=np.zeros((F, K)),
        assign_b=np.array([0.0, 0.0, 60.0, 0.0]),
    )
    feats = np.tile(biased.centers[2], (9, 1))
    v = netvlad(feats, biased)
    assert np.isfinite(v).all()
    d = context_gate(v, biased)
    assert np.isfinite(d.values).all()


def test_permutation_invariance():
    rng = np.random.default_rng(3)
    feats = random_features(rng, 25)
    base = netvlad(feats, W)
    for _ in range(100):
        perm = rng.permutation(25)
        assert np.abs(netvlad(feats[perm], W) - base).max() < 1e-9


def test_empty_features_rejected():
    with pytest.raises(ValueError, match="no keypoints"):
        netvlad(np.zeros((0, F)), W)


def test_gate_with_zero_weights_is_pure_normalization():
    flat = dataclasses.replace(W, gate_w=np.zeros((G, G)), gate_b=np.zeros(G))
    rng = np.random.default_rng(4)
    v = rng.normal(size=G)
    d = context_gate(v, flat)
    # sigma(0) = 0.5 everywhere: gating rescales uniformly, normalization
    # removes the factor exactly.
    assert np.abs(d.values - v / np.linalg.norm(v)).max() < 1e-12


def test_gate_saturation_at_large_bias():
    saturated = dataclasses.replace(W, gate_w=np.zeros((G, G)), gate_b=np.full(G, 50.0))
    rng = np.random.default_rng(5)
    v = rng.normal(size=G)
    d = context_gate(v, saturated)
    assert np.abs(d.values - v / np.linalg.norm(v)).max() < 1e-6


def test_gate_matches_naive_oracle():
    rng = np.random.default_rng(6)
    v = rng.normal(size=G)
    d = context_gate(v, W)

    gated = np.empty(G)
    for i in range(G):
        acc = W.gate_b[i]
        for j in range(G):
            acc += W.gate_w[i, j] * v[j]
        gated[i] = v[i] / (1.0 + math.exp(-acc))
    expected = gated / np.linalg.norm(gated)
    assert np.abs(d.values - expected).max() < 1e-9


def test_zero_vector_guard_returns_basis():
    d = context_gate(np.zeros(G), W)
    assert d.degenerate
    assert d.values[0] == 1.0
    assert np.linalg.norm(d.values) == 1.0


def test_describe_unit_norm_and_deterministic():
    rng = np.random.default_rng(7)
    feats = random_features(rng, 30)
    d1 = describe(feats, W)
    d2 = describe(feats, W)
    assert abs(np.linalg.norm(d1.values) - 1.0) < 1e-9
    assert np.array_equal(d1.values, d2.values)
    assert descriptor_distance(d1, d2) == 0.0


def test_describe_no_nan_on_adversarial_inputs():
    for feats in (np.zeros((5, F)), np.full((3, F), 1e9), np.full((4, F), -1e-9)):
        d = describe(feats, W)
        assert np.isfinite(d.values).all()
        assert abs(np.linalg.norm(d.values) - 1.0) < 1e-9


def test_vlad_weights_round_trip(tmp_path):
    path = tmp_path / "vlad.pdlc"
    W.save(path)
    back = VladWeights.load(path, f=F, k=K, g=G)
    for name, tensor in W.to_tensors().items():
        assert np.array_equal(tensor, back.to_tensors()[name])
    with pytest.raises(ValueError, match="weight shape mismatch"):
        VladWeights.load(path, f=F, k=K + 1, g=G)


def test_vlad_weights_shape_validation():
    with pytest.raises(ValueError, match="weight shape mismatch"):
        VladWeights(
            centers=np.zeros((K, F)),
            assign_w=np.zeros((F, K + 1)),
            assign_b=np.zeros(K),
            reduce_w=np.zeros((G, K * F)),
            reduce_b=np.zeros(G),
            gate_w=np.zeros((G, G)),
            gate_b=np.zeros(G),
        )
