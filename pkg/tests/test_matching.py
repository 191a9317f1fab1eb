import dataclasses

import numpy as np
import pytest

from padloc.matching import (FULL_TEL, EncoderWeights, MatchResult, attention_matrix,
                             confidence_weights, match, parse_confidence_metric,
                             row_confidence)

F = 16
WEIGHTS = EncoderWeights.random(f=F, h=4, seed=0)


def random_features(rng, n):
    return rng.normal(size=(n, F))


def random_simplex_row(rng, n):
    v = rng.exponential(size=n)
    return v / v.sum()


# ---------------------------------------------------------------------------
# Confidence metrics
# ---------------------------------------------------------------------------

def test_uniform_rows_give_zero_weight():
    p = np.full(4, 0.25)
    for metric in ("shannon", "hill(2)", "hill(4)", "berger-parker"):
        assert row_confidence(p, metric) == 0.0


def test_one_hot_rows_give_unit_weight():
    p = np.array([0.0, 1.0, 0.0, 0.0])
    for metric in ("shannon", "hill(2)", "hill(4)", "berger-parker", "uniform"):
        assert row_confidence(p, metric) == 1.0


def test_hand_case_berger_parker_and_hill2():
    # p = (0.5, 0.5, 0, 0): BP = 0.5 -> (0.5 - 0.25)/0.75 = 1/3;
    # D^2 = 1/(0.25 + 0.25) = 2 -> (4 - 2)/3 = 2/3.
    p = np.array([0.5, 0.5, 0.0, 0.0])
    assert abs(row_confidence(p, "berger-parker") - 1.0 / 3.0) < 1e-12
    assert abs(row_confidence(p, "hill(2)") - 2.0 / 3.0) < 1e-12


def test_single_element_row_is_sharp():
    for metric in ("shannon", "hill(2)", "berger-parker", "uniform"):
        assert row_confidence(np.array([1.0]), metric) == 1.0


def test_uniform_metric_is_all_ones():
    rng = np.random.default_rng(0)
    m = np.stack([random_simplex_row(rng, 6) for _ in range(5)])
    assert np.array_equal(confidence_weights(m, "uniform"), np.ones(5))


def test_column_sum_weighting_hand_case():
    m = np.array([[0.7, 0.3], [0.6, 0.4]])
    w = confidence_weights(m, "column-sum")
    assert np.allclose(w, [0.65, 0.65], atol=1e-12)


def test_all_metrics_bounded_on_random_rows():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = random_simplex_row(rng, rng.integers(2, 12))
        for metric in ("shannon", "hill(2)", "hill(4)", "berger-parker"):
            w = row_confidence(p, metric)
            assert 0.0 <= w <= 1.0


def test_hill_order_monotonicity():
    # Higher r emphasizes dominance: w(Hill(4)) >= w(Hill(2)) on any row.
    rng = np.random.default_rng(13)
    for _ in range(1000):
        p = random_simplex_row(rng, rng.integers(2, 10))
        assert row_confidence(p, "hill(4)") >= row_confidence(p, "hill(2)") - 1e-12


def test_metric_parsing():
    assert parse_confidence_metric("Berger-Parker") == "berger-parker"
    assert parse_confidence_metric("hill(2)") == "hill(2)"
    assert parse_confidence_metric("Hill-4") == "hill(4)"
    assert parse_confidence_metric("Column Sum") == "column-sum"
    with pytest.raises(ValueError):
        parse_confidence_metric("hill(1)")
    with pytest.raises(ValueError):
        parse_confidence_metric("gini")


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------

def test_rows_form_probability_simplices():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        f_s = random_features(rng, int(rng.integers(1, 9)))
        f_t = random_features(rng, int(rng.integers(1, 9)))
        m = attention_matrix(f_s, f_t, WEIGHTS)
        assert (m >= 0).all()
        assert np.abs(m.sum(axis=1) - 1.0).max() < 1e-6


def test_pure_attention_projection_identity():
    rng = np.random.default_rng(5)
    f_s, f_t = random_features(rng, 7), random_features(rng, 9)
    q_t = rng.normal(size=(9, 3)) * 5
    result = match(f_s, f_t, q_t, WEIGHTS)
    assert np.abs(result.projected - result.matching @ q_t).max() < 1e-6


def test_single_target_point():
    rng = np.random.default_rng(6)
    f_s, f_t = random_features(rng, 5), random_features(rng, 1)
    q_t = np.array([[1.0, 2.0, 3.0]])
    result = match(f_s, f_t, q_t, WEIGHTS)
    assert np.array_equal(result.matching, np.ones((5, 1)))
    assert np.allclose(result.projected, np.tile(q_t, (5, 1)))
    assert np.array_equal(result.confidence, np.ones(5))


def test_projection_stays_in_target_bounding_box():
    rng = np.random.default_rng(8)
    f_s, f_t = random_features(rng, 10), random_features(rng, 6)
    q_t = rng.normal(size=(6, 3)) * 10
    result = match(f_s, f_t, q_t, WEIGHTS)
    eps = 1e-9
    assert (result.projected >= q_t.min(axis=0) - eps).all()
    assert (result.projected <= q_t.max(axis=0) + eps).all()


def test_orthogonal_sharp_row_dominates_own_column():
    # Shared query/key projections make attention reflect feature similarity:
    # a high-scale row orthogonal to the rest matches itself.
    shared = dataclasses.replace(WEIGHTS, wk=WEIGHTS.wq)
    rng = np.random.default_rng(9)
    features = np.zeros((6, F))
    features[1:, 1:] = rng.normal(size=(5, F - 1))
    features[0, 0] = 40.0  # orthogonal to every other row, sharp scale
    m = attention_matrix(features, features, shared)
    assert m[0].argmax() == 0
    assert m[0, 0] > 0.9


def test_permutation_equivariance():
    rng = np.random.default_rng(10)
    f_s, f_t = random_features(rng, 8), random_features(rng, 11)
    q_t = rng.normal(size=(11, 3))
    perm = rng.permutation(11)
    base = match(f_s, f_t, q_t, WEIGHTS)
    permuted = match(f_s, f_t[perm], q_t[perm], WEIGHTS)
    assert np.abs(permuted.matching - base.matching[:, perm]).max() < 1e-12
    assert np.abs(permuted.confidence - base.confidence).max() < 1e-12
    assert np.abs(permuted.projected - base.projected).max() < 1e-9


def test_empty_target_raises():
    rng = np.random.default_rng(11)
    with pytest.raises(ValueError, match="empty target"):
        match(random_features(rng, 3), np.zeros((0, F)), np.zeros((0, 3)), WEIGHTS)


def test_non_finite_features_raise():
    rng = np.random.default_rng(12)
    bad = random_features(rng, 3)
    bad[1, 2] = np.nan
    with pytest.raises(ValueError, match="non-finite features"):
        match(bad, random_features(rng, 4), np.zeros((4, 3)), WEIGHTS)


def test_match_result_validation():
    with pytest.raises(ValueError):
        MatchResult(matching=np.array([[0.5, 0.4]]), projected=np.zeros((1, 3)),
                    confidence=np.array([0.5]))
    with pytest.raises(ValueError):
        MatchResult(matching=np.array([[1.0]]), projected=np.zeros((1, 3)),
                    confidence=np.array([1.5]))


# ---------------------------------------------------------------------------
# Full encoder layer
# ---------------------------------------------------------------------------

def reference_tel(f_s, f_t, q_t, w):
    """Independent single-layer encoder oracle."""
    h, _, d_k = w.wq.shape
    heads = []
    for i in range(h):
        scores = (f_s @ w.wq[i]) @ (f_t @ w.wk[i]).T / np.sqrt(d_k)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        heads.append(e / e.sum(axis=1, keepdims=True))

    values = q_t @ w.value_w + w.value_b
    split = np.split(values, h, axis=1)
    attended = np.concatenate([heads[i] @ split[i] for i in range(h)], axis=1)
    attended = attended @ w.out_w + w.out_b

    def ln(x, scale, offset):
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        return (x - mu) / np.sqrt(var + 1e-5) * scale + offset

    x1 = ln(f_s + attended, w.ln1_scale, w.ln1_offset)
    x2 = ln(x1 + np.maximum(x1 @ w.ffn_w1 + w.ffn_b1, 0) @ w.ffn_w2 + w.ffn_b2,
            w.ln2_scale, w.ln2_offset)
    return x2 @ w.proj_w.T + w.proj_b


def test_full_tel_matches_reference():
    weights = EncoderWeights.random(f=F, h=4, seed=2, mode=FULL_TEL)
    rng = np.random.default_rng(14)
    f_s, f_t = random_features(rng, 6), random_features(rng, 8)
    q_t = rng.normal(size=(8, 3)) * 3
    result = match(f_s, f_t, q_t, weights)
    assert np.abs(result.projected - reference_tel(f_s, f_t, q_t, weights)).max() < 1e-9
    # The matching matrix itself is mode-independent.
    pure = match(f_s, f_t, q_t, dataclasses.replace(weights, mode="pure-attention"))
    assert np.array_equal(result.matching, pure.matching)


def test_weights_save_load_round_trip(tmp_path):
    path = tmp_path / "enc.pdlc"
    WEIGHTS.save(path)
    back = EncoderWeights.load(path, f=F, h=4)
    for name, tensor in WEIGHTS.to_tensors().items():
        assert np.array_equal(tensor, back.to_tensors()[name])


def test_weights_shape_validation(tmp_path):
    with pytest.raises(ValueError, match="must divide"):
        EncoderWeights.random(f=10, h=4)
    path = tmp_path / "enc.pdlc"
    WEIGHTS.save(path)
    with pytest.raises(ValueError, match="weight shape mismatch"):
        EncoderWeights.load(path, f=F, h=2)
