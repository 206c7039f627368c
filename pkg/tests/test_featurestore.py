import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthsel import featurestore as fs
from synthsel.errors import FormatError, IoError, NumericError, ValidationError


def _random_set(seed=0, n=5, d=3, k=2):
    gen = np.random.default_rng(seed)
    # float32-representable values round-trip the binary format bit-exactly
    feats = gen.normal(size=(n, d)).astype(np.float32).astype(np.float64)
    labels = gen.integers(0, k, size=n)
    return fs.FeatureSet(feats, labels, k, "train")


# ---------------------------------------------------------------------------
# file round trips
# ---------------------------------------------------------------------------


def test_binary_round_trip_bit_identical(tmp_path):
    original = _random_set()
    path = tmp_path / "set.fsel"
    fs.save_features(original, path)
    loaded = fs.load_features(path)
    assert np.array_equal(loaded.features, original.features)
    assert np.array_equal(loaded.labels, original.labels)
    assert loaded.class_count == original.class_count


def test_csv_round_trip(tmp_path):
    original = _random_set(seed=1)
    path = tmp_path / "set.csv"
    fs.save_features(original, path)
    loaded = fs.load_features(path)
    assert np.array_equal(loaded.features, original.features)
    assert np.array_equal(loaded.labels, original.labels)


def test_binary_empty_payload_rejected(tmp_path):
    path = tmp_path / "empty.fsel"
    path.write_bytes(b"FSEL" + struct.pack("<IIII", 1, 0, 3, 2))
    with pytest.raises(ValidationError, match="n=0"):
        fs.load_features(path)


def test_binary_truncated_payload(tmp_path):
    original = _random_set()
    path = tmp_path / "set.fsel"
    fs.save_features(original, path)
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(IoError, match="truncated"):
        fs.load_features(path)


def test_binary_bad_version(tmp_path):
    path = tmp_path / "bad.fsel"
    path.write_bytes(b"FSEL" + struct.pack("<IIII", 9, 1, 1, 1) + struct.pack("<I", 0) + struct.pack("<f", 0.5))
    with pytest.raises(FormatError, match="version"):
        fs.load_features(path)


def test_binary_label_out_of_range(tmp_path):
    path = tmp_path / "bad_label.fsel"
    payload = b"FSEL" + struct.pack("<IIII", 1, 1, 1, 2) + struct.pack("<I", 5) + struct.pack("<f", 0.5)
    path.write_bytes(payload)
    with pytest.raises(ValidationError, match="label"):
        fs.load_features(path)


def test_csv_row_width_error_names_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,f0,f1,f2\n0,1.0,2.0,3.0\n1,1.0,2.0\n", encoding="utf-8")
    with pytest.raises(FormatError, match="row 3"):
        fs.load_features(path)


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        fs.load_features(tmp_path / "nope.fsel")


# ---------------------------------------------------------------------------
# feature sets and centroids
# ---------------------------------------------------------------------------


def test_feature_set_validates_labels():
    with pytest.raises(ValidationError):
        fs.FeatureSet(np.ones((2, 2)), [0, 5], 2, "train")


def test_feature_set_rejects_nonfinite():
    with pytest.raises(NumericError):
        fs.FeatureSet(np.array([[np.nan, 1.0]]), [0], 1, "train")


def test_centroid_single_sample_per_class():
    data = fs.FeatureSet(np.array([[1.0, 2.0], [3.0, 4.0]]), [0, 1], 2, "train")
    cen = fs.compute_centroids(data)
    assert np.array_equal(cen.means, data.features)
    assert cen.counts.tolist() == [1, 1]


def test_centroid_midpoint():
    data = fs.FeatureSet(np.array([[0.0, 0.0], [2.0, 2.0]]), [0, 0], 1, "train")
    cen = fs.compute_centroids(data)
    assert np.array_equal(cen.means, [[1.0, 1.0]])


def test_centroid_matches_brute_force():
    gen = np.random.default_rng(3)
    feats = gen.normal(size=(20, 4))
    labels = gen.integers(0, 3, size=20)
    labels[:3] = [0, 1, 2]  # ensure all classes present
    data = fs.FeatureSet(feats, labels, 3, "train")
    cen = fs.compute_centroids(data)
    for c in range(3):
        brute = feats[labels == c].sum(axis=0) / (labels == c).sum()
        assert np.abs(cen.means[c] - brute).max() < 1e-12


def test_centroid_empty_class_lists_id():
    data = fs.FeatureSet(np.ones((2, 2)), [0, 0], 2, "train")
    with pytest.raises(ValidationError, match=r"\[1\]"):
        fs.compute_centroids(data)


# ---------------------------------------------------------------------------
# cosine distance
# ---------------------------------------------------------------------------


def test_cosine_identical():
    assert fs.cosine_distance([1, 2, 3], [1, 2, 3]) == pytest.approx(0.0, abs=1e-15)


def test_cosine_orthogonal():
    assert fs.cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)


def test_cosine_antipodal():
    assert fs.cosine_distance([1, 0], [-1, 0]) == pytest.approx(2.0)


def test_cosine_zero_norm_rejected():
    with pytest.raises(NumericError):
        fs.cosine_distance([0, 0], [1, 0])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(0.1, 10),
)
def test_cosine_symmetry_and_scale_invariance(u, v, alpha):
    u, v = np.array(u), np.array(v)
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    d1 = fs.cosine_distance(u, v)
    assert abs(d1 - fs.cosine_distance(v, u)) < 1e-12
    assert abs(d1 - fs.cosine_distance(alpha * u, v)) < 1e-12


# ---------------------------------------------------------------------------
# batch plans
# ---------------------------------------------------------------------------


def _angle_pool(angles_by_class):
    feats = {
        c: np.array([[np.cos(a), np.sin(a)] for a in angles])
        for c, angles in angles_by_class.items()
    }
    return fs.CandidatePool(feats)


def _unit_centroids(k):
    means = np.zeros((k, 2))
    means[:, 0] = 1.0
    return fs.ClassCentroids(means, np.ones(k, dtype=int))


def test_build_batches_single_batch_sorted():
    pool = _angle_pool({0: [0.9, 0.1, 0.5]})
    plan = fs.build_batches(pool, _unit_centroids(1), 1)
    assert plan.batch_count == 1
    assert [item.candidate_index for item in plan.batches[0]] == [1, 2, 0]
    dists = [item.distance for item in plan.batches[0]]
    assert dists == sorted(dists)


def test_build_batches_hand_chunks():
    # distances increase with angle; B=2 puts the two nearest first
    pool = _angle_pool({0: [1.2, 0.3, 0.9, 0.6]})
    plan = fs.build_batches(pool, _unit_centroids(1), 2)
    first = {item.candidate_index for item in plan.batches[0]}
    second = {item.candidate_index for item in plan.batches[1]}
    assert first == {1, 3}
    assert second == {2, 0}


def test_build_batches_tie_by_candidate_index():
    pool = _angle_pool({0: [0.4, 0.4, 0.4, 0.4]})
    plan = fs.build_batches(pool, _unit_centroids(1), 2)
    assert [item.candidate_index for item in plan.batches[0]] == [0, 1]
    assert [item.candidate_index for item in plan.batches[1]] == [2, 3]


def test_build_batches_interleaves_classes_in_order():
    pool = _angle_pool({0: [0.2, 0.4], 1: [0.3, 0.1]})
    plan = fs.build_batches(pool, _unit_centroids(2), 1)
    assert [item.class_id for item in plan.batches[0]] == [0, 0, 1, 1]


def test_build_batches_remainder_in_last_batch():
    pool = _angle_pool({0: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]})
    plan = fs.build_batches(pool, _unit_centroids(1), 3)
    assert [len(b) for b in plan.batches] == [2, 2, 3]


def test_build_batches_pool_smaller_than_batches():
    pool = _angle_pool({0: [0.1, 0.2]})
    with pytest.raises(ValidationError):
        fs.build_batches(pool, _unit_centroids(1), 3)


def test_build_batches_farthest_first():
    pool = _angle_pool({0: [0.9, 0.1, 0.5]})
    plan = fs.build_batches(pool, _unit_centroids(1), 1, farthest_first=True)
    assert [item.candidate_index for item in plan.batches[0]] == [0, 2, 1]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.lists(st.integers(4, 11), min_size=1, max_size=3),
       st.integers(0, 1000))
def test_batch_plan_is_partition(batch_count, sizes, seed):
    gen = np.random.default_rng(seed)
    pool = fs.CandidatePool({c: gen.normal(size=(m, 3)) + 2.0 for c, m in enumerate(sizes)})
    means = gen.normal(size=(len(sizes), 3)) + 2.0
    cen = fs.ClassCentroids(means, np.ones(len(sizes), dtype=int))
    plan = fs.build_batches(pool, cen, batch_count)
    seen = set()
    for batch in plan.batches:
        for item in batch:
            key = (item.class_id, item.candidate_index)
            assert key not in seen
            seen.add(key)
    assert len(seen) == pool.size()


def test_batch_plan_permutation_invariant_contents():
    gen = np.random.default_rng(9)
    feats = gen.normal(size=(10, 3)) + 2.0
    cen = fs.ClassCentroids((gen.normal(size=(1, 3)) + 2.0), [1])
    plan_a = fs.build_batches(fs.CandidatePool({0: feats}), cen, 2)
    perm = gen.permutation(10)
    plan_b = fs.build_batches(fs.CandidatePool({0: feats[perm]}), cen, 2)
    for batch_a, batch_b in zip(plan_a.batches, plan_b.batches):
        da = sorted(round(item.distance, 12) for item in batch_a)
        db = sorted(round(item.distance, 12) for item in batch_b)
        assert da == db


def test_pool_flags_require_benchmark_provenance():
    with pytest.raises(ValidationError):
        fs.CandidatePool({0: np.ones((2, 2))}, {0: np.array([True, False])}, "ingested")
    with pytest.raises(ValidationError):
        fs.CandidatePool({0: np.ones((2, 2))}, None, "synthetic-benchmark")
