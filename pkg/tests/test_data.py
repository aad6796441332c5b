import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.optimize import minimize

from coherentfl.data import (
    Dataset, load_mnist, parse_idx, partition, serialize_idx, synthetic_classification,
    train_test_split,
)
from coherentfl.errors import (
    ConfigurationError, IdxDimensionOverflowError, IdxMagicError, IdxTrailingDataError,
    IdxTruncatedError,
)
from coherentfl.models import LogisticModel


def _fit_accuracy(separation, classes=4, p=6, n=4000, seed=3):
    data = synthetic_classification(n, p, classes, separation, seed)
    train, test = train_test_split(data, 0.5, seed)
    model = LogisticModel(p, classes)
    res = minimize(model.loss, np.zeros(model.dim), args=(train.features, train.labels),
                   jac=model.grad, method="L-BFGS-B", options={"maxiter": 500})
    return model.accuracy(res.x, test.features, test.labels)


class TestSynthetic:
    def test_no_separation_is_chance(self):
        assert abs(_fit_accuracy(0.0) - 0.25) < 0.05

    def test_large_separation_is_separable(self):
        assert _fit_accuracy(12.0) > 0.99

    def test_deterministic(self):
        a = synthetic_classification(50, 3, 3, 1.0, 9)
        b = synthetic_classification(50, 3, 3, 1.0, 9)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_balanced_labels(self):
        counts = np.bincount(synthetic_classification(100, 3, 4, 1.0, 0).labels)
        np.testing.assert_array_equal(counts, [25, 25, 25, 25])

    def test_more_classes_than_features(self):
        assert synthetic_classification(30, 2, 5, 1.0, 0).classes == 5

    def test_too_few_samples(self):
        with pytest.raises(ConfigurationError):
            synthetic_classification(2, 3, 3, 1.0, 0)


class TestPartition:
    data = synthetic_classification(100, 3, 4, 2.0, 1)

    def test_single_device_is_input(self):
        (part,) = partition(self.data, 1)
        np.testing.assert_array_equal(part.features, self.data.features)

    def test_iid_sizes(self):
        assert [p.n for p in partition(self.data, 4, "iid")] == [25, 25, 25, 25]

    @pytest.mark.parametrize("mode", ["iid", "label-shard"])
    def test_completeness(self, mode):
        parts = partition(self.data, 5, mode, shards_per_device=2, seed=4)
        rows = np.concatenate([p.features for p in parts])
        assert sum(p.n for p in parts) == self.data.n
        assert len({r.tobytes() for r in rows}) == self.data.n
        assert {r.tobytes() for r in rows} == {r.tobytes() for r in self.data.features}

    def test_single_shard_per_device_is_single_label(self):
        data = synthetic_classification(1000, 3, 5, 1.0, 2)
        for part in partition(data, 5, "label-shard", shards_per_device=1, seed=0):
            assert np.bincount(part.labels).max() / part.n >= 0.9

    def test_too_many_devices(self):
        with pytest.raises(ConfigurationError):
            partition(self.data, 101)

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            partition(self.data, 2, "dirichlet")


class TestDataset:
    def test_label_range(self):
        with pytest.raises(ConfigurationError):
            Dataset(np.zeros((2, 1)), np.array([0, 3]), 3)

    def test_split_sizes(self):
        data = synthetic_classification(100, 2, 2, 1.0, 0)
        train, test = train_test_split(data, 0.2, 0)
        assert (train.n, test.n) == (80, 20)


class TestIdx:
    def test_label_file(self):
        raw = bytes.fromhex("00000801" "00000003" "050009")
        np.testing.assert_array_equal(parse_idx(raw), [5, 0, 9])

    def test_image_file(self):
        raw = bytes.fromhex("00000803" "00000001" "00000002" "00000002" "00010203")
        np.testing.assert_array_equal(parse_idx(raw), [[[0, 1], [2, 3]]])

    def test_truncated_payload(self):
        raw = bytes.fromhex("00000803" "00000001" "00000002" "00000002" "000102")
        with pytest.raises(IdxTruncatedError) as exc:
            parse_idx(raw)
        assert exc.value.offset == 16 + 3

    def test_bad_magic(self):
        with pytest.raises(IdxMagicError) as exc:
            parse_idx(bytes.fromhex("00000901" "00000001" "00"))
        assert exc.value.offset == 0

    def test_truncated_header(self):
        with pytest.raises(IdxTruncatedError):
            parse_idx(bytes.fromhex("00000803" "00000001"))

    def test_dimension_overflow(self):
        raw = bytes.fromhex("00000803") + struct.pack(">3I", 2**16, 2**16, 2**16)
        with pytest.raises(IdxDimensionOverflowError) as exc:
            parse_idx(raw)
        assert exc.value.offset == 8

    def test_trailing_bytes(self):
        with pytest.raises(IdxTrailingDataError) as exc:
            parse_idx(bytes.fromhex("00000801" "00000001" "0102"))
        assert exc.value.offset == 9

    def test_gzip_wrapped(self):
        raw = bytes.fromhex("00000801" "00000002" "0708")
        np.testing.assert_array_equal(parse_idx(gzip.compress(raw, mtime=0)), [7, 8])

    @settings(max_examples=1000)
    @given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=1, max_dims=4, max_side=6)))
    def test_round_trip(self, array):
        raw = serialize_idx(array)
        parsed = parse_idx(raw)
        np.testing.assert_array_equal(parsed, array)
        assert serialize_idx(parsed) == raw

    def test_load_mnist_normalizes(self, tmp_path):
        images = np.array([[[0, 255], [51, 102]], [[1, 2], [3, 4]]], dtype=np.uint8)
        (tmp_path / "img").write_bytes(serialize_idx(images))
        (tmp_path / "lab").write_bytes(serialize_idx(np.array([3, 1], dtype=np.uint8)))
        data = load_mnist(tmp_path / "img", tmp_path / "lab")
        np.testing.assert_allclose(data.features[0], [0.0, 1.0, 0.2, 0.4])
        assert data.classes == 4 and data.p == 4
