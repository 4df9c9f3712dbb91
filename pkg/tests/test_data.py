import os
import struct

import numpy as np
import pytest

from osfsl.data import (
    FeatureSet,
    SyntheticSpec,
    load_feature_table,
    resolve_data_path,
    synth_gaussian_features,
    write_feature_table,
)
from osfsl.errors import FeatureTableError


def small_set():
    return FeatureSet(
        dim=4,
        ids=("a1", "a2", "b1"),
        labels=("a", "a", "b"),
        features=np.array([
            [0.25, -1.5, 3.0, 1e-7],
            [1.0, 2.0, 3.0, 4.0],
            [0.1, 0.2, 0.30000000000000004, -0.4],
        ]),
    )


class TestFeatureSetInvariants:
    def test_duplicate_id_rejected(self):
        with pytest.raises(FeatureTableError, match="duplicate"):
            FeatureSet(2, ("x", "x"), ("a", "b"), np.zeros((2, 2)))

    def test_single_class_rejected(self):
        with pytest.raises(FeatureTableError, match="2 classes"):
            FeatureSet(2, ("x", "y"), ("a", "a"), np.zeros((2, 2)))

    def test_non_finite_rejected(self):
        feats = np.zeros((2, 2))
        feats[1, 0] = np.nan
        with pytest.raises(FeatureTableError, match="non-finite"):
            FeatureSet(2, ("x", "y"), ("a", "b"), feats)

    def test_class_order_is_first_appearance(self):
        fs = FeatureSet(2, ("1", "2", "3"), ("z", "a", "z"),
                        np.arange(6.0).reshape(3, 2))
        assert fs.class_names == ["z", "a"]


class TestRoundTrips:
    @pytest.mark.parametrize("fmt", ["text", "binary"])
    def test_round_trip_identity(self, tmp_path, fmt):
        fs = small_set()
        path = str(tmp_path / f"t.{fmt}")
        write_feature_table(fs, path, fmt)
        back = load_feature_table(path)
        assert back.dim == fs.dim
        assert back.ids == fs.ids
        assert back.labels == fs.labels
        # bit-for-bit: both formats must preserve every float exactly
        assert np.array_equal(back.features, fs.features)

    def test_text_parse_direct(self, tmp_path):
        path = str(tmp_path / "t.ft")
        with open(path, "w") as fh:
            fh.write("FT1 4\n")
            fh.write("s1\tred\t1 2 3 4\n")
            fh.write("s2\tred\t5 6 7 8\n")
            fh.write("s3\tblue\t-1 -2 -3 -4\n")
        fs = load_feature_table(path)
        assert fs.dim == 4 and len(fs) == 3
        assert fs.labels == ("red", "red", "blue")

    def test_dimension_mismatch_names_row(self, tmp_path):
        path = str(tmp_path / "bad.ft")
        with open(path, "w") as fh:
            fh.write("FT1 4\ns1\ta\t1 2 3 4\ns2\tb\t1 2 3 4 5\n")
        with pytest.raises(FeatureTableError, match="line 3"):
            load_feature_table(path)

    def test_unparseable_row_names_row(self, tmp_path):
        path = str(tmp_path / "bad.ft")
        with open(path, "w") as fh:
            fh.write("FT1 2\ns1\ta\t1 oops\ns2\tb\t1 2\n")
        with pytest.raises(FeatureTableError, match="line 2"):
            load_feature_table(path)

    def test_binary_size_arithmetic(self, tmp_path):
        n, d = 10_000, 64
        ids = tuple(f"r{i:05d}" for i in range(n))
        labels = tuple("ab"[i % 2] for i in range(n))
        fs = FeatureSet(d, ids, labels, np.zeros((n, d)))
        path = str(tmp_path / "big.ftb")
        write_feature_table(fs, path, "binary")
        header = 4 + 4 + 8
        per_record = (2 + 6) + (2 + 1) + d * 8
        assert os.path.getsize(path) == header + n * per_record

    def test_truncated_binary_rejected(self, tmp_path):
        fs = small_set()
        path = str(tmp_path / "t.ftb")
        write_feature_table(fs, path, "binary")
        with open(path, "rb") as fh:
            blob = fh.read()
        with open(path, "wb") as fh:
            fh.write(blob[:-5])
        with pytest.raises(FeatureTableError):
            load_feature_table(path)

    def test_bad_format_name(self, tmp_path):
        with pytest.raises(FeatureTableError, match="format"):
            write_feature_table(small_set(), str(tmp_path / "x"), "csv")


class TestDataDir:
    def test_env_root_used_for_relative_paths(self, tmp_path, monkeypatch):
        fs = small_set()
        write_feature_table(fs, str(tmp_path / "pool.ft"), "text")
        monkeypatch.setenv("OSFSL_DATA_DIR", str(tmp_path))
        monkeypatch.chdir(tmp_path / "..")
        assert resolve_data_path("pool.ft") == str(tmp_path / "pool.ft")
        loaded = load_feature_table("pool.ft")
        assert loaded.ids == fs.ids

    def test_absolute_path_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OSFSL_DATA_DIR", "/nonexistent")
        p = str(tmp_path / "x.ft")
        assert resolve_data_path(p) == p


class TestSynthetic:
    def test_determinism_bit_identical(self):
        spec = SyntheticSpec(4, 6, 8, 3.0, 0.5, seed=77)
        a = synth_gaussian_features(spec)
        b = synth_gaussian_features(spec)
        assert a.ids == b.ids and a.labels == b.labels
        assert np.array_equal(a.features, b.features)

    def test_counts(self):
        fs = synth_gaussian_features(SyntheticSpec(10, 50, 16, 3.0, 1.0, seed=1))
        assert len(fs) == 500
        assert len(set(fs.labels)) == 10

    def test_separable_pool_nearest_centroid_oracle(self):
        # ratio >= 6 must give near-perfect nearest-centroid accuracy;
        # centroid pass below is an independent brute-force check
        fs = synth_gaussian_features(SyntheticSpec(10, 40, 16, 6.0, 1.0, seed=5))
        names = fs.class_names
        y = np.array([names.index(l) for l in fs.labels])
        cents = np.stack([fs.features[y == j].mean(axis=0) for j in range(len(names))])
        d2 = ((fs.features[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        acc = float((d2.argmin(axis=1) == y).mean())
        assert acc >= 0.99

    def test_spec_validation(self):
        with pytest.raises(FeatureTableError):
            SyntheticSpec(1, 5, 4, 1.0, 1.0, seed=0)
        with pytest.raises(FeatureTableError):
            SyntheticSpec(3, 0, 4, 1.0, 1.0, seed=0)
        with pytest.raises(FeatureTableError):
            SyntheticSpec(3, 5, 1, 1.0, 1.0, seed=0)
        with pytest.raises(FeatureTableError):
            SyntheticSpec(3, 5, 4, 0.0, 1.0, seed=0)
        with pytest.raises(FeatureTableError):
            SyntheticSpec(3, 5, 4, 1.0, -1.0, seed=0)


def test_non_utf8_garbage_rejected_cleanly(tmp_path):
    path = str(tmp_path / "garbage.ft")
    with open(path, "wb") as fh:
        fh.write(b"\xf3\x28\x00\xff" + bytes(range(256)))
    with pytest.raises(FeatureTableError, match="UTF-8"):
        load_feature_table(path)


def test_corrupt_binary_count_rejected_without_allocation(tmp_path):
    fs = small_set()
    path = str(tmp_path / "t.ftb")
    write_feature_table(fs, path, "binary")
    with open(path, "rb") as fh:
        blob = bytearray(fh.read())
    blob[8:16] = struct.pack("<Q", 1 << 60)  # absurd record count
    with open(path, "wb") as fh:
        fh.write(bytes(blob))
    with pytest.raises(FeatureTableError, match="header claims"):
        load_feature_table(path)
