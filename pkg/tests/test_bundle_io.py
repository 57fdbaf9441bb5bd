import json
import struct

import numpy as np
import pytest

from uda_select.bundle_io import (
    MAGIC,
    BundleFormatError,
    BundleSet,
    BundleValidationError,
    EvaluationBundle,
    read_bundle,
    read_bundle_set,
    write_bundle,
)

from factories import make_bundle


class TestRoundTrip:
    def test_bit_exact(self, tmp_path, small_bundle):
        p = tmp_path / "b.udab"
        write_bundle(small_bundle, p)
        got = read_bundle(p)
        assert got.model_id == small_bundle.model_id
        assert got.k_classes == small_bundle.k_classes
        assert got.hyperparams == small_bundle.hyperparams
        assert got.true_target_accuracy == small_bundle.true_target_accuracy
        for name in (
            "source_features",
            "source_labels",
            "source_predictions",
            "target_features",
            "target_predictions",
            "target_aug_features",
            "target_aug_predictions",
        ):
            np.testing.assert_array_equal(
                getattr(got, name), getattr(small_bundle, name), err_msg=name
            )

    def test_round_trip_file_bytes_stable(self, tmp_path, small_bundle):
        p1, p2 = tmp_path / "a.udab", tmp_path / "b.udab"
        write_bundle(small_bundle, p1)
        write_bundle(read_bundle(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_optional_arrays_absent(self, tmp_path):
        b = make_bundle(seed=3, with_aug=False)
        p = tmp_path / "b.udab"
        write_bundle(b, p)
        got = read_bundle(p)
        assert got.target_aug_features is None
        assert got.target_aug_predictions is None

    def test_fuzz_round_trips(self, tmp_path):
        for seed in range(30):
            b = make_bundle(seed=seed, with_aug=seed % 2 == 0)
            p = tmp_path / f"{seed}.udab"
            write_bundle(b, p)
            got = read_bundle(p)
            np.testing.assert_array_equal(got.target_predictions, b.target_predictions)


class TestFormatErrors:
    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"NOPE!!" + b"\x00" * 64)
        with pytest.raises(BundleFormatError):
            read_bundle(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "trunc"
        p.write_bytes(MAGIC + struct.pack("<Q", 1000) + b"{}")
        with pytest.raises(BundleFormatError):
            read_bundle(p)

    def test_truncated_data(self, tmp_path, small_bundle):
        p = tmp_path / "b.udab"
        write_bundle(small_bundle, p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-40])
        with pytest.raises(BundleFormatError):
            read_bundle(p)

    def test_header_not_json(self, tmp_path):
        body = b"not json at all"
        p = tmp_path / "b"
        p.write_bytes(MAGIC + struct.pack("<Q", len(body)) + body)
        with pytest.raises(BundleFormatError):
            read_bundle(p)

    def test_missing_required_array(self, tmp_path):
        header = json.dumps({"arrays": [], "k_classes": 3, "model_id": "x"}).encode()
        p = tmp_path / "b"
        p.write_bytes(MAGIC + struct.pack("<Q", len(header)) + header)
        with pytest.raises(BundleFormatError):
            read_bundle(p)


class TestValidation:
    def test_row_sum_violation_rejected(self):
        b = make_bundle(seed=1)
        bad = b.target_predictions.copy()
        bad[0] *= 1.5
        with pytest.raises(BundleValidationError) as exc:
            EvaluationBundle(
                model_id="x",
                k_classes=b.k_classes,
                source_features=b.source_features,
                source_labels=b.source_labels,
                source_predictions=b.source_predictions,
                target_features=b.target_features,
                target_predictions=bad,
            )
        assert exc.value.field_name == "target_predictions"

    def test_small_negative_renormalized(self):
        b = make_bundle(seed=2, k=3)
        p = b.target_predictions.copy()
        p[0] = np.array([1.0 + 5e-8, -5e-8, 0.0], dtype=np.float32)
        bundle = EvaluationBundle(
            model_id="x",
            k_classes=3,
            source_features=b.source_features,
            source_labels=b.source_labels,
            source_predictions=b.source_predictions,
            target_features=b.target_features,
            target_predictions=p,
        )
        clean = bundle.target_predictions64()
        assert clean.min() >= 0.0
        np.testing.assert_allclose(clean.sum(axis=1), 1.0, rtol=1e-12)
        # raw array untouched
        np.testing.assert_array_equal(bundle.target_predictions, p)

    def test_label_out_of_range(self):
        b = make_bundle(seed=4)
        labels = b.source_labels.copy()
        labels[0] = b.k_classes
        with pytest.raises(BundleValidationError):
            EvaluationBundle(
                model_id="x",
                k_classes=b.k_classes,
                source_features=b.source_features,
                source_labels=labels,
                source_predictions=b.source_predictions,
                target_features=b.target_features,
                target_predictions=b.target_predictions,
            )

    def test_feature_dim_mismatch(self):
        b = make_bundle(seed=5, dim=4)
        with pytest.raises(BundleValidationError):
            EvaluationBundle(
                model_id="x",
                k_classes=b.k_classes,
                source_features=b.source_features,
                source_labels=b.source_labels,
                source_predictions=b.source_predictions,
                target_features=b.target_features[:, :3],
                target_predictions=b.target_predictions,
            )

    def test_nan_rejected(self):
        b = make_bundle(seed=6)
        feats = b.target_features.copy()
        feats[0, 0] = np.nan
        with pytest.raises(BundleValidationError):
            EvaluationBundle(
                model_id="x",
                k_classes=b.k_classes,
                source_features=b.source_features,
                source_labels=b.source_labels,
                source_predictions=b.source_predictions,
                target_features=feats,
                target_predictions=b.target_predictions,
            )

    def test_accuracy_out_of_range(self):
        with pytest.raises(BundleValidationError):
            make_bundle(seed=7).true_target_accuracy  # baseline ok
            b = make_bundle(seed=7)
            EvaluationBundle(
                model_id="x",
                k_classes=b.k_classes,
                source_features=b.source_features,
                source_labels=b.source_labels,
                source_predictions=b.source_predictions,
                target_features=b.target_features,
                target_predictions=b.target_predictions,
                true_target_accuracy=1.5,
            )


class TestBundleSet:
    def test_duplicate_ids_rejected(self):
        a = make_bundle(seed=8, k=3, dim=4, model_id="m")
        b = make_bundle(seed=9, k=3, dim=4, model_id="m")
        with pytest.raises(ValueError):
            BundleSet(bundles=[a, b])

    def test_k_mismatch_rejected(self):
        a = make_bundle(seed=10, k=3, dim=4, model_id="a")
        b = make_bundle(seed=11, k=4, dim=4, model_id="b")
        with pytest.raises(ValueError):
            BundleSet(bundles=[a, b])

    def test_read_set(self, tmp_path):
        paths = []
        for i in range(3):
            b = make_bundle(seed=20 + i, k=3, dim=4, model_id=f"m{i}")
            p = tmp_path / f"{i}.udab"
            write_bundle(b, p)
            paths.append(p)
        s = read_bundle_set(paths)
        assert len(s) == 3
        assert s.k_classes == 3
