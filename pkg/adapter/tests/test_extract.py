import json
import subprocess
import sys

import numpy as np
import pytest
import torch

from udab_extract import ExtractionError, ExtractionSpec, extract
from udab_extract.cli import main as cli_main
from udab_extract.extract import infer_k, load_model, load_split

from toy_assets import ToyModel, TupleNet, write_images


def make_spec(model_path, splits, tmp_path, **kw):
    src, tgt = splits
    defaults = dict(
        model_path=str(model_path),
        source_dir=str(src),
        target_dir=str(tgt),
        out_path=str(tmp_path / "out.udab"),
        image_size=16,
        seed=11,
    )
    defaults.update(kw)
    return ExtractionSpec(**defaults)


class TestExtraction:
    def test_bundle_validates_in_consumer(self, model_path, splits, tmp_path):
        from uda_select import read_bundle

        spec = make_spec(model_path, splits, tmp_path)
        out = extract(spec)
        bundle = read_bundle(out)
        assert bundle.k_classes == 2
        assert bundle.source_features.shape == (12, 8)
        assert bundle.source_labels.shape == (12,)
        assert set(np.unique(bundle.source_labels)) == {0, 1}
        assert bundle.target_predictions.shape == (10, 2)
        assert bundle.target_aug_predictions is not None
        assert bundle.target_aug_features is not None
        assert bundle.true_target_accuracy is None
        assert bundle.hyperparams["adapter"] == "udab-extract"

    def test_all_metrics_finite(self, model_path, splits, tmp_path):
        from uda_select import read_bundle
        from uda_select.metrics import REGISTRY, compute_all

        spec = make_spec(model_path, splits, tmp_path)
        bundle = read_bundle(extract(spec))
        scores, errors = compute_all(bundle, seed=3, n_folds=2, probe_steps=60)
        assert errors == {}
        assert len(scores) == len(REGISTRY)
        assert all(np.isfinite(s.value) for s in scores)

    def test_consumer_cli_computes_scores(self, model_path, splits, tmp_path):
        spec = make_spec(model_path, splits, tmp_path)
        out = extract(spec)
        report = tmp_path / "scores.json"
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "uda_select.cli",
                "compute",
                out,
                "--out",
                str(report),
                "--seed",
                "3",
                "--folds",
                "2",
                "--probe-steps",
                "60",
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        doc = json.loads(report.read_text())
        (per_model,) = doc.values()
        assert len(per_model) == 12
        for entry in per_model.values():
            assert np.isfinite(entry["value"])

    def test_seed_reproducibility(self, model_path, splits, tmp_path):
        a = extract(make_spec(model_path, splits, tmp_path, out_path=str(tmp_path / "a.udab")))
        b = extract(make_spec(model_path, splits, tmp_path, out_path=str(tmp_path / "b.udab")))
        assert (tmp_path / "a.udab").read_bytes() == (tmp_path / "b.udab").read_bytes()

    def test_seed_changes_augmentation(self, model_path, splits, tmp_path):
        from uda_select import read_bundle

        a = read_bundle(extract(make_spec(model_path, splits, tmp_path, seed=11)))
        b = read_bundle(
            extract(
                make_spec(model_path, splits, tmp_path, seed=12, out_path=str(tmp_path / "b.udab"))
            )
        )
        # clean-pass arrays agree; only the stochastic augmentation differs
        np.testing.assert_array_equal(a.target_predictions, b.target_predictions)
        assert not np.array_equal(a.target_aug_predictions, b.target_aug_predictions)

    def test_no_augment(self, model_path, splits, tmp_path):
        from uda_select import read_bundle

        bundle = read_bundle(extract(make_spec(model_path, splits, tmp_path, augment=False)))
        assert bundle.target_aug_predictions is None
        assert bundle.target_aug_features is None

    def test_rows_are_stochastic(self, model_path, splits, tmp_path):
        from uda_select import read_bundle

        bundle = read_bundle(extract(make_spec(model_path, splits, tmp_path)))
        for arr in (
            bundle.source_predictions,
            bundle.target_predictions,
            bundle.target_aug_predictions,
        ):
            np.testing.assert_allclose(arr.sum(axis=1), 1.0, atol=1e-5)
            assert (arr >= 0).all()


class TestFailureModes:
    def test_source_without_subdirs(self, model_path, splits, tmp_path):
        src, tgt = splits
        with pytest.raises(ExtractionError, match="class subdirectories"):
            extract(make_spec(model_path, (tgt, tgt), tmp_path))

    def test_missing_model(self, splits, tmp_path):
        with pytest.raises(ExtractionError, match="cannot load model"):
            extract(make_spec(tmp_path / "nope.pt", splits, tmp_path))

    def test_model_not_a_module(self, splits, tmp_path):
        bad = tmp_path / "bad.pt"
        torch.save({"weights": [1, 2, 3]}, bad)
        with pytest.raises(ExtractionError, match="torch module"):
            extract(make_spec(bad, splits, tmp_path))

    def test_unwritable_out_dir(self, model_path, splits, tmp_path):
        with pytest.raises(ExtractionError, match="not writable"):
            make_spec(model_path, splits, tmp_path, out_path=str(tmp_path / "no" / "x.udab"))

    def test_empty_split(self, model_path, tmp_path):
        src = tmp_path / "src"
        (src / "a").mkdir(parents=True)
        (src / "b").mkdir()
        tgt = tmp_path / "tgt"
        write_images(tgt, 3, seed=0)
        with pytest.raises(ExtractionError, match="no images"):
            extract(make_spec(model_path, (src, tgt), tmp_path))

    def test_too_many_source_classes(self, splits, tmp_path):
        src, tgt = splits
        write_images(src / "bird", 3, seed=9)
        model = ToyModel(image_size=16, feat_dim=8, k=2, seed=5)
        path = tmp_path / "m.pt"
        torch.save(model, path)
        with pytest.raises(ExtractionError, match="head emits"):
            extract(make_spec(path, (src, tgt), tmp_path))


class TestHelpers:
    def test_infer_k_from_head(self, model_path):
        model = load_model(model_path)
        assert infer_k(model, np.zeros((1, 5))) == 2

    def test_infer_k_fallback(self):
        class NoLinear(torch.nn.Module):
            pass

        assert infer_k(NoLinear(), np.zeros((1, 5))) == 5

    def test_load_split_flat(self, splits):
        _src, tgt = splits
        paths, labels, classes = load_split(tgt)
        assert len(paths) == 10
        assert labels is None and classes == []

    def test_load_split_labeled_order(self, splits):
        src, _tgt = splits
        paths, labels, classes = load_split(src)
        assert classes == ["cat", "dog"]
        assert list(labels) == [0] * 6 + [1] * 6

    def test_tuple_forward_model(self, splits, tmp_path):
        path = tmp_path / "tuple.pt"
        torch.save(TupleNet(image_size=16, feat_dim=4, k=2), path)
        out = extract(make_spec(path, splits, tmp_path))
        from uda_select import read_bundle

        assert read_bundle(out).source_features.shape == (12, 4)


class TestCli:
    def test_cli_roundtrip(self, model_path, splits, tmp_path, capsys):
        src, tgt = splits
        out = tmp_path / "cli.udab"
        rc = cli_main(
            [
                "--model", str(model_path),
                "--source-dir", str(src),
                "--target-dir", str(tgt),
                "--out", str(out),
                "--image-size", "16",
                "--seed", "11",
            ]
        )
        assert rc == 0
        assert str(out) in capsys.readouterr().out
        from uda_select import read_bundle

        assert read_bundle(out).k_classes == 2

    def test_cli_error_exit(self, splits, tmp_path, capsys):
        src, tgt = splits
        rc = cli_main(
            [
                "--model", str(tmp_path / "missing.pt"),
                "--source-dir", str(src),
                "--target-dir", str(tgt),
                "--out", str(tmp_path / "x.udab"),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err
