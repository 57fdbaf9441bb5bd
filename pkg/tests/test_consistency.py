import numpy as np
import pytest

from uda_select.bundle_io import BundleSet
from uda_select.consistency import (
    MissingGroundTruthError,
    consistency_report,
    deviation_of_best,
)

from factories import make_bundle


class TestDeviationOfBest:
    def test_perfect_metric(self):
        assert deviation_of_best([1.0, 2.0, 3.0], [0.5, 0.6, 0.9]) == 0.0

    def test_worst_pick(self):
        assert deviation_of_best([3.0, 2.0, 1.0], [0.5, 0.6, 0.9]) == pytest.approx(0.4)

    def test_tie_lowest_index(self):
        # argmax tie resolves to the earliest model
        assert deviation_of_best([1.0, 1.0], [0.2, 0.9]) == pytest.approx(0.7)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            deviation_of_best([1.0], [0.5, 0.6])


def _bundle_with(seed, model_id, acc, method=None):
    b = make_bundle(seed=seed, k=3, dim=4, model_id=model_id, with_accuracy=False)
    hp = dict(b.hyperparams)
    if method:
        hp["method"] = method
    b.hyperparams = hp
    b.true_target_accuracy = acc
    return b


class TestConsistencyReport:
    def make_set(self, with_methods=True):
        bundles = []
        accs = [0.3, 0.5, 0.7, 0.4, 0.6, 0.9]
        for i, acc in enumerate(accs):
            method = ("dann" if i < 3 else "mcc") if with_methods else None
            bundles.append(_bundle_with(100 + i, f"m{i}", acc, method))
        scores = {
            f"m{i}": {"mi": acc, "entropy": -acc} for i, acc in enumerate(accs)
        }
        return BundleSet(bundles=bundles), scores

    def test_pooled_row_present(self):
        bs, scores = self.make_set()
        report = consistency_report(bs, scores)
        assert report.groups[-1].group == "ALL"
        assert report.groups[-1].n_models == 6

    def test_per_group_rows(self):
        bs, scores = self.make_set()
        report = consistency_report(bs, scores)
        names = [g.group for g in report.groups]
        assert names == ["dann", "mcc", "ALL"]

    def test_no_groups_means_pooled_only(self):
        bs, scores = self.make_set(with_methods=False)
        report = consistency_report(bs, scores)
        assert [g.group for g in report.groups] == ["ALL"]

    def test_perfect_and_inverted_metric(self):
        bs, scores = self.make_set()
        report = consistency_report(bs, scores)
        rows = {r.metric_name: r for r in report.groups[-1].rows}
        assert rows["mi"].corr == pytest.approx(1.0)
        assert rows["mi"].dev == 0.0
        assert rows["entropy"].corr == pytest.approx(-1.0)
        assert rows["entropy"].dev == pytest.approx(60.0)  # points

    def test_missing_ground_truth_raises(self):
        bundles = [make_bundle(seed=1, k=3, dim=4, model_id="a", with_accuracy=False)]
        with pytest.raises(MissingGroundTruthError):
            consistency_report(BundleSet(bundles=bundles), {"a": {"mi": 0.0}})

    def test_degenerate_scores_marked(self):
        bs, scores = self.make_set()
        for mid in scores:
            scores[mid]["mi"] = 1.0
        report = consistency_report(bs, scores)
        rows = {r.metric_name: r for r in report.groups[-1].rows}
        assert rows["mi"].corr is None

    def test_csv_and_table_agree(self):
        bs, scores = self.make_set()
        report = consistency_report(bs, scores)
        csv_text = report.to_csv()
        table_text = report.to_table()
        # spot-check the shared numbers at their printed precision
        assert "1.000000" in csv_text and "1.00" in table_text
        assert "60.000000" in csv_text and "60.00" in table_text

    def test_percent_accuracy_units(self):
        bundles = []
        for i, acc in enumerate([0.30, 0.90]):
            bundles.append(_bundle_with(200 + i, f"p{i}", acc))
        # accuracies in percent: dev stays in points without rescaling
        for b in bundles:
            b.true_target_accuracy = None
        bundles[0].true_target_accuracy = 0.30
        bundles[1].true_target_accuracy = 0.90
        report = consistency_report(
            BundleSet(bundles=bundles), {"p0": {"mi": 2.0}, "p1": {"mi": 1.0}}
        )
        assert report.groups[-1].rows[0].dev == pytest.approx(60.0)
