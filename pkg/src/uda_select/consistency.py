"""Metric-vs-accuracy consistency: correlation and best-model deviation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .bundle_io import BundleSet
from .numerics import DegenerateSeriesError, pearson_corr


class MissingGroundTruthError(ValueError):
    pass


@dataclass
class MetricConsistency:
    metric_name: str
    corr: float | None  # None marks a degenerate score series
    dev: float  # accuracy points
    best_model: str


@dataclass
class GroupReport:
    group: str  # training-method group or "ALL"
    n_models: int
    rows: list  # list of MetricConsistency


@dataclass
class ConsistencyReport:
    groups: list
    accuracy_unit: str  # "percent" or "fraction" as supplied
    group_key: str | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["group", "metric", "corr", "dev", "best_model", "n_models"])
        for g in self.groups:
            for row in g.rows:
                corr = "degenerate" if row.corr is None else f"{row.corr:.6f}"
                writer.writerow(
                    [g.group, row.metric_name, corr, f"{row.dev:.6f}", row.best_model, g.n_models]
                )
        return buf.getvalue()

    def to_table(self) -> str:
        lines = []
        names = [r.metric_name for r in self.groups[0].rows]
        header = ["Metric"] + [f"{g.group} corr|dev" for g in self.groups]
        widths = [max(len(header[0]), max(len(n) for n in names))]
        cells = []
        for g in self.groups:
            col = []
            for row in g.rows:
                corr = "degen" if row.corr is None else f"{row.corr:.2f}"
                col.append(f"{corr} | {row.dev:.2f}")
            cells.append(col)
            widths.append(max(len(header[len(cells)]), max(len(c) for c in col)))
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        lines.append("  ".join("-" * w for w in widths))
        for i, name in enumerate(names):
            row = [name.ljust(widths[0])]
            for j, col in enumerate(cells):
                row.append(col[i].ljust(widths[j + 1]))
            lines.append("  ".join(row))
        return "\n".join(lines) + "\n"


def deviation_of_best(scores, accuracies) -> float:
    """max accuracy minus accuracy of the top-scored model (ties: lowest index)."""
    s = np.asarray(scores, dtype=np.float64)
    a = np.asarray(accuracies, dtype=np.float64)
    if s.shape != a.shape or s.ndim != 1 or s.size < 1:
        raise ValueError("scores and accuracies must be equal-length vectors")
    best_by_metric = int(np.argmax(s))
    return float(a.max() - a[best_by_metric])


def _consistency_rows(model_ids, accuracies, scores_by_metric, to_points):
    rows = []
    for name, scores in scores_by_metric.items():
        s = np.asarray(scores, dtype=np.float64)
        try:
            corr = pearson_corr(s, accuracies)
        except DegenerateSeriesError:
            corr = None
        dev = deviation_of_best(s, accuracies) * to_points
        rows.append(
            MetricConsistency(
                metric_name=name,
                corr=corr,
                dev=dev,
                best_model=model_ids[int(np.argmax(s))],
            )
        )
    return rows


def consistency_report(
    bundle_set: BundleSet, scores, group_key: str = "method"
) -> ConsistencyReport:
    """Build per-group and pooled "ALL" consistency rows.

    `scores` maps model_id -> {metric_name -> value}. Every bundle must
    carry true_target_accuracy. The pooled row is computed on the union of
    models, not by averaging per-group statistics.
    """
    ids, accs, groups = [], [], []
    for b in bundle_set:
        if b.true_target_accuracy is None:
            raise MissingGroundTruthError(
                f"bundle {b.model_id!r} lacks true_target_accuracy"
            )
        ids.append(b.model_id)
        accs.append(b.true_target_accuracy)
        groups.append(str(b.hyperparams.get(group_key, "")))
    accs = np.asarray(accs, dtype=np.float64)
    unit = "fraction" if accs.max() <= 1.0 else "percent"
    to_points = 100.0 if unit == "fraction" else 1.0

    metric_names = sorted({m for mid in ids for m in scores[mid]})

    def rows_for(indices):
        sub_ids = [ids[i] for i in indices]
        sub_accs = accs[indices]
        by_metric = {}
        for name in metric_names:
            if all(name in scores[mid] for mid in sub_ids):
                by_metric[name] = [scores[mid][name] for mid in sub_ids]
        return _consistency_rows(sub_ids, sub_accs, by_metric, to_points)

    out = []
    named_groups = sorted({g for g in groups if g})
    if len(named_groups) > 1:
        for g in named_groups:
            idx = [i for i, gi in enumerate(groups) if gi == g]
            out.append(GroupReport(group=g, n_models=len(idx), rows=rows_for(idx)))
    out.append(
        GroupReport(group="ALL", n_models=len(ids), rows=rows_for(list(range(len(ids)))))
    )
    return ConsistencyReport(
        groups=out,
        accuracy_unit=unit,
        group_key=group_key if len(named_groups) > 1 else None,
    )
