"""The twelve label-free model-selection scores, all oriented higher-is-better.

Closed-form scores read the bundle directly; the discrepancy and
importance-weighting scores train small probe heads under a 3-fold
held-out protocol. ISM and ACM use a two-layer MLP trained on the full
source evaluation set, since target samples are held out by construction.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .bundle_io import EvaluationBundle
from .probes import (
    FoldPlan,
    ProbeConfig,
    kfold_heldout_predict,
    make_fold_plan,
    train_classifier_pair_mcd,
    train_mdd_adversary,
    train_probe,
)

REGISTRY = [
    "a_distance",
    "mcd",
    "mdd",
    "dev",
    "devn",
    "entropy",
    "snd",
    "mi",
    "bnm",
    "class_ami",
    "ism",
    "acm",
]

ALL_METRICS = REGISTRY + ["mi_w_source"]


class MetricError(ValueError):
    pass


@dataclass
class MetricScore:
    metric_name: str
    value: float
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric_name not in ALL_METRICS:
            raise ValueError(f"unknown metric {self.metric_name!r}")
        if not np.isfinite(self.value):
            raise ValueError(f"{self.metric_name}: non-finite score")


@dataclass
class AugmentedPredictions:
    q_t: np.ndarray
    q_t_aug: np.ndarray | None


def derive_seed(seed: int, tag: str) -> int:
    return (int(seed) * 1000003 + zlib.crc32(tag.encode())) % (2**31)


def source_accuracy(b: EvaluationBundle) -> float:
    preds = b.source_predictions64().argmax(axis=1)
    return float(np.mean(preds == b.source_labels))


def _probe_cfg(seed, tag, architecture="linear", steps=200, hidden=None):
    return ProbeConfig(
        architecture=architecture,
        hidden_dim=hidden,
        max_steps=steps,
        seed=derive_seed(seed, tag),
    )


# --- closed-form scores -------------------------------------------------


def metric_entropy(b: EvaluationBundle) -> MetricScore:
    h = numerics.row_entropies(b.target_predictions64())
    return MetricScore("entropy", -float(h.mean()))


def _mutual_information(P: np.ndarray) -> float:
    marginal = P.mean(axis=0)
    return float(
        max(0.0, numerics.entropy(marginal) - numerics.row_entropies(P).mean())
    )


def metric_mi(b: EvaluationBundle) -> MetricScore:
    return MetricScore("mi", _mutual_information(b.target_predictions64()))


def metric_mi_with_source(b: EvaluationBundle) -> MetricScore:
    mi = _mutual_information(b.target_predictions64())
    acc = source_accuracy(b)
    value = acc + mi / (2.0 * np.log(b.k_classes)) + 0.5
    return MetricScore("mi_w_source", value, {"source_acc": acc, "mi": mi})


def metric_snd(b: EvaluationBundle, tau: float = 0.05) -> MetricScore:
    P = b.target_predictions64()
    if P.shape[0] < 2:
        raise MetricError("SND needs at least 2 target samples")
    sim = P @ P.T
    dist = numerics.softmax(sim / tau, axis=1)
    value = float(numerics.row_entropies(dist).mean())
    return MetricScore("snd", value, {"tau": tau})


def metric_bnm(b: EvaluationBundle) -> MetricScore:
    value = numerics.nuclear_norm(b.target_predictions64())
    return MetricScore("bnm", value, {"n_target": b.n_target})


def metric_class_ami(b: EvaluationBundle, seed: int = 17) -> MetricScore:
    if b.n_target < b.k_classes:
        raise MetricError("fewer target samples than classes")
    clusters = numerics.kmeans(
        b.target_features.astype(np.float64), b.k_classes, derive_seed(seed, "class_ami")
    )
    predicted = numerics.ClusterAssignment(
        labels=b.target_predictions64().argmax(axis=1), n_clusters=b.k_classes
    )
    return MetricScore(
        "class_ami", numerics.adjusted_mutual_information(clusters, predicted)
    )


# --- discrepancy scores -------------------------------------------------


def _domain_data(b: EvaluationBundle):
    X = np.vstack(
        [b.source_features.astype(np.float64), b.target_features.astype(np.float64)]
    )
    y = np.concatenate(
        [np.ones(b.n_source, dtype=np.int64), np.zeros(b.n_target, dtype=np.int64)]
    )
    return X, y


def metric_a_distance(
    b: EvaluationBundle,
    cfg: ProbeConfig | None = None,
    plan: FoldPlan | None = None,
    seed: int = 17,
    n_folds: int = 3,
) -> MetricScore:
    cfg = cfg or _probe_cfg(seed, "a_distance")
    X, y = _domain_data(b)
    plan = plan or make_fold_plan(X, y, n_folds, derive_seed(seed, "a_distance.folds"))
    result = kfold_heldout_predict(X, y, cfg, plan)
    acc_d = float(np.mean(result.heldout_predictions.argmax(axis=1) == y))
    d_a = float(np.clip(2.0 * (2.0 * acc_d - 1.0), 0.0, 2.0))
    src = source_accuracy(b)
    return MetricScore(
        "a_distance", src - d_a, {"source_acc": src, "divergence": d_a, "disc_acc": acc_d}
    )


def _paired_fold_plans(b: EvaluationBundle, seed: int, tag: str, n_folds: int):
    Xs = b.source_features.astype(np.float64)
    Xt = b.target_features.astype(np.float64)
    plan_s = make_fold_plan(
        Xs, b.source_labels, n_folds, derive_seed(seed, tag + ".s")
    )
    plan_t = make_fold_plan(
        Xt, np.zeros(b.n_target, dtype=np.int64), n_folds, derive_seed(seed, tag + ".t")
    )
    return Xs, Xt, plan_s, plan_t


def metric_mcd(
    b: EvaluationBundle,
    cfg: ProbeConfig | None = None,
    seed: int = 17,
    n_folds: int = 3,
) -> MetricScore:
    cfg = cfg or _probe_cfg(seed, "mcd")
    Xs, Xt, plan_s, plan_t = _paired_fold_plans(b, seed, "mcd.folds", n_folds)
    ys = b.source_labels
    dis_s = np.zeros(b.n_source, dtype=bool)
    dis_t = np.zeros(b.n_target, dtype=bool)
    for f in range(n_folds):
        tr_s = plan_s.assignment != f
        tr_t = plan_t.assignment != f
        h, h2 = train_classifier_pair_mcd((Xs[tr_s], ys[tr_s]), Xt[tr_t], cfg)
        dis_s[~tr_s] = h.predict(Xs[~tr_s]) != h2.predict(Xs[~tr_s])
        dis_t[~tr_t] = h.predict(Xt[~tr_t]) != h2.predict(Xt[~tr_t])
    gap = abs(float(dis_s.mean()) - float(dis_t.mean()))
    src = source_accuracy(b)
    return MetricScore("mcd", src - gap, {"source_acc": src, "divergence": gap})


def metric_mdd(
    b: EvaluationBundle,
    cfg: ProbeConfig | None = None,
    seed: int = 17,
    n_folds: int = 3,
) -> MetricScore:
    cfg = cfg or _probe_cfg(seed, "mdd")
    Xs, Xt, plan_s, plan_t = _paired_fold_plans(b, seed, "mdd.folds", n_folds)
    ps = b.source_predictions64()
    pt = b.target_predictions64()
    ys_hat = ps.argmax(axis=1)
    yt_hat = pt.argmax(axis=1)
    dis_s = np.zeros(b.n_source, dtype=bool)
    dis_t = np.zeros(b.n_target, dtype=bool)
    for f in range(n_folds):
        tr_s = plan_s.assignment != f
        tr_t = plan_t.assignment != f
        adversary = train_mdd_adversary(
            (Xs[tr_s], b.source_labels[tr_s]),
            Xt[tr_t],
            (ps[tr_s], pt[tr_t]),
            cfg,
        )
        dis_s[~tr_s] = adversary.predict(Xs[~tr_s]) != ys_hat[~tr_s]
        dis_t[~tr_t] = adversary.predict(Xt[~tr_t]) != yt_hat[~tr_t]
    divergence = float(dis_t.mean()) - float(dis_s.mean())
    src = source_accuracy(b)
    return MetricScore("mdd", src - divergence, {"source_acc": src, "divergence": divergence})


# --- importance-weighted scores -----------------------------------------


def _dev_core(b: EvaluationBundle, cfg, seed, n_folds, standardized: bool, name: str):
    cfg = cfg or _probe_cfg(seed, name, architecture="mlp2")
    X, y = _domain_data(b)
    plan = make_fold_plan(X, y, n_folds, derive_seed(seed, name + ".folds"))
    result = kfold_heldout_predict(X, y, cfg, plan)
    h = np.clip(result.heldout_predictions[: b.n_source, 1], 1e-4, 1.0 - 1e-4)
    w = (b.n_source / b.n_target) * (1.0 - h) / h
    if standardized:
        w = np.clip(numerics.standardize(w), 0.0, None)
    err = (b.source_predictions64().argmax(axis=1) != b.source_labels).astype(np.float64)
    ell = w * err
    var_w = float(np.mean((w - w.mean()) ** 2))
    if var_w < 1e-12:
        eta = 0.0
    else:
        cov = float(np.mean((ell - ell.mean()) * (w - w.mean())))
        eta = -cov / var_w
    dev = float(ell.mean() + eta * w.mean() - eta)
    return MetricScore(
        name, -dev, {"eta": eta, "mean_weight": float(w.mean()), "risk": float(ell.mean())}
    )


def metric_dev(b, cfg=None, seed: int = 17, n_folds: int = 3) -> MetricScore:
    return _dev_core(b, cfg, seed, n_folds, standardized=False, name="dev")


def metric_devn(b, cfg=None, seed: int = 17, n_folds: int = 3) -> MetricScore:
    return _dev_core(b, cfg, seed, n_folds, standardized=True, name="devn")


# --- held-out MLP scores ------------------------------------------------


def heldout_mlp_predict(
    b: EvaluationBundle, cfg: ProbeConfig | None = None, seed: int = 17
) -> AugmentedPredictions:
    """Two-layer MLP trained on all source evaluation features.

    Target samples never enter training, so no folding is needed. The
    augmented-view predictions require augmented feature matrices in the
    bundle.
    """
    cfg = cfg or _probe_cfg(seed, "heldout_mlp", architecture="mlp2")
    probe = train_probe(
        b.source_features.astype(np.float64), b.source_labels, cfg
    )
    q_t = probe.predict_proba(b.target_features.astype(np.float64))
    q_aug = None
    if b.target_aug_features is not None:
        q_aug = probe.predict_proba(b.target_aug_features.astype(np.float64))
    return AugmentedPredictions(q_t=q_t, q_t_aug=q_aug)


def metric_ism(
    b: EvaluationBundle,
    cfg: ProbeConfig | None = None,
    seed: int = 17,
    aug: AugmentedPredictions | None = None,
) -> MetricScore:
    aug = aug or heldout_mlp_predict(b, cfg, seed)
    inception = _mutual_information(aug.q_t)
    src = source_accuracy(b)
    value = src + inception / (2.0 * np.log(b.k_classes)) + 0.5
    return MetricScore("ism", value, {"source_acc": src, "is": inception})


def metric_acm(
    b: EvaluationBundle,
    cfg: ProbeConfig | None = None,
    seed: int = 17,
    aug: AugmentedPredictions | None = None,
) -> MetricScore:
    aug = aug or heldout_mlp_predict(b, cfg, seed)
    if aug.q_t_aug is None:
        raise MetricError("augmented views required")
    agree = aug.q_t.argmax(axis=1) == aug.q_t_aug.argmax(axis=1)
    ac = float(agree.mean())
    diversity = numerics.entropy(aug.q_t.mean(axis=0)) / np.log(b.k_classes)
    src = source_accuracy(b)
    value = src + 0.5 * (ac + diversity)
    return MetricScore(
        "acm", value, {"source_acc": src, "ac": ac, "diversity": diversity}
    )


# --- driver -------------------------------------------------------------


def compute_all(
    b: EvaluationBundle,
    seed: int = 17,
    snd_tau: float = 0.05,
    probe_steps: int = 200,
    n_folds: int = 3,
    metrics: list | None = None,
):
    """Run the metric registry; per-metric failures become named errors.

    Returns (scores, errors) where scores is a list of MetricScore and
    errors maps metric name to a message.
    """
    names = metrics or REGISTRY
    mlp_cfg = _probe_cfg(seed, "heldout_mlp", architecture="mlp2", steps=probe_steps)
    lin = lambda tag: _probe_cfg(seed, tag, steps=probe_steps)
    mlp2 = lambda tag: _probe_cfg(seed, tag, architecture="mlp2", steps=probe_steps)
    aug_cache = {}

    def shared_aug():
        if "aug" not in aug_cache:
            aug_cache["aug"] = heldout_mlp_predict(b, mlp_cfg, seed)
        return aug_cache["aug"]

    runners = {
        "entropy": lambda: metric_entropy(b),
        "mi": lambda: metric_mi(b),
        "mi_w_source": lambda: metric_mi_with_source(b),
        "snd": lambda: metric_snd(b, tau=snd_tau),
        "bnm": lambda: metric_bnm(b),
        "class_ami": lambda: metric_class_ami(b, seed=seed),
        "a_distance": lambda: metric_a_distance(
            b, cfg=lin("a_distance"), seed=seed, n_folds=n_folds
        ),
        "mcd": lambda: metric_mcd(b, cfg=lin("mcd"), seed=seed, n_folds=n_folds),
        "mdd": lambda: metric_mdd(b, cfg=lin("mdd"), seed=seed, n_folds=n_folds),
        "dev": lambda: metric_dev(b, cfg=mlp2("dev"), seed=seed, n_folds=n_folds),
        "devn": lambda: metric_devn(b, cfg=mlp2("devn"), seed=seed, n_folds=n_folds),
        "ism": lambda: metric_ism(b, seed=seed, aug=shared_aug()),
        "acm": lambda: metric_acm(b, seed=seed, aug=shared_aug()),
    }

    scores = []
    errors = {}
    for name in names:
        if name not in runners:
            errors[name] = f"unknown metric {name!r}"
            continue
        try:
            scores.append(runners[name]())
        except Exception as exc:  # per-metric isolation, never abort the rest
            errors[name] = f"{type(exc).__name__}: {exc}"
    return scores, errors
