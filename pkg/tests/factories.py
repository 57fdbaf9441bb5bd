import numpy as np

from uda_select.bundle_io import EvaluationBundle


def random_probs(rng, n, k):
    p = rng.dirichlet(np.ones(k) * rng.uniform(0.3, 3.0), size=n)
    return p.astype(np.float32)


def make_bundle(
    seed,
    n_source=None,
    n_target=None,
    k=None,
    dim=None,
    with_aug=False,
    with_accuracy=True,
    model_id=None,
):
    rng = np.random.default_rng(seed)
    k = k or int(rng.integers(2, 7))
    n_source = n_source or int(rng.integers(k, 65))
    n_target = n_target or int(rng.integers(2, 65))
    dim = dim or int(rng.integers(2, 9))
    bundle = EvaluationBundle(
        model_id=model_id or f"fuzz-{seed}",
        k_classes=k,
        hyperparams={"seed": int(seed)},
        true_target_accuracy=float(rng.uniform()) if with_accuracy else None,
        source_features=rng.standard_normal((n_source, dim)).astype(np.float32),
        source_labels=rng.integers(0, k, n_source).astype(np.int64),
        source_predictions=random_probs(rng, n_source, k),
        target_features=rng.standard_normal((n_target, dim)).astype(np.float32),
        target_predictions=random_probs(rng, n_target, k),
        target_aug_features=(
            rng.standard_normal((n_target, dim)).astype(np.float32)
            if with_aug
            else None
        ),
        target_aug_predictions=(
            random_probs(rng, n_target, k) if with_aug else None
        ),
    )
    return bundle
