"""UDAB1 bundle container: single-file binary dumps of evaluation data.

Layout: magic b"UDAB1\n", an 8-byte little-endian unsigned header length,
a UTF-8 JSON header, then the raw data section with arrays row-major,
little-endian, concatenated in header order. Features and predictions are
stored as f32, labels as i64; metric arithmetic upcasts to f64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"UDAB1\n"

ROW_SUM_TOL = 1e-5
NEG_TOL = -1e-7

# (name, dtype, required)
_ARRAY_FIELDS = [
    ("source_features", "f32", True),
    ("source_labels", "i64", True),
    ("source_predictions", "f32", True),
    ("target_features", "f32", True),
    ("target_predictions", "f32", True),
    ("target_aug_predictions", "f32", False),
    ("target_aug_features", "f32", False),
]

_DTYPES = {"f32": np.dtype("<f4"), "i64": np.dtype("<i8")}


class BundleFormatError(ValueError):
    """Malformed container: bad magic, truncation, bad header."""


class BundleValidationError(ValueError):
    """Structurally valid file whose contents violate a bundle invariant."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass
class EvaluationBundle:
    """Per-model dump of features and predictions for both domains."""

    model_id: str
    k_classes: int
    source_features: np.ndarray
    source_labels: np.ndarray
    source_predictions: np.ndarray
    target_features: np.ndarray
    target_predictions: np.ndarray
    target_aug_predictions: np.ndarray | None = None
    target_aug_features: np.ndarray | None = None
    hyperparams: dict = field(default_factory=dict)
    true_target_accuracy: float | None = None

    def __post_init__(self):
        self.source_features = np.asarray(self.source_features, dtype=np.float32)
        self.source_labels = np.asarray(self.source_labels, dtype=np.int64)
        self.source_predictions = np.asarray(self.source_predictions, dtype=np.float32)
        self.target_features = np.asarray(self.target_features, dtype=np.float32)
        self.target_predictions = np.asarray(self.target_predictions, dtype=np.float32)
        if self.target_aug_predictions is not None:
            self.target_aug_predictions = np.asarray(
                self.target_aug_predictions, dtype=np.float32
            )
        if self.target_aug_features is not None:
            self.target_aug_features = np.asarray(
                self.target_aug_features, dtype=np.float32
            )
        self.validate()

    def validate(self):
        if self.k_classes < 2:
            raise BundleValidationError("k_classes", "must be >= 2")
        ns, d = _check_matrix("source_features", self.source_features)
        nt, dt = _check_matrix("target_features", self.target_features)
        if d != dt:
            raise BundleValidationError(
                "target_features", f"feature dim {dt} != source dim {d}"
            )
        _check_vector("source_labels", self.source_labels, ns)
        if self.source_labels.size and (
            self.source_labels.min() < 0 or self.source_labels.max() >= self.k_classes
        ):
            raise BundleValidationError("source_labels", "label outside [0, K)")
        _check_predictions("source_predictions", self.source_predictions, ns, self.k_classes)
        _check_predictions("target_predictions", self.target_predictions, nt, self.k_classes)
        if self.target_aug_predictions is not None:
            _check_predictions(
                "target_aug_predictions", self.target_aug_predictions, nt, self.k_classes
            )
        if self.target_aug_features is not None:
            na, da = _check_matrix("target_aug_features", self.target_aug_features)
            if (na, da) != (nt, d):
                raise BundleValidationError(
                    "target_aug_features", "shape must match target_features"
                )
        if self.true_target_accuracy is not None and not (
            0.0 <= self.true_target_accuracy <= 1.0
        ):
            raise BundleValidationError("true_target_accuracy", "must lie in [0, 1]")

    # f64 working views (clamped and renormalized); raw arrays stay bit-exact
    def source_predictions64(self) -> np.ndarray:
        return _clean_predictions(self.source_predictions)

    def target_predictions64(self) -> np.ndarray:
        return _clean_predictions(self.target_predictions)

    def target_aug_predictions64(self) -> np.ndarray | None:
        if self.target_aug_predictions is None:
            return None
        return _clean_predictions(self.target_aug_predictions)

    @property
    def n_source(self) -> int:
        return self.source_features.shape[0]

    @property
    def n_target(self) -> int:
        return self.target_features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.source_features.shape[1]


def _check_matrix(name, a, expected_rows=None):
    if a.ndim != 2:
        raise BundleValidationError(name, f"expected a matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise BundleValidationError(name, "non-finite values")
    if expected_rows is not None and a.shape[0] != expected_rows:
        raise BundleValidationError(name, f"expected {expected_rows} rows")
    return a.shape


def _check_vector(name, a, expected_len):
    if a.ndim != 1 or a.shape[0] != expected_len:
        raise BundleValidationError(name, f"expected a vector of length {expected_len}")


def _check_predictions(name, p, n_rows, k):
    _check_matrix(name, p, n_rows)
    if p.shape[1] != k:
        raise BundleValidationError(name, f"expected {k} columns")
    p64 = p.astype(np.float64)
    if np.any(p64 < NEG_TOL):
        raise BundleValidationError(name, "negative probability beyond tolerance")
    sums = np.clip(p64, 0.0, None).sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        raise BundleValidationError(name, "row-stochastic violation")


def _clean_predictions(p: np.ndarray) -> np.ndarray:
    q = np.clip(p.astype(np.float64), 0.0, None)
    return q / q.sum(axis=1, keepdims=True)


@dataclass
class BundleSet:
    """Ordered bundles sharing class count and feature dim, unique model ids."""

    bundles: list

    def __post_init__(self):
        if not self.bundles:
            raise ValueError("empty bundle set")
        ids = [b.model_id for b in self.bundles]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate model_id in bundle set")
        k = self.bundles[0].k_classes
        d = self.bundles[0].feature_dim
        for b in self.bundles:
            if b.k_classes != k or b.feature_dim != d:
                raise ValueError("bundles disagree on k_classes or feature dim")

    def __iter__(self):
        return iter(self.bundles)

    def __len__(self):
        return len(self.bundles)

    @property
    def k_classes(self) -> int:
        return self.bundles[0].k_classes


def write_bundle(bundle: EvaluationBundle, path) -> None:
    bundle.validate()
    arrays = []
    blobs = []
    offset = 0
    for name, dt, required in _ARRAY_FIELDS:
        arr = getattr(bundle, name)
        if arr is None:
            if required:
                raise BundleValidationError(name, "required array missing")
            continue
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        arrays.append(
            {"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "arrays": arrays,
        "k_classes": bundle.k_classes,
        "model_id": bundle.model_id,
        "hyperparams": bundle.hyperparams,
        "true_target_accuracy": bundle.true_target_accuracy,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_bundle(path) -> EvaluationBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise BundleFormatError("bad magic")
    if len(data) < len(MAGIC) + 8:
        raise BundleFormatError("truncated header length")
    (hlen,) = struct.unpack_from("<Q", data, len(MAGIC))
    hstart = len(MAGIC) + 8
    if len(data) < hstart + hlen:
        raise BundleFormatError("truncated header")
    try:
        header = json.loads(data[hstart : hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"unreadable header: {exc}") from exc

    payload = data[hstart + hlen :]
    kwargs = {
        "model_id": header.get("model_id", ""),
        "k_classes": int(header.get("k_classes", 0)),
        "hyperparams": header.get("hyperparams", {}),
        "true_target_accuracy": header.get("true_target_accuracy"),
    }
    known = {name for name, _, _ in _ARRAY_FIELDS}
    for spec in header.get("arrays", []):
        name = spec["name"]
        if name not in known:
            continue
        dtype = _DTYPES.get(spec["dtype"])
        if dtype is None:
            raise BundleFormatError(f"unknown dtype {spec['dtype']!r} for {name}")
        shape = tuple(int(s) for s in spec["shape"])
        nbytes = int(np.prod(shape)) * dtype.itemsize
        start = int(spec["offset"])
        if start + nbytes > len(payload):
            raise BundleFormatError(f"truncated data section for {name}")
        kwargs[name] = np.frombuffer(
            payload[start : start + nbytes], dtype=dtype
        ).reshape(shape)
    missing = [n for n, _, req in _ARRAY_FIELDS if req and n not in kwargs]
    if missing:
        raise BundleFormatError(f"missing arrays: {', '.join(missing)}")
    return EvaluationBundle(**kwargs)


def read_bundle_set(paths) -> BundleSet:
    return BundleSet([read_bundle(p) for p in paths])
