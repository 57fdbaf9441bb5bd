"""Minimal UDAB1 writer.

Container layout: magic b"UDAB1\\n", an 8-byte little-endian unsigned
header length, a UTF-8 JSON header describing the arrays, then the raw
data section with each array row-major and little-endian. Features and
predictions are f32, labels are i64.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"UDAB1\n"

_DTYPES = {"f32": np.dtype("<f4"), "i64": np.dtype("<i8")}

_ORDER = [
    ("source_features", "f32"),
    ("source_labels", "i64"),
    ("source_predictions", "f32"),
    ("target_features", "f32"),
    ("target_predictions", "f32"),
    ("target_aug_predictions", "f32"),
    ("target_aug_features", "f32"),
]


def write_udab1(
    path,
    model_id: str,
    k_classes: int,
    arrays: dict,
    hyperparams: dict | None = None,
    true_target_accuracy: float | None = None,
) -> None:
    """Write a bundle atomically (temp file in the target directory, then rename)."""
    specs = []
    blobs = []
    offset = 0
    for name, dt in _ORDER:
        arr = arrays.get(name)
        if arr is None:
            continue
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        specs.append(
            {"name": name, "dtype": dt, "shape": list(np.shape(arr)), "offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "arrays": specs,
        "k_classes": int(k_classes),
        "model_id": model_id,
        "hyperparams": hyperparams or {},
        "true_target_accuracy": true_target_accuracy,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    out_dir = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".udab.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header_bytes)))
            fh.write(header_bytes)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
