"""Run a trained model over evaluation splits and export a UDAB1 bundle.

The model is any torch module that maps an image batch to (features,
logits); modules exposing `generator` and `classifier` submodules are
composed the same way. Features come from the generator output, class
probabilities from the softmaxed classifier head.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image
from torchvision import transforms

from .bundle_writer import write_udab1

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


class ExtractionError(RuntimeError):
    pass


@dataclass
class ExtractionSpec:
    model_path: str
    source_dir: str
    target_dir: str
    out_path: str
    augment: bool = True
    seed: int = 17
    batch_size: int = 64
    image_size: int = 32
    model_id: str | None = None

    def __post_init__(self):
        out_dir = os.path.dirname(os.path.abspath(self.out_path)) or "."
        if not os.path.isdir(out_dir) or not os.access(out_dir, os.W_OK):
            raise ExtractionError(f"output directory not writable: {out_dir}")


# Transform names follow the usual strong-augmentation recipe: random
# resize-and-crop, horizontal flip, color jitter, gaussian blur.
AUG_PARAMS = {
    "crop_scale": (0.7, 1.0),
    "jitter": 0.4,
    "blur_sigma": (0.1, 2.0),
}


def eval_transform(size: int):
    return transforms.Compose(
        [transforms.Resize((size, size)), transforms.ToTensor()]
    )


def aug_transform(size: int):
    kernel = size // 8 * 2 + 1  # odd kernel spanning about a quarter of the image
    j = AUG_PARAMS["jitter"]
    return transforms.Compose(
        [
            transforms.RandomResizedCrop(size, scale=AUG_PARAMS["crop_scale"]),
            transforms.RandomHorizontalFlip(),
            transforms.ColorJitter(brightness=j, contrast=j, saturation=j, hue=min(j, 0.5)),
            transforms.GaussianBlur(kernel, sigma=AUG_PARAMS["blur_sigma"]),
            transforms.ToTensor(),
        ]
    )


def _list_images(directory):
    out = []
    for root, _dirs, files in os.walk(directory):
        for name in sorted(files):
            if name.lower().endswith(IMAGE_EXTENSIONS):
                out.append(os.path.join(root, name))
    return sorted(out)


def load_split(directory):
    """Image paths plus labels from class subdirectories when present."""
    if not os.path.isdir(directory):
        raise ExtractionError(f"not a directory: {directory}")
    class_dirs = sorted(
        d for d in os.listdir(directory) if os.path.isdir(os.path.join(directory, d))
    )
    if class_dirs:
        paths, labels = [], []
        for idx, cls in enumerate(class_dirs):
            for p in _list_images(os.path.join(directory, cls)):
                paths.append(p)
                labels.append(idx)
        if not paths:
            raise ExtractionError(f"no images under {directory}")
        return paths, np.asarray(labels, dtype=np.int64), class_dirs
    paths = _list_images(directory)
    if not paths:
        raise ExtractionError(f"no images under {directory}")
    return paths, None, []


def load_model(path) -> torch.nn.Module:
    try:
        model = torch.jit.load(path, map_location="cpu")
    except Exception:
        try:
            model = torch.load(path, map_location="cpu", weights_only=False)
        except Exception as exc:
            raise ExtractionError(f"cannot load model {path}: {exc}") from exc
    if not isinstance(model, torch.nn.Module):
        raise ExtractionError(f"{path} did not contain a torch module")
    model.eval()
    return model


def _forward(model, batch):
    if hasattr(model, "generator") and hasattr(model, "classifier"):
        feats = model.generator(batch)
        logits = model.classifier(feats)
    else:
        out = model(batch)
        if not (isinstance(out, (tuple, list)) and len(out) == 2):
            raise ExtractionError(
                "model must return (features, logits) or expose generator/classifier"
            )
        feats, logits = out
    if feats.ndim > 2:
        feats = feats.flatten(1)
    if logits.ndim != 2:
        raise ExtractionError("classifier head must produce a 2-d logit matrix")
    return feats, logits


@torch.no_grad()
def run_inference(model, paths, transform, batch_size):
    feats_out, probs_out = [], []
    for start in range(0, len(paths), batch_size):
        chunk = paths[start : start + batch_size]
        batch = torch.stack(
            [transform(Image.open(p).convert("RGB")) for p in chunk]
        )
        feats, logits = _forward(model, batch)
        feats_out.append(feats.cpu().numpy())
        probs_out.append(torch.softmax(logits, dim=1).cpu().numpy())
    feats = np.concatenate(feats_out).astype(np.float32)
    probs = np.concatenate(probs_out).astype(np.float64)
    probs = probs / probs.sum(axis=1, keepdims=True)  # exact row-stochastic rows
    return feats, probs.astype(np.float32)


def infer_k(model, probe_probs) -> int:
    last = None
    if hasattr(model, "modules"):
        for module in model.modules():
            if isinstance(module, torch.nn.Linear):
                last = module
    if last is not None:
        return int(last.out_features)
    return int(probe_probs.shape[1])


def extract(spec: ExtractionSpec) -> str:
    model = load_model(spec.model_path)
    src_paths, src_labels, classes = load_split(spec.source_dir)
    if src_labels is None:
        raise ExtractionError("source split needs class subdirectories for labels")
    tgt_paths, _tgt_labels, _ = load_split(spec.target_dir)

    ev = eval_transform(spec.image_size)
    src_feats, src_probs = run_inference(model, src_paths, ev, spec.batch_size)
    tgt_feats, tgt_probs = run_inference(model, tgt_paths, ev, spec.batch_size)

    k = infer_k(model, src_probs)
    if src_probs.shape[1] != k:
        raise ExtractionError(
            f"classifier head width {k} != prediction columns {src_probs.shape[1]}"
        )
    if int(src_labels.max()) >= k:
        raise ExtractionError(
            f"source has {int(src_labels.max()) + 1} classes but the head emits {k}"
        )

    arrays = {
        "source_features": src_feats,
        "source_labels": src_labels,
        "source_predictions": src_probs,
        "target_features": tgt_feats,
        "target_predictions": tgt_probs,
    }
    hyperparams = {
        "adapter": "udab-extract",
        "image_size": spec.image_size,
        "augment": bool(spec.augment),
        "seed": spec.seed,
    }
    if spec.augment:
        torch.manual_seed(spec.seed)
        av = aug_transform(spec.image_size)
        aug_feats, aug_probs = run_inference(model, tgt_paths, av, spec.batch_size)
        arrays["target_aug_features"] = aug_feats
        arrays["target_aug_predictions"] = aug_probs
        hyperparams.update(AUG_PARAMS)
        hyperparams["crop_scale"] = list(AUG_PARAMS["crop_scale"])
        hyperparams["blur_sigma"] = list(AUG_PARAMS["blur_sigma"])

    model_id = spec.model_id or os.path.splitext(os.path.basename(spec.model_path))[0]
    write_udab1(
        spec.out_path,
        model_id=model_id,
        k_classes=k,
        arrays=arrays,
        hyperparams=hyperparams,
    )
    return spec.out_path
