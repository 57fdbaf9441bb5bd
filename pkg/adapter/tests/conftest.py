import pytest
import torch

from toy_assets import ToyModel, write_images


@pytest.fixture
def splits(tmp_path):
    src = tmp_path / "source"
    tgt = tmp_path / "target"
    write_images(src / "cat", 6, seed=1, brightness=60)
    write_images(src / "dog", 6, seed=2, brightness=180)
    # mix dark and bright target images so toy heads emit both classes
    write_images(tgt, 5, seed=3, brightness=70, prefix="dark")
    write_images(tgt, 5, seed=4, brightness=170, prefix="lite")
    return src, tgt


@pytest.fixture
def model_path(tmp_path):
    # seed chosen so the random head emits both classes on each split,
    # keeping every probe-based metric well-posed on the toy data
    model = ToyModel(image_size=16, feat_dim=8, k=2, seed=37)
    path = tmp_path / "toy_model.pt"
    torch.save(model, path)
    return path
