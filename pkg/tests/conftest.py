import pytest

from factories import make_bundle


@pytest.fixture
def small_bundle():
    return make_bundle(seed=7, n_source=24, n_target=30, k=3, dim=4, with_aug=True)
