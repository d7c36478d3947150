import pytest

from triflownet.data import make_synthetic_dataset


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyset")
    return make_synthetic_dataset(root, n=8, size=64, seed=0)
