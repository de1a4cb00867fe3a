import numpy as np
import pytest
from hypothesis import settings

from refvid.bench.synthetic import SuiteSpec, write_suite

settings.register_profile("repo", max_examples=60, deadline=None)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_suite(tmp_path_factory):
    """3 classes x 4 images at 64 px; cheap enough for end-to-end smoke runs."""
    root = tmp_path_factory.mktemp("suite")
    return write_suite(root, SuiteSpec(n_classes=3, per_class=4, resolution=64, dataset_id="tiny"))


def disk(shape, center, radius):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return ((yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius ** 2).astype(np.uint8)
