import numpy as np
import pytest
from hypothesis import settings

from occlusim.furniture import make_shape_db, make_shapes
from occlusim.mesh import TriangleMesh

settings.register_profile("occlusim", deadline=None, max_examples=50)
settings.load_profile("occlusim")


def random_mesh(rng, n_faces=20, scale=1.0):
    """Triangle soup with non-degenerate bounding box."""
    v = rng.normal(size=(3 * n_faces, 3)) * scale
    f = np.arange(3 * n_faces).reshape(-1, 3)
    return TriangleMesh(v, f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def furniture():
    return make_shapes(3, seed=5)


@pytest.fixture(scope="session")
def shape_db(tmp_path_factory):
    return make_shape_db(tmp_path_factory.mktemp("shapes"), 3, seed=5)
