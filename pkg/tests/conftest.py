import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixtures import make_box_scene  # noqa: E402


@pytest.fixture(scope="session")
def box_scene(tmp_path_factory):
    """Emitter box: 14 triangles, 2 materials, 49.2% UV coverage."""
    return make_box_scene(tmp_path_factory.mktemp("scenes"), emitter=True)


@pytest.fixture(scope="session")
def closed_box_scene(tmp_path_factory):
    """Closed box without the emitter: 12 triangles, walls only."""
    return make_box_scene(tmp_path_factory.mktemp("scenes"), emitter=False)


@pytest.fixture(scope="session")
def box_bvh(box_scene):
    from rtbake.tracer import build_bvh

    return build_bvh(box_scene)


@pytest.fixture(scope="session")
def box_tg32(box_scene):
    from rtbake.uvraster import build_texture_group

    return build_texture_group(box_scene, (32, 32))
