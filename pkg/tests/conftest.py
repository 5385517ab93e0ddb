import sys

import numpy as np
import pytest

from mvtex.geometry import TriMesh, default_cameras, normalize_to_canonical, segment_parts
from mvtex.meshes import box, merge, uv_sphere

CUBE_OBJ = """\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


@pytest.fixture
def cube_obj_path(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(CUBE_OBJ)
    return path


@pytest.fixture
def cube():
    return normalize_to_canonical(box(), margin=0.05)


@pytest.fixture
def cube_segmented(cube):
    return segment_parts(cube, 6, seed=0)


@pytest.fixture
def sphere():
    return normalize_to_canonical(uv_sphere(10, 14), margin=0.05)


@pytest.fixture
def two_spheres():
    a = uv_sphere(6, 8, center=(0.25, 0.5, 0.5), radius=0.2)
    b = uv_sphere(6, 8, center=(0.75, 0.5, 0.5), radius=0.2)
    return normalize_to_canonical(merge([a, b]), margin=0.05)


@pytest.fixture
def cameras64():
    return default_cameras(64)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo acceptance verdict lines after the run, outside output capture."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "VERDICTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


def full_quad(z: float = 0.5) -> TriMesh:
    """Two triangles covering the whole canonical cross-section at height z."""
    v = np.array([[0, 0, z], [1, 0, z], [1, 1, z], [0, 1, z]], dtype=float)
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))
