import numpy as np
import pytest

from openground.scene import CameraView, PointCloud, Scene
from openground.synth import cabinet_family_spec, generate, look_at


def pinhole(view_id=0, width=100, height=100, f=100.0, rotation=None, translation=(0, 0, 0), image=False):
    rot = np.eye(3) if rotation is None else rotation
    img = np.zeros((height, width, 3), np.uint8) if image else None
    return CameraView(view_id, width, height, f, f, width / 2, height / 2, rot, translation, img)


def random_scene(rng, n_views=6, n_points=150, size=64, image=False):
    """Points in a unit cube, cameras on a sphere looking at its centre."""
    pts = rng.random((n_points, 3))
    views = []
    for k in range(n_views):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        pos = 0.5 + d * (1.6 + rng.random())
        v = look_at(pos, (0.5, 0.5, 0.5), size, size, size * 0.8, size * 0.8, k)
        if image:
            v.image = np.zeros((size, size, 3), np.uint8)
        views.append(v)
    return Scene(PointCloud(pts), views)


@pytest.fixture(scope="session")
def cabinets():
    return generate(cabinet_family_spec(0, max_queries=8), seed=0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
