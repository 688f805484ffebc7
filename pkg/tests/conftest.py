import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from sgfloc.camera import CameraModel, default_camera, default_virtual_camera


@pytest.fixture
def cam() -> CameraModel:
    return default_camera()


@pytest.fixture
def vc():
    return default_virtual_camera()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ray_plane_ground(u, v, cam: CameraModel, psi: float = 0.0, theta: float = 0.0):
    """Independent oracle: cast the pixel ray of a tilted, rolled pinhole onto z = 0.

    World axes: x forward, y left, z up, camera at height h_c. The camera is
    tilted down by alpha + theta; image axes are right and down. A roll psi
    turns the image axes about the optical axis so that metric image
    coordinates rotate by -psi before the flat-ground model applies.
    Returns (x, y) with NaN where the ray misses the ground ahead.
    """
    tau = cam.alpha + theta
    fwd = np.array([np.cos(tau), 0.0, -np.sin(tau)])
    right = np.array([0.0, -1.0, 0.0])
    down = np.cross(fwd, right)
    rot = Rotation.from_rotvec(-psi * fwd)
    right_r, down_r = rot.apply(right), rot.apply(down)
    u0, v0 = cam.principal_point
    c = (np.asarray(u, float) - u0) * cam.pixel_pitch
    r = (np.asarray(v, float) - v0) * cam.pixel_pitch
    d = (c[..., None] * right_r + r[..., None] * down_r + cam.f_m * fwd)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -cam.h_c / d[..., 2]
    t = np.where(t > 0, t, np.nan)
    return t * d[..., 0], t * d[..., 1]


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
