"""Motion-compensated inverse perspective mapping.

Coordinate conventions
----------------------
* Front image: pixel ``(u, v)`` with ``u`` to the right and ``v`` downward.
  The metric image frame is ``c = (u - u0) * pixel_pitch`` (right) and
  ``r = (v - v0) * pixel_pitch`` (down), so that a larger ``r`` looks more
  steeply at the ground.
* Ground frame: ``x`` forward of the camera center, ``y`` to the left, on the
  plane ``z = 0``; the camera sits at height ``h_c``.
* BEV image: a nadir-looking virtual camera at ``(X_c, 0, Z_c)`` with
  intrinsics ``K_v``. Forward is image-up and left is image-left.

The camera is tilted down by ``alpha``; a motion state adds a pitch ``theta``
(nose down positive) about the lateral axis and a roll ``psi`` about the
optical axis.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyQueue, HorizonError
from .geometry import Pose6


@dataclass(frozen=True)
class CameraModel:
    f_m: float
    h_c: float
    alpha: float
    image_size: tuple[int, int]
    pixel_pitch: float
    principal_point: tuple[float, float]

    def __post_init__(self):
        if not self.h_c > 0:
            raise ValueError("h_c must be positive")
        if not 0 < self.alpha < np.pi / 2:
            raise ValueError("alpha must lie in (0, pi/2)")
        if not self.f_m > 0 or not self.pixel_pitch > 0:
            raise ValueError("f_m and pixel_pitch must be positive")
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        object.__setattr__(self, "principal_point", tuple(float(s) for s in self.principal_point))

    @property
    def focal_px(self) -> float:
        return self.f_m / self.pixel_pitch

    @property
    def K(self) -> np.ndarray:
        f = self.focal_px
        u0, v0 = self.principal_point
        return np.array([[f, 0.0, u0], [0.0, f, v0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class VirtualCamera:
    K_v: tuple
    X_c: float
    Z_c: float
    bev_size: tuple[int, int]

    def __post_init__(self):
        k = np.asarray(self.K_v, dtype=float)
        if k.shape != (3, 3):
            raise ValueError("K_v must be 3x3")
        if not (k[0, 0] > 0 and k[1, 1] > 0 and np.allclose(np.tril(k, -1), 0.0)):
            raise ValueError("K_v must be upper-triangular with positive focal entries")
        if not self.Z_c > 0:
            raise ValueError("Z_c must be positive")
        object.__setattr__(self, "K_v", tuple(tuple(float(a) for a in row) for row in k))
        object.__setattr__(self, "bev_size", tuple(int(s) for s in self.bev_size))

    @property
    def K(self) -> np.ndarray:
        return np.array(self.K_v)

    @property
    def remap(self) -> np.ndarray:
        """Fixed front-to-virtual axis remap."""
        return np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, self.X_c], [0.0, 0.0, self.Z_c]])

    @property
    def resolution(self) -> float:
        """Meters per BEV pixel along the forward axis."""
        return self.Z_c / self.K[1, 1]


@dataclass(frozen=True)
class MotionState:
    psi: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if abs(self.psi) >= np.pi / 2 or abs(self.theta) >= np.pi / 2:
            raise ValueError("roll/pitch change must be below pi/2 in magnitude")


FLAT = MotionState()


def default_camera() -> CameraModel:
    """640x480 front camera, 1.5 m high, looking 0.49 rad down."""
    pitch = 3e-6
    return CameraModel(
        f_m=750 * pitch,
        h_c=1.5,
        alpha=0.49,
        image_size=(640, 480),
        pixel_pitch=pitch,
        principal_point=(319.5, 239.5),
    )


def default_virtual_camera(
    forward_range: tuple[float, float] = (1.5, 5.5),
    lateral_width: float = 4.0,
    bev_size: tuple[int, int] = (400, 400),
    Z_c: float = 10.0,
) -> VirtualCamera:
    """Nadir virtual camera centered over the middle of ``forward_range``."""
    w, h = bev_size
    near, far = forward_range
    fu = Z_c * w / lateral_width
    fv = Z_c * h / (far - near)
    K = [[fu, 0.0, (w - 1) / 2.0], [0.0, fv, (h - 1) / 2.0], [0.0, 0.0, 1.0]]
    return VirtualCamera(K_v=K, X_c=(near + far) / 2.0, Z_c=Z_c, bev_size=bev_size)


def roll_compensate(c, r, psi):
    """Rotate metric image coordinates by ``-psi``."""
    cs, sn = np.cos(-psi), np.sin(-psi)
    return cs * c - sn * r, sn * c + cs * r


def image_to_metric(u, v, cam: CameraModel):
    u0, v0 = cam.principal_point
    return (np.asarray(u, float) - u0) * cam.pixel_pitch, (np.asarray(v, float) - v0) * cam.pixel_pitch


def pixel_to_ground(u, v, cam: CameraModel, m: MotionState = FLAT, invalid: str = "raise"):
    """Project front-image pixels onto the ground plane.

    Returns ``(x, y)`` in meters. Pixels whose ray misses the ground ahead
    raise :class:`HorizonError`, or become NaN when ``invalid="nan"``.
    """
    c, r = image_to_metric(u, v, cam)
    c_psi, r_psi = roll_compensate(c, r, m.psi)
    phi = np.arctan(r_psi / cam.f_m)
    depression = cam.alpha + phi + m.theta
    bad = (depression <= 0) | (depression >= np.pi)
    if np.any(bad):
        if invalid == "raise":
            raise HorizonError("pixel ray does not intersect the ground ahead")
        depression = np.where(bad, np.nan, depression)
    x = cam.h_c / np.tan(depression)
    # Exact lateral offset of the rotated pinhole: range / f_m scaled by cos(phi).
    y = -(c_psi / cam.f_m) * cam.h_c * np.cos(phi) / np.sin(depression)
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def camera_rotation(cam: CameraModel, m: MotionState = FLAT) -> np.ndarray:
    """World-from-camera rotation; camera axes are (right, down, forward)."""
    tau = cam.alpha + m.theta
    st, ct = np.sin(tau), np.cos(tau)
    tilt = np.array([[0.0, -st, ct], [-1.0, 0.0, 0.0], [0.0, -ct, -st]])
    cp, sp = np.cos(-m.psi), np.sin(-m.psi)
    roll = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    return tilt @ roll


def ground_to_image_homography(cam: CameraModel, m: MotionState = FLAT) -> np.ndarray:
    """3x3 map from homogeneous ground ``(x, y, 1)`` to homogeneous pixels."""
    r_cw = camera_rotation(cam, m).T
    center = np.array([0.0, 0.0, cam.h_c])
    return cam.K @ np.column_stack([r_cw[:, 0], r_cw[:, 1], -r_cw @ center])


def ground_to_pixel(x, y, cam: CameraModel, m: MotionState = FLAT):
    """Forward projection; points behind the camera come back as NaN."""
    g = ground_to_image_homography(cam, m)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = g[2, 0] * x + g[2, 1] * y + g[2, 2]
    w = np.where(w > 0, w, np.nan)
    u = (g[0, 0] * x + g[0, 1] * y + g[0, 2]) / w
    v = (g[1, 0] * x + g[1, 1] * y + g[1, 2]) / w
    if np.ndim(u) == 0:
        return float(u), float(v)
    return u, v


def _bev_chain(vc: VirtualCamera) -> np.ndarray:
    return vc.K @ vc.remap


def ground_to_bev(x, y, vc: VirtualCamera):
    h = _bev_chain(vc)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
    v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
    if np.ndim(u) == 0:
        return float(u), float(v)
    return u, v


def bev_to_ground(u, v, vc: VirtualCamera):
    h = np.linalg.inv(_bev_chain(vc))
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    w = h[2, 0] * u + h[2, 1] * v + h[2, 2]
    x = (h[0, 0] * u + h[0, 1] * v + h[0, 2]) / w
    y = (h[1, 0] * u + h[1, 1] * v + h[1, 2]) / w
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def bev_to_image_homography(cam: CameraModel, vc: VirtualCamera, m: MotionState = FLAT) -> np.ndarray:
    return ground_to_image_homography(cam, m) @ np.linalg.inv(_bev_chain(vc))


def _full_roi(vc: VirtualCamera):
    w, h = vc.bev_size
    return (0, 0, w, h)


def _source_lookup(cam, vc, m, roi):
    """Nearest source pixel for every BEV pixel in ``roi``; -1 where unmapped."""
    u0, v0, u1, v1 = roi
    vv, uu = np.mgrid[v0:v1, u0:u1]
    h = bev_to_image_homography(cam, vc, m)
    w = h[2, 0] * uu + h[2, 1] * vv + h[2, 2]
    ok = w > 0
    w = np.where(ok, w, 1.0)
    us = np.floor((h[0, 0] * uu + h[0, 1] * vv + h[0, 2]) / w + 0.5)
    vs = np.floor((h[1, 0] * uu + h[1, 1] * vv + h[1, 2]) / w + 0.5)
    width, height = cam.image_size
    ok &= (us >= 0) & (us < width) & (vs >= 0) & (vs < height)
    us = np.where(ok, us, -1).astype(np.int64)
    vs = np.where(ok, vs, -1).astype(np.int64)
    return us, vs, ok


def bev_valid_mask(cam: CameraModel, vc: VirtualCamera, m: MotionState = FLAT, roi=None) -> np.ndarray:
    """BEV pixels that receive data from inside the front image.

    With ``roi=(u0, v0, u1, v1)`` only that window is computed and returned.
    """
    roi = _full_roi(vc) if roi is None else roi
    return _source_lookup(cam, vc, m, roi)[2]


def _auto_roi(mask: np.ndarray, cam, vc, m):
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    # Homographies map the source bounding rectangle to a convex quad; its
    # bounding box holds every BEV pixel whose nearest source pixel is set.
    cu = np.array([cols[0], cols[-1], cols[0], cols[-1]], float) + np.array([-0.5, 0.5, -0.5, 0.5])
    cv = np.array([rows[0], rows[0], rows[-1], rows[-1]], float) + np.array([-0.5, -0.5, 0.5, 0.5])
    g_inv = np.linalg.inv(bev_to_image_homography(cam, vc, m))
    p = g_inv @ np.vstack([cu, cv, np.ones(4)])
    if np.any(p[2] <= 0):
        return _full_roi(vc)
    ub, vb = p[0] / p[2], p[1] / p[2]
    w, h = vc.bev_size
    u0 = int(np.clip(np.floor(ub.min()) - 1, 0, w))
    u1 = int(np.clip(np.ceil(ub.max()) + 2, 0, w))
    v0 = int(np.clip(np.floor(vb.min()) - 1, 0, h))
    v1 = int(np.clip(np.ceil(vb.max()) + 2, 0, h))
    return (u0, v0, u1, v1)


def warp_mask_to_bev(
    mask: np.ndarray,
    cam: CameraModel,
    vc: VirtualCamera,
    m: MotionState = FLAT,
    return_roi: bool = False,
    return_valid: bool = False,
):
    """Inverse-warp a binary front-camera mask into the BEV image.

    Nearest-neighbour sampling keeps the result binary. Only the BEV window
    that can receive set pixels is evaluated; the output equals a full warp.
    ``return_valid`` adds the validity mask of that window (False outside it),
    which covers every pixel adjacent to a set BEV pixel.
    """
    mask = np.asarray(mask)
    width, height = cam.image_size
    if mask.shape != (height, width):
        raise DimensionMismatch(f"mask shape {mask.shape} != camera image {(height, width)}")
    w, h = vc.bev_size
    bev = np.zeros((h, w), dtype=bool)
    valid = np.zeros((h, w), dtype=bool) if return_valid else None
    roi = _auto_roi(mask, cam, vc, m)
    if roi is not None and roi[2] > roi[0] and roi[3] > roi[1]:
        us, vs, ok = _source_lookup(cam, vc, m, roi)
        sub = np.zeros(us.shape, dtype=bool)
        sub[ok] = mask[vs[ok], us[ok]] > 0
        bev[roi[1]:roi[3], roi[0]:roi[2]] = sub
        if return_valid:
            valid[roi[1]:roi[3], roi[0]:roi[2]] = ok
    else:
        roi = None
    out = (bev,)
    if return_roi:
        out += (roi,)
    if return_valid:
        out += (valid,)
    return out if len(out) > 1 else bev


@dataclass
class PoseQueue:
    """Most recent poses used as the local ground reference."""

    capacity: int = 50
    pitch_gate: float = 0.025
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        self.entries = deque(self.entries, maxlen=self.capacity)

    def push(self, pose: Pose6) -> None:
        self.entries.append(pose)

    def __len__(self) -> int:
        return len(self.entries)

    def reference(self) -> tuple[float, float]:
        """Gated mean (roll, pitch) of the queue."""
        if not self.entries:
            raise EmptyQueue("pose queue is empty")
        rolls = np.array([p.roll for p in self.entries])
        pitches = np.array([p.pitch for p in self.entries])
        keep = np.abs(pitches - pitches.mean()) <= self.pitch_gate
        if not keep.any():
            keep[:] = True
        return float(rolls[keep].mean()), float(pitches[keep].mean())


def compensation_from_queue(q: PoseQueue, current: Pose6) -> MotionState:
    roll_ref, pitch_ref = q.reference()
    return MotionState(psi=current.roll - roll_ref, theta=current.pitch - pitch_ref)
