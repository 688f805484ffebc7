"""Synthetic ground-marking world, front-camera mask renderer and odometry.

The world is a plane of painted markings. The robot's attitude is the local
ground attitude (sustained slopes) plus transient motion (bumps, rough
pavement); only the transient part tilts the camera relative to the ground
it sees, which is what motion compensation has to recover.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .camera import (
    CameraModel,
    MotionState,
    VirtualCamera,
    default_camera,
    default_virtual_camera,
    ground_to_bev,
    ground_to_image_homography,
    ground_to_pixel,
)
from .geometry import Pose6, Se2, relative_arrays, compose_arrays

KINDS = ("delivery", "reverse_slope", "large_loop")


@dataclass
class MarkingTemplate:
    """Painted marking: polygons in local meters placed at a world pose."""

    name: str
    polygons: list
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    symmetric: bool = False
    id: int = -1

    @property
    def pose(self) -> Se2:
        return Se2(self.x, self.y, self.yaw)

    @cached_property
    def radius(self) -> float:
        return float(max(np.hypot(*np.asarray(p).T).max() for p in self.polygons))

    def world_polygons(self) -> list[np.ndarray]:
        return [self.pose.apply(p) for p in self.polygons]

    def placed(self, x: float, y: float, yaw: float, id: int) -> "MarkingTemplate":
        return MarkingTemplate(self.name, self.polygons, x, y, yaw, self.symmetric, id)

    def boundary(self, step: float = 0.02) -> np.ndarray:
        """Densely sampled polygon edges, local frame."""
        out = []
        for p in self.polygons:
            q = np.vstack([p, p[:1]])
            for a, b in zip(q[:-1], q[1:]):
                n = max(2, int(np.ceil(np.hypot(*(b - a)) / step)) + 1)
                out.append(a + np.linspace(0, 1, n)[:, None] * (b - a))
        return np.vstack(out)


def _centered(poly) -> np.ndarray:
    return np.asarray(poly, float)


def arrow(length: float = 1.6, width: float = 0.7, shaft: float = 0.25, head: float = 0.6) -> MarkingTemplate:
    h, s = width / 2, shaft / 2
    x0, x1, x2 = -length / 2, length / 2 - head, length / 2
    poly = [(x0, -s), (x1, -s), (x1, -h), (x2, 0.0), (x1, h), (x1, s), (x0, s)]
    return MarkingTemplate("arrow", [_centered(poly)])


def turn_arrow(length: float = 1.5, width: float = 0.9) -> MarkingTemplate:
    """Straight-and-left arrow: no mirror or rotational symmetry."""
    s = 0.12
    poly = [(-length / 2, -s), (0.2, -s), (0.2, -0.1), (0.55, -0.1), (0.55, -0.35),
            (length / 2, 0.0), (0.55, 0.35), (0.55, 0.1), (0.1, 0.1), (0.1, width / 2 - 0.2),
            (0.3, width / 2 - 0.2), (-0.05, width / 2), (-0.4, width / 2 - 0.2), (-0.2, width / 2 - 0.2),
            (-0.2, s), (-length / 2, s)]
    return MarkingTemplate("turn_arrow", [_centered(poly)])


def l_shape(a: float = 1.5, b: float = 1.1, t: float = 0.45) -> MarkingTemplate:
    poly = np.array([(0, 0), (a, 0), (a, t), (t, t), (t, b), (0, b)], float)
    c = np.array([a * t * a / 2 + (b - t) * t * t / 2, a * t * t / 2 + (b - t) * t * (t + b) / 2])
    c /= a * t + (b - t) * t
    return MarkingTemplate("l_shape", [poly - c])


def diamond(length: float = 1.8, width: float = 0.8) -> MarkingTemplate:
    poly = [(-length / 2, 0), (0, -width / 2), (length / 2, 0), (0, width / 2)]
    return MarkingTemplate("diamond", [_centered(poly)], symmetric=True)


def disk(radius: float = 0.9, n: int = 72) -> MarkingTemplate:
    a = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return MarkingTemplate("disk", [radius * np.column_stack([np.cos(a), np.sin(a)])], symmetric=True)


def stripe(length: float = 9.0, width: float = 0.15) -> MarkingTemplate:
    poly = [(-length / 2, -width / 2), (length / 2, -width / 2), (length / 2, width / 2), (-length / 2, width / 2)]
    return MarkingTemplate("stripe", [_centered(poly)], symmetric=True)


def glyph(rng: np.random.Generator, length: int = 14, cols: int = 6, rows: int = 5, cell: float = 0.2,
          straight: float = 0.6, min_self_distance: float = 0.25) -> MarkingTemplate:
    """Text-like stroke: a self-avoiding random walk of square cells."""
    steps = [(1, 0), (0, 1), (-1, 0), (0, -1)]
    while True:
        cur = (int(rng.integers(cols)), int(rng.integers(rows)))
        path = [cur]
        heading = int(rng.integers(4))
        for _ in range(50 * length):
            if len(path) == length:
                break
            if rng.random() > straight:
                heading = (heading + (1 if rng.random() < 0.5 else 3)) % 4
            dx, dy = steps[heading]
            nxt = (cur[0] + dx, cur[1] + dy)
            if 0 <= nxt[0] < cols and 0 <= nxt[1] < rows and nxt not in path:
                path.append(nxt)
                cur = nxt
        if len(path) < length:
            continue
        occ = np.array(path, float)
        rel2 = np.round((occ - occ.mean(axis=0)) * 2).astype(int)
        keys = {tuple(r) for r in rel2}
        # Reject strokes that map onto themselves under a half or quarter turn.
        if keys == {(-x, -y) for x, y in keys} or keys == {(-y, x) for x, y in keys}:
            continue
        e = 0.002
        polys = []
        for ox, oy in occ - occ.mean(axis=0):
            x0, y0 = ox * cell - cell / 2 - e, oy * cell - cell / 2 - e
            x1, y1 = x0 + cell + 2 * e, y0 + cell + 2 * e
            polys.append(np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]))
        tpl = MarkingTemplate("glyph", polys)
        # Near-symmetric strokes would be excluded from loop closure; keep a margin.
        if _self_distance(_descriptor(tpl)) >= min_self_distance:
            return tpl


def template_suite(seed: int = 0) -> list[MarkingTemplate]:
    rng = np.random.default_rng(seed)
    return [arrow(), turn_arrow(), l_shape(), glyph(rng), glyph(rng), disk(), diamond()]


@dataclass
class OdometryNoise:
    sigma_x: float = 0.004
    sigma_y: float = 0.004
    sigma_yaw: float = 0.0015

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_yaw) < 0:
            raise ValueError("noise sigmas must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma_x, self.sigma_y, self.sigma_yaw])


@dataclass
class Scenario:
    kind: str
    seed: int
    poses: np.ndarray  # (n, 7): t, x, y, z, roll, pitch, yaw
    ground: np.ndarray  # (n, 2): local ground roll, pitch
    markings: list[MarkingTemplate]
    noise: OdometryNoise = field(default_factory=OdometryNoise)
    camera: CameraModel = field(default_factory=default_camera)
    vcam: VirtualCamera = field(default_factory=default_virtual_camera)
    frame_period: float = 0.1

    def __post_init__(self):
        if np.any(np.diff(self.poses[:, 0]) <= 0):
            raise ValueError("timestamps must increase strictly")

    def __len__(self) -> int:
        return len(self.poses)

    def pose6(self, t: int) -> Pose6:
        return Pose6(*self.poses[t])

    def planar(self) -> np.ndarray:
        return self.poses[:, [1, 2, 6]]

    def motion_state(self, t: int) -> MotionState:
        return MotionState(psi=self.poses[t, 4] - self.ground[t, 0], theta=self.poses[t, 5] - self.ground[t, 1])

    @property
    def path_length(self) -> float:
        xy = self.poses[:, 1:3]
        return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))


# Path generation -----------------------------------------------------------

def drive(segments, v: float = 1.0, spin_rate: float = 0.6, dt: float = 0.1, start: Se2 = Se2()):
    """Sample a piecewise path at fixed time steps.

    ``segments``: ("line", length) | ("arc", radius, angle) | ("spin", angle).
    Returns (poses (n, 3), arc length (n,), segment index (n,)).
    """
    # Exact piecewise evaluation: each segment knows its duration and start pose.
    plan = []
    pose, s0, t0 = start, 0.0, 0.0
    for k, seg in enumerate(segments):
        if seg[0] == "line":
            dur, length = seg[1] / v, seg[1]
        elif seg[0] == "arc":
            length = abs(seg[1] * seg[2])
            dur = length / v
        elif seg[0] == "spin":
            dur, length = abs(seg[1]) / spin_rate, 0.0
        else:
            raise ValueError(f"unknown segment {seg[0]}")
        plan.append((seg, pose, s0, t0, dur))
        pose = pose @ _segment_delta(seg, 1.0)
        s0 += length
        t0 += dur
    total = t0
    times = np.arange(0.0, total + 1e-9, dt)
    out, arc, idx = [], [], []
    k = 0
    for t in times:
        while k < len(plan) - 1 and t >= plan[k][3] + plan[k][4]:
            k += 1
        seg, p0, s_start, t_start, dur = plan[k]
        frac = min(max((t - t_start) / dur, 0.0), 1.0) if dur > 0 else 1.0
        p = p0 @ _segment_delta(seg, frac)
        out.append(p.as_array())
        ds = 0.0 if seg[0] == "spin" else frac * (seg[1] if seg[0] == "line" else abs(seg[1] * seg[2]))
        arc.append(s_start + ds)
        idx.append(k)
    return np.array(out), np.array(arc), np.array(idx)


def _segment_delta(seg, frac: float) -> Se2:
    if seg[0] == "line":
        return Se2(seg[1] * frac, 0.0, 0.0)
    if seg[0] == "arc":
        r, ang = seg[1], seg[2] * frac
        sgn = np.sign(seg[2]) if seg[2] != 0 else 1.0
        return Se2(r * np.sin(abs(ang)), sgn * r * (1 - np.cos(ang)), ang)
    return Se2(0.0, 0.0, seg[1] * frac)


def _reverse(segments):
    out = []
    for seg in reversed(segments):
        if seg[0] == "arc":
            out.append(("arc", seg[1], -seg[2]))
        else:
            out.append(seg)
    return out


def _loop(long: float, short: float, r: float):
    q = np.pi / 2
    return [("line", long), ("arc", r, q), ("line", short), ("arc", r, q),
            ("line", long), ("arc", r, q), ("line", short), ("arc", r, q)]


def _raised_cosine(x: np.ndarray, width: float) -> np.ndarray:
    inside = (x >= 0) & (x <= width)
    return np.where(inside, 0.5 * (1 - np.cos(2 * np.pi * np.clip(x, 0, width) / width)), 0.0)


def _ramp(x: np.ndarray, a: float, b: float, ramp: float) -> np.ndarray:
    """1 on [a + ramp, b - ramp], linear ramps at both ends, 0 outside."""
    up = np.clip((x - a) / ramp, 0, 1)
    down = np.clip((b - x) / ramp, 0, 1)
    return np.minimum(up, down)


@dataclass
class _Layout:
    segments: list
    lap_segments: int
    marks_at: list  # (segment index in lap, offset along segment)
    slope: Optional[tuple] = None  # (segment index in lap, start, end, angle)
    bumps: list = field(default_factory=list)  # (segment index in lap, offset)
    vib_pitch: float = 0.0
    vib_roll: float = 0.0


def _layout(kind: str) -> _Layout:
    if kind == "delivery":
        out = [("line", 30.0), ("arc", 6.0, np.pi / 2), ("line", 25.0)]
        segs = out + [("spin", np.pi)] + _reverse(out)
        marks = [(0, 9.0), (0, 15.0), (0, 21.0), (2, 9.0), (2, 16.0), (0, 26.5)]
        return _Layout(segs, 3, marks, bumps=[(0, 4.5), (2, 3.0)], vib_pitch=0.008, vib_roll=0.004)
    if kind == "reverse_slope":
        # The first lap runs on past its start so that it closes on itself.
        lap = _loop(40.0, 20.0, 5.0)
        fwd = lap + [("line", 26.0)]
        segs = fwd + [("spin", np.pi)] + _reverse(fwd)
        marks = [(0, 8.0), (0, 16.0), (0, 24.0), (0, 32.0), (2, 10.0), (4, 16.0), (4, 24.0), (6, 10.0)]
        return _Layout(segs, 8, marks, slope=(4, 0.5, 39.5, 0.06), bumps=[(2, 3.5), (6, 4.5)],
                       vib_pitch=0.04, vib_roll=0.02)
    if kind == "large_loop":
        lap = _loop(50.0, 25.0, 5.0)
        segs = lap + lap + [("spin", np.pi)] + _reverse(lap)
        marks = [(0, float(s)) for s in np.linspace(8, 42, 8)] + [(2, 8.0), (2, 17.0)]
        marks += [(4, float(s)) for s in np.linspace(8, 42, 8)] + [(6, 8.0), (6, 17.0)]
        return _Layout(segs, 8, marks, slope=(4, 1.0, 49.0, 0.03), bumps=[(2, 4.0), (6, 4.0)],
                       vib_pitch=0.01, vib_roll=0.005)
    raise ValueError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")


def _lap_position(kind: str, layout: _Layout, seg_index: np.ndarray, arc: np.ndarray, segs_start: np.ndarray):
    """Map each frame to (segment-in-lap, offset along it, direction sign)."""
    n_lap = layout.lap_segments
    lap_idx = np.empty_like(seg_index)
    offset = np.empty_like(arc)
    direction = np.ones_like(arc)
    lengths = {}
    for k, seg in enumerate(layout.segments):
        lengths[k] = seg[1] if seg[0] == "line" else (abs(seg[1] * seg[2]) if seg[0] == "arc" else 0.0)
    spin = [k for k, s in enumerate(layout.segments) if s[0] == "spin"]
    spin_at = spin[0] if spin else len(layout.segments)
    for f, k in enumerate(seg_index):
        along = arc[f] - segs_start[k]
        if k < spin_at:
            lap_idx[f] = k % n_lap
            offset[f] = along
        elif k == spin_at:
            lap_idx[f] = -1
            offset[f] = 0.0
        else:
            lap_idx[f] = (2 * spin_at - k) % n_lap
            offset[f] = lengths[k] - along
            direction[f] = -1.0
    return lap_idx, offset, direction


def make_scenario(kind: str, seed: int = 0, noise: Optional[OdometryNoise] = None,
                  camera: Optional[CameraModel] = None, vcam: Optional[VirtualCamera] = None,
                  dt: float = 0.1, speed: float = 1.0) -> Scenario:
    """Seeded scenario generator for the three sequence types."""
    layout = _layout(kind)
    rng = np.random.default_rng(seed)
    planar, arc, seg_index = drive(layout.segments, v=speed, dt=dt)
    # Segment start arc lengths.
    segs_start = np.zeros(len(layout.segments))
    acc = 0.0
    for k, seg in enumerate(layout.segments):
        segs_start[k] = acc
        acc += seg[1] if seg[0] == "line" else (abs(seg[1] * seg[2]) if seg[0] == "arc" else 0.0)
    lap_idx, offset, direction = _lap_position(kind, layout, seg_index, arc, segs_start)
    n = len(planar)
    t = np.arange(n) * dt

    ground_pitch = np.zeros(n)
    if layout.slope is not None:
        k, a, b, ang = layout.slope
        on = lap_idx == k
        ground_pitch[on] = direction[on] * ang * _ramp(offset[on], a, b, 3.0)
    bump = np.zeros(n)
    for k, off in layout.bumps:
        on = lap_idx == k
        # Both axles: a nose-up then nose-down pulse as the robot crosses.
        x = direction[on] * (offset[on] - off) + 0.4
        bump[on] += -0.06 * _raised_cosine(x, 0.4) + 0.06 * _raised_cosine(x - 0.4, 0.4)
    phase = rng.uniform(0, 2 * np.pi, 4)
    vib_pitch = layout.vib_pitch * (0.75 * np.sin(2 * np.pi * 0.8 * t + phase[0])
                                    + 0.25 * np.sin(2 * np.pi * 1.9 * t + phase[1]))
    vib_roll = layout.vib_roll * np.sin(2 * np.pi * 0.55 * t + phase[2])
    pitch = ground_pitch + bump + vib_pitch
    roll = vib_roll
    step = np.r_[0.0, np.hypot(*np.diff(planar[:, :2], axis=0).T)]
    z = -np.cumsum(np.sin(ground_pitch) * step)

    templates = _pick_templates(kind, len(layout.marks_at), rng)
    first_lap = (lap_idx >= 0) & (direction > 0) & (seg_index < layout.lap_segments)
    markings = []
    for mid, ((k, off), tpl) in enumerate(zip(layout.marks_at, templates)):
        sel = np.nonzero(first_lap & (lap_idx == k))[0]
        f = sel[np.argmin(np.abs(offset[sel] - off))]
        base = Se2.from_array(planar[f]) @ Se2(off - offset[f], 0.0, 0.0)
        lateral = rng.uniform(-0.3, 0.3)
        pos = base @ Se2(0.0, lateral, 0.0)
        yaw = pos.yaw if tpl.name == "stripe" else rng.uniform(-np.pi, np.pi)
        markings.append(tpl.placed(pos.x, pos.y, yaw, mid))

    poses = np.column_stack([t, planar[:, 0], planar[:, 1], z, roll, pitch, planar[:, 2]])
    ground = np.column_stack([np.zeros(n), ground_pitch])
    return Scenario(kind, seed, poses, ground, markings, noise or OdometryNoise(),
                    camera or default_camera(), vcam or default_virtual_camera(), dt)


def template_points(tpl: MarkingTemplate, pitch: float = 0.02) -> np.ndarray:
    """Grid samples (cell centers) covering the template, local frame."""
    r = tpl.radius + pitch
    n = int(np.ceil(2 * r / pitch)) + 1
    grid = np.zeros((n, n), dtype=bool)
    for p in tpl.polygons:
        scanline_fill(grid, (p[:, 0] + r) / pitch, (p[:, 1] + r) / pitch)
    iy, ix = np.nonzero(grid)
    return np.column_stack([ix * pitch - r, iy * pitch - r])


def _descriptor(tpl: MarkingTemplate):
    from .description import build_descriptor, make_points

    return build_descriptor(make_points(template_points(tpl), voxel=None))


def _self_distance(d) -> float:
    """Smallest descriptor distance to itself under a non-trivial rotation."""
    from .description import shift_distances

    lo = d.n_sectors // 6
    return float(shift_distances(d, d)[lo:d.n_sectors - lo + 1].min())


def _distinct(d, chosen: list, min_distance: float) -> bool:
    from .description import best_shift

    return all(best_shift(d, g)[1] >= min_distance for g in chosen)


def _pick_templates(kind: str, count: int, rng: np.random.Generator,
                    min_distance: float = 0.35, max_tries: int = 1000) -> list[MarkingTemplate]:
    """Scenario marking set; glyphs are redrawn until unlike every earlier pick."""
    if kind == "delivery":
        base = [arrow(), None, l_shape(), None, disk(), stripe()]
    elif kind == "reverse_slope":
        base = [None, turn_arrow(), None, disk(), l_shape(), None, arrow(), None]
    else:
        base = [arrow(), turn_arrow(), l_shape(), disk(), stripe(), diamond()]
        base += [None] * (count - len(base))
        base = [base[i] for i in rng.permutation(len(base))]
    chosen = [_descriptor(t) for t in base if t is not None and t.name != "stripe"]
    out = []
    for t in base[:count]:
        if t is None:
            for _ in range(max_tries):
                t = glyph(rng)
                d = _descriptor(t)
                if _distinct(d, chosen, min_distance):
                    break
            chosen.append(d)
        out.append(t)
    return out


# Rendering --------------------------------------------------------------------

def _visible_markings(s: Scenario, t: int, far: float = 20.0):
    inv = Se2(*s.poses[t, [1, 2, 6]]).inverse()
    for mk in s.markings:
        c = inv.apply(np.array([mk.x, mk.y]))
        r = mk.radius
        if c[0] + r < 0.5 or c[0] - r > far or abs(c[1]) - r > far:
            continue
        yield mk, inv @ mk.pose


def clip_half_plane(poly: np.ndarray, x_min: float) -> np.ndarray:
    """Clip a polygon to x >= x_min (Sutherland-Hodgman, one edge)."""
    out = []
    n = len(poly)
    for k in range(n):
        a, b = poly[k], poly[(k + 1) % n]
        ina, inb = a[0] >= x_min, b[0] >= x_min
        if ina:
            out.append(a)
        if ina != inb:
            f = (x_min - a[0]) / (b[0] - a[0])
            out.append(a + f * (b - a))
    return np.array(out).reshape(-1, 2)


def _spans(u: np.ndarray, v: np.ndarray, h: int, w: int):
    """Row index and [c0, c1) column spans of pixel centers inside (u, v)."""
    if u.max() < 0 or v.max() < 0 or u.min() > w - 1 or v.min() > h - 1:
        return None
    r0 = max(int(np.ceil(v.min())), 0)
    r1 = min(int(np.floor(v.max())), h - 1)
    if r1 < r0:
        return None
    y = np.arange(r0, r1 + 1, dtype=float)[:, None]
    ua, va = u, v
    ub, vb = np.roll(u, -1), np.roll(v, -1)
    cross = ((va <= y) & (y < vb)) | ((vb <= y) & (y < va))
    with np.errstate(divide="ignore", invalid="ignore"):
        x = ua + (y - va) * (ub - ua) / (vb - va)
    x = np.sort(np.where(cross, x, np.nan), axis=1)
    start, end = x[:, 0::2], x[:, 1::2]
    n = min(start.shape[1], end.shape[1])
    start, end = start[:, :n], end[:, :n]
    ok = np.isfinite(start) & np.isfinite(end)
    rows = np.broadcast_to(np.arange(r0, r1 + 1)[:, None], ok.shape)[ok]
    c0 = np.clip(np.ceil(start[ok]), 0, w).astype(np.int64)
    c1 = np.clip(np.ceil(end[ok]), 0, w).astype(np.int64)
    return rows, c0, c1


def _fill_spans(mask: np.ndarray, spans: list) -> None:
    """OR the union of all spans into ``mask`` with one difference array."""
    spans = [s for s in spans if s is not None]
    if not spans:
        return
    h, w = mask.shape
    rows = np.concatenate([s[0] for s in spans])
    c0 = np.concatenate([s[1] for s in spans])
    c1 = np.concatenate([s[2] for s in spans])
    r0, r1 = int(rows.min()), int(rows.max())
    a, b = int(c0.min()), int(c1.max())
    if b <= a:
        return
    diff = np.zeros((r1 - r0 + 1, b - a + 1), dtype=np.int32)
    np.add.at(diff, (rows - r0, c0 - a), 1)
    np.add.at(diff, (rows - r0, c1 - a), -1)
    mask[r0:r1 + 1, a:b] |= np.cumsum(diff[:, :b - a], axis=1) > 0


def scanline_fill(mask: np.ndarray, u: np.ndarray, v: np.ndarray) -> None:
    """Set pixels whose centers lie inside polygon (u, v), even-odd rule."""
    h, w = mask.shape
    _fill_spans(mask, [_spans(np.asarray(u, float), np.asarray(v, float), h, w)])


def render_mask(s: Scenario, t: int, near: float = 0.5) -> np.ndarray:
    """Binary front-camera mask of all markings at frame ``t``.

    Ground-to-image is a homography, so each polygon is clipped in front of
    the camera, projected vertex-wise and scan-filled at pixel centers.
    Overlapping polygons are filled as a union.
    """
    cam = s.camera
    w, h = cam.image_size
    mask = np.zeros((h, w), dtype=bool)
    g = ground_to_image_homography(cam, s.motion_state(t))
    spans = []
    for mk, local in _visible_markings(s, t):
        for p in mk.polygons:
            q = local.apply(p)
            if q[:, 0].min() < near:
                q = clip_half_plane(q, near)
            if len(q) < 3:
                continue
            uvw = g @ np.vstack([q.T, np.ones(len(q))])
            spans.append(_spans(uvw[0] / uvw[2], uvw[1] / uvw[2], h, w))
    _fill_spans(mask, spans)
    return mask


def render_bev_footprint(s: Scenario, t: int) -> np.ndarray:
    """Orthographic BEV rendering of the markings (no camera involved)."""
    vc = s.vcam
    w, h = vc.bev_size
    out = np.zeros((h, w), dtype=bool)
    for mk, local in _visible_markings(s, t):
        for p in mk.polygons:
            q = local.apply(p)
            u, v = ground_to_bev(q[:, 0], q[:, 1], vc)
            scanline_fill(out, u, v)
    return out


def noisy_odometry(s: Scenario, seed: int = 0, noise: Optional[OdometryNoise] = None) -> np.ndarray:
    """Absolute integrated odometry, rows (t, x, y, z, roll, pitch, yaw).

    Planar relative motions get zero-mean Gaussian noise per step; height,
    roll and pitch pass through (attitude comes from an IMU).
    """
    noise = noise or s.noise
    gt = s.planar()
    rel = relative_arrays(gt[:-1], gt[1:])
    rng = np.random.default_rng(seed)
    rel = rel + rng.normal(0.0, 1.0, rel.shape) * noise.as_array()
    out = np.empty_like(gt)
    out[0] = gt[0]
    cur = gt[:1]
    for k in range(len(rel)):
        cur = compose_arrays(cur, rel[k:k + 1])
        out[k + 1] = cur[0]
    odo = s.poses.copy()
    odo[:, [1, 2, 6]] = out
    return odo


# Ground-truth annotation ---------------------------------------------------

@dataclass
class Visit:
    marking: int
    start: int
    end: int
    visible_frames: list
    heading: float
    expected: bool


@dataclass
class Annotations:
    markings: list  # dicts: id, name, x, y, yaw, symmetric
    visits: list[Visit]
    gt_poses: np.ndarray  # (n, 3)

    def to_json(self) -> dict:
        return {
            "markings": self.markings,
            "visits": [
                {"marking": v.marking, "start": v.start, "end": v.end, "heading": round(v.heading, 9),
                 "expected": v.expected, "visible_frames": v.visible_frames}
                for v in self.visits
            ],
        }

    @classmethod
    def from_json(cls, data: dict, gt_poses: np.ndarray) -> "Annotations":
        visits = [Visit(d["marking"], d["start"], d["end"], d["visible_frames"], d["heading"], d["expected"])
                  for d in data["visits"]]
        return cls(data["markings"], visits, gt_poses)


def fully_visible(s: Scenario, mk: MarkingTemplate, t: int, margin: float = 3.0) -> bool:
    """Whether the whole marking lands inside the usable BEV region at frame t."""
    local = Se2(*s.poses[t, [1, 2, 6]]).inverse() @ mk.pose
    b = local.apply(mk.boundary())
    if b[:, 0].min() < 0.3:
        return False
    vc, cam = s.vcam, s.camera
    ub, vb = ground_to_bev(b[:, 0], b[:, 1], vc)
    bw, bh = vc.bev_size
    if ub.min() < margin or vb.min() < margin or ub.max() > bw - 1 - margin or vb.max() > bh - 1 - margin:
        return False
    u, v = ground_to_pixel(b[:, 0], b[:, 1], cam, s.motion_state(t))
    w, h = cam.image_size
    if not np.all(np.isfinite(u)):
        return False
    return bool(u.min() >= margin and v.min() >= margin and u.max() <= w - 1 - margin and v.max() <= h - 1 - margin)


def annotate(s: Scenario, min_visible: int = 3, gap: int = 10) -> Annotations:
    planar = s.planar()
    visits = []
    for mk in s.markings:
        rel = relative_arrays(planar, np.repeat([[mk.x, mk.y, 0.0]], len(planar), axis=0))
        near = np.nonzero((rel[:, 0] > -1.0) & (rel[:, 0] < 10.0) & (np.abs(rel[:, 1]) < 5.0))[0]
        if near.size == 0:
            continue
        runs = np.split(near, np.nonzero(np.diff(near) > gap)[0] + 1)
        for run in runs:
            vis = [int(f) for f in run if fully_visible(s, mk, int(f))]
            mid = vis[len(vis) // 2] if vis else int(run[len(run) // 2])
            visits.append(Visit(mk.id, int(run[0]), int(run[-1]), vis, float(planar[mid, 2]),
                                len(vis) >= min_visible))
    visits.sort(key=lambda v: (v.start, v.marking))
    marks = [{"id": m.id, "name": m.name, "x": round(m.x, 9), "y": round(m.y, 9), "yaw": round(m.yaw, 9),
              "symmetric": m.symmetric} for m in s.markings]
    return Annotations(marks, visits, planar)
