"""Moment-based selection of one optimal salient ground feature per appearance."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import ndimage

from .camera import VirtualCamera, bev_to_ground
from .errors import EmptyShape

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class BinaryShape:
    """One connected component; ``pixels`` is an (n, 2) int array of (u, v)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        if p.shape[0] == 0:
            raise EmptyShape("shape has no pixels")
        object.__setattr__(self, "pixels", p)

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def bounds(self) -> tuple[int, int, int, int]:
        """(u_min, v_min, u_max, v_max), inclusive."""
        lo = self.pixels.min(axis=0)
        hi = self.pixels.max(axis=0)
        return int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])

    @property
    def centroid(self) -> np.ndarray:
        return self.pixels.mean(axis=0)

    @classmethod
    def from_mask(cls, mask) -> "BinaryShape":
        v, u = np.nonzero(np.asarray(mask))
        return cls(np.column_stack([u, v]))

    def to_mask(self, shape=None) -> np.ndarray:
        if shape is None:
            u1, v1 = self.pixels.max(axis=0)
            shape = (v1 + 1, u1 + 1)
        m = np.zeros(shape, dtype=bool)
        m[self.pixels[:, 1], self.pixels[:, 0]] = True
        return m


def extract_shapes(mask, min_pixels: int = 50) -> list[BinaryShape]:
    """8-connected components of a binary mask, small ones dropped as noise."""
    mask = np.asarray(mask) > 0
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return []
    cols = np.flatnonzero(mask.any(axis=0))
    # Label only the bounding box of set pixels.
    r0, c0 = rows[0], cols[0]
    labels, n = ndimage.label(mask[r0:rows[-1] + 1, c0:cols[-1] + 1], structure=EIGHT_CONNECTED)
    shapes = []
    objects = ndimage.find_objects(labels)
    for k, sl in enumerate(objects, start=1):
        v, u = np.nonzero(labels[sl] == k)
        if v.size < min_pixels:
            continue
        shapes.append(BinaryShape(np.column_stack([u + sl[1].start + c0, v + sl[0].start + r0])))
    return shapes


def central_moments(s: BinaryShape, p: int, q: int) -> float:
    if p + q > 3 or p < 0 or q < 0:
        raise ValueError("moment order p + q must be at most 3")
    d = s.pixels - s.pixels.mean(axis=0)
    return float(np.sum(d[:, 0] ** p * d[:, 1] ** q))


def normalized_moments(s: BinaryShape) -> dict[tuple[int, int], float]:
    """Scale-normalized central moments of orders 2 and 3."""
    d = s.pixels - s.pixels.mean(axis=0)
    du, dv = d[:, 0], d[:, 1]
    pu = [np.ones_like(du), du, du * du, du * du * du]
    pv = [np.ones_like(dv), dv, dv * dv, dv * dv * dv]
    m00 = float(s.size)
    eta = {}
    for p, q in ((2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)):
        eta[(p, q)] = float(np.dot(pu[p], pv[q])) / m00 ** (1 + (p + q) / 2)
    return eta


def hu_vector(s: BinaryShape) -> np.ndarray:
    """Seven Hu invariants as a float array."""
    e = normalized_moments(s)
    n20, n11, n02 = e[(2, 0)], e[(1, 1)], e[(0, 2)]
    n30, n21, n12, n03 = e[(3, 0)], e[(2, 1)], e[(1, 2)], e[(0, 3)]
    a, b = n30 + n12, n21 + n03
    h1 = n20 + n02
    h2 = (n20 - n02) ** 2 + 4 * n11**2
    h3 = (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2
    h4 = a**2 + b**2
    h5 = (n30 - 3 * n12) * a * (a**2 - 3 * b**2) + (3 * n21 - n03) * b * (3 * a**2 - b**2)
    h6 = (n20 - n02) * (a**2 - b**2) + 4 * n11 * a * b
    h7 = (3 * n21 - n03) * a * (a**2 - 3 * b**2) - (n30 - 3 * n12) * b * (3 * a**2 - b**2)
    return np.array([h1, h2, h3, h4, h5, h6, h7])


def hu_distance(a, b) -> float:
    """Sum of absolute differences of raw Hu components."""
    return float(np.sum(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def shape_is_interior(s: BinaryShape, valid: Optional[np.ndarray] = None, image_shape=None) -> bool:
    """True when no pixel of ``s`` touches the image edge or invalid BEV area."""
    if valid is not None:
        image_shape = valid.shape
    h, w = image_shape
    u0, v0, u1, v1 = s.bounds
    if u0 <= 0 or v0 <= 0 or u1 >= w - 1 or v1 >= h - 1:
        return False
    if valid is None:
        return True
    window = valid[v0 - 1:v1 + 2, u0 - 1:u1 + 2]
    local = np.zeros(window.shape, dtype=bool)
    local[s.pixels[:, 1] - v0 + 1, s.pixels[:, 0] - u0 + 1] = True
    touched = ndimage.binary_dilation(local, structure=EIGHT_CONNECTED)
    return bool(np.all(window[touched]))


@dataclass
class TrackEntry:
    frame: int
    shape: BinaryShape
    hu: np.ndarray
    centroid: np.ndarray
    interior: bool


@dataclass
class FeatureTrack:
    id: int
    entries: list[TrackEntry] = field(default_factory=list)
    state: str = "appearing"
    misses: int = 0

    @property
    def frames(self) -> list[int]:
        return [e.frame for e in self.entries]

    @property
    def frame_range(self) -> tuple[int, int]:
        return self.entries[0].frame, self.entries[-1].frame


@dataclass
class SgfCandidate:
    frame: int
    shape: BinaryShape
    hu: np.ndarray
    saliency_score: int
    track_id: int = -1


class FeatureTracker:
    """Associates BEV components across frames into appearance episodes.

    Components are matched to open tracks by centroid distance (``gate``, in
    meters when ``vc`` is given, pixels otherwise). A track closes after
    ``max_gap`` consecutive frames without a match.
    """

    def __init__(
        self,
        vc: Optional[VirtualCamera] = None,
        gate: float = 0.5,
        max_gap: int = 3,
        min_pixels: int = 50,
    ):
        self.vc = vc
        self.gate = gate
        self.max_gap = max_gap
        self.min_pixels = min_pixels
        self.open: list[FeatureTrack] = []
        self._next_id = 0

    def _centroid(self, s: BinaryShape) -> np.ndarray:
        c = s.centroid
        if self.vc is None:
            return c
        return np.array(bev_to_ground(c[0], c[1], self.vc))

    def update(
        self,
        frame: int,
        bev,
        is_interior: Optional[Callable[[BinaryShape], bool]] = None,
        shapes: Optional[list[BinaryShape]] = None,
    ) -> list[FeatureTrack]:
        """Ingest one BEV mask; returns tracks closed by this frame."""
        if shapes is None:
            shapes = extract_shapes(bev, self.min_pixels)
        image_shape = np.asarray(bev).shape
        if is_interior is None:
            is_interior = lambda s: shape_is_interior(s, image_shape=image_shape)  # noqa: E731
        cents = [self._centroid(s) for s in shapes]

        pairs = []
        for ti, t in enumerate(self.open):
            last = t.entries[-1].centroid
            for si, c in enumerate(cents):
                d = float(np.hypot(*(c - last)))
                if d <= self.gate:
                    pairs.append((d, ti, si))
        pairs.sort()
        used_t, used_s = set(), set()
        for _, ti, si in pairs:
            if ti in used_t or si in used_s:
                continue
            used_t.add(ti)
            used_s.add(si)
            t = self.open[ti]
            s = shapes[si]
            t.entries.append(TrackEntry(frame, s, hu_vector(s), cents[si], bool(is_interior(s))))
            t.state = "tracking"
            t.misses = 0

        closed = []
        still_open = []
        for ti, t in enumerate(self.open):
            if ti not in used_t:
                t.misses += 1
                if t.misses >= self.max_gap:
                    t.state = "closed"
                    closed.append(t)
                    continue
            still_open.append(t)
        for si, s in enumerate(shapes):
            if si in used_s:
                continue
            t = FeatureTrack(id=self._next_id)
            self._next_id += 1
            t.entries.append(TrackEntry(frame, s, hu_vector(s), cents[si], bool(is_interior(s))))
            still_open.append(t)
        self.open = still_open
        return closed

    def finish(self) -> list[FeatureTrack]:
        closed = self.open
        for t in closed:
            t.state = "closed"
        self.open = []
        return closed


def track_features(frames: Iterable, **kwargs) -> Iterable[FeatureTrack]:
    """Yield closed tracks from a stream of BEV masks (or ``(index, mask)`` pairs)."""
    tracker = FeatureTracker(**kwargs)
    for k, item in enumerate(frames):
        if isinstance(item, tuple):
            k, item = item
        yield from tracker.update(k, item)
    yield from tracker.finish()


def select_optimal_sgf(t: FeatureTrack, d_max: float = 0.005) -> Optional[SgfCandidate]:
    """Largest interior frame whose Hu distance to its predecessor is below ``d_max``."""
    best = None
    for prev, cur in zip(t.entries, t.entries[1:]):
        if not cur.interior or hu_distance(prev.hu, cur.hu) >= d_max:
            continue
        if best is None or cur.shape.size > best.shape.size:
            best = cur
    if best is None:
        return None
    return SgfCandidate(best.frame, best.shape, best.hu, best.shape.size, t.id)


def dump_tracks(tracks: Iterable[FeatureTrack], fp) -> None:
    """Line-delimited JSON, one record per track entry."""
    for t in tracks:
        prev = None
        for e in t.entries:
            rec = {
                "frame": e.frame,
                "track": t.id,
                "centroid": [round(float(c), 6) for c in e.centroid],
                **{f"hu{k + 1}": float(h) for k, h in enumerate(e.hu)},
                "d_hu": None if prev is None else hu_distance(prev.hu, e.hu),
                "interior": e.interior,
            }
            fp.write(json.dumps(rec) + "\n")
            prev = e
