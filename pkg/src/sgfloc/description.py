"""Polar occupancy descriptors for SGF point sets and their online grouping."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import VirtualCamera, bev_to_ground
from .detection import SgfCandidate
from .errors import DegenerateShape, ParamMismatch

L_MAX = 2.0
N_SECTORS = 90
N_RINGS = 10
VOXEL_PITCH = 0.05


@dataclass(eq=False)
class SgfPoints:
    """Metric ground points (anchor robot frame) of one feature."""

    points: np.ndarray
    centroid: np.ndarray
    anchor: int = -1

    @property
    def centered(self) -> np.ndarray:
        return self.points - self.centroid

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class Descriptor:
    bins: np.ndarray
    l_max: float = L_MAX
    n_sectors: int = N_SECTORS
    n_rings: int = N_RINGS

    @property
    def params(self) -> tuple[float, int, int]:
        return (self.l_max, self.n_sectors, self.n_rings)

    def shifted(self, k: int) -> "Descriptor":
        """Descriptor of the same point set rotated by ``k`` sectors."""
        return Descriptor(np.roll(self.bins, k, axis=1), *self.params)


def voxel_downsample(points: np.ndarray, pitch: float = VOXEL_PITCH) -> np.ndarray:
    """Replace points by the mean of each occupied grid cell (ordered by cell)."""
    points = np.asarray(points, float)
    keys = np.floor(points / pitch).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((counts.size, points.shape[1]))
    np.add.at(sums, inverse, points)
    return sums / counts[:, None]


def make_points(points, anchor: int = -1, voxel: Optional[float] = VOXEL_PITCH,
                l_max: float = L_MAX, min_points: int = 10) -> SgfPoints:
    """Downsample, center and radius-filter raw ground points."""
    pts = np.asarray(points, float).reshape(-1, 2)
    if voxel:
        pts = voxel_downsample(pts, voxel)
    if len(pts) < min_points:
        raise DegenerateShape(f"only {len(pts)} points after downsampling")
    centroid = pts.mean(axis=0)
    pts = pts[np.hypot(*(pts - centroid).T) < l_max]
    if len(pts) < min_points:
        raise DegenerateShape(f"only {len(pts)} points within {l_max} m of the centroid")
    return SgfPoints(pts, centroid, anchor)


def back_project(candidate: SgfCandidate, vc: VirtualCamera, anchor: int = -1, **kwargs) -> SgfPoints:
    u, v = candidate.shape.pixels.T
    x, y = bev_to_ground(u, v, vc)
    return make_points(np.column_stack([x, y]), anchor, **kwargs)


def build_descriptor(p: SgfPoints, l_max: float = L_MAX, n_sectors: int = N_SECTORS,
                     n_rings: int = N_RINGS) -> Descriptor:
    """Point counts in ``n_rings`` x ``n_sectors`` polar bins about the centroid."""
    d = p.centered
    rho = np.hypot(d[:, 0], d[:, 1])
    phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    keep = rho < l_max
    ring = np.floor(rho[keep] / (l_max / n_rings)).astype(int)
    sector = np.floor(phi[keep] / (2 * np.pi / n_sectors)).astype(int) % n_sectors
    bins = np.zeros((n_rings, n_sectors))
    np.add.at(bins, (np.minimum(ring, n_rings - 1), sector), 1.0)
    return Descriptor(bins, l_max, n_sectors, n_rings)


def _check(q: Descriptor, g: Descriptor) -> None:
    if q.params != g.params or q.bins.shape != g.bins.shape:
        raise ParamMismatch(f"descriptor params differ: {q.params} vs {g.params}")


def _unit_columns(b: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(b, axis=0)
    return np.divide(b, n, out=np.zeros_like(b, dtype=float), where=n > 0)


def descriptor_distance(q: Descriptor, g: Descriptor, shift: int = 0) -> float:
    """Mean column cosine distance, comparing q column j with g column j + shift.

    A column with zero norm on either side counts as distance 1.
    """
    _check(q, g)
    qn = _unit_columns(q.bins)
    gn = np.roll(_unit_columns(g.bins), -shift, axis=1)
    sim = np.sum(qn * gn, axis=0)
    return float(np.mean(1.0 - sim))


def shift_distances(q: Descriptor, g: Descriptor) -> np.ndarray:
    """``descriptor_distance(q, g, s)`` for every shift s."""
    _check(q, g)
    ns = q.n_sectors
    qn = _unit_columns(q.bins)
    gn = _unit_columns(g.bins)
    # corr[j, k] = <q_j, g_k>; the distance at shift s sums corr[j, j + s].
    corr = qn.T @ gn
    j = np.arange(ns)
    idx = (j[None, :] + j[:, None]) % ns
    sims = corr[j[None, :], idx].sum(axis=1)
    return 1.0 - sims / ns


def best_shift(q: Descriptor, g: Descriptor) -> tuple[int, float]:
    d = shift_distances(q, g)
    k = int(np.argmin(d))
    return k, float(d[k])


def symmetry_test(d: Descriptor, tol: float = 0.1) -> bool:
    """True when the descriptor matches itself under a non-trivial rotation."""
    ns = d.n_sectors
    lo = ns // 6
    dist = shift_distances(d, d)
    return bool(np.min(dist[lo:ns - lo + 1]) < tol)


@dataclass(eq=False)
class SgfInstance:
    id: int
    points: SgfPoints
    descriptor: Descriptor
    hu: Optional[np.ndarray] = None
    frame: int = -1
    group_id: Optional[int] = None


@dataclass(eq=False)
class SgfGroup:
    id: int
    mean: np.ndarray
    members: list[tuple[int, int]] = field(default_factory=list)
    aligned: list[np.ndarray] = field(default_factory=list)
    symmetric: bool = False

    def descriptor(self, params) -> Descriptor:
        return Descriptor(self.mean, *params)


class GroupSet:
    """Online SGF groups; the single writer is the ingestion loop."""

    def __init__(self, d_new: float = 0.7, symmetry_tol: float = 0.1):
        self.d_new = d_new
        self.symmetry_tol = symmetry_tol
        self.groups: list[SgfGroup] = []
        self.instances: dict[int, SgfInstance] = {}

    def __len__(self) -> int:
        return len(self.groups)

    def __getitem__(self, gid: int) -> SgfGroup:
        return self.groups[gid]

    def closest(self, d: Descriptor) -> tuple[Optional[int], int, float]:
        best = (None, 0, np.inf)
        for g in self.groups:
            k, dist = best_shift(d, g.descriptor(d.params))
            if dist < best[2]:
                best = (g.id, k, dist)
        return best

    def assign(self, inst: SgfInstance) -> int:
        self.instances[inst.id] = inst
        params = inst.descriptor.params
        gid, k, dist = self.closest(inst.descriptor)
        if gid is None or dist >= self.d_new:
            g = SgfGroup(id=len(self.groups), mean=inst.descriptor.bins.copy())
            self.groups.append(g)
            gid, k = g.id, 0
        g = self.groups[gid]
        # Members are stored rotated into the group-seed orientation before averaging.
        g.members.append((inst.id, k))
        g.aligned.append(np.roll(inst.descriptor.bins, k, axis=1))
        g.mean = np.mean(g.aligned, axis=0)
        g.symmetric = symmetry_test(Descriptor(g.mean, *params), self.symmetry_tol)
        inst.group_id = gid
        return gid


def assign_to_group(inst: SgfInstance, groups: GroupSet, d_new: Optional[float] = None) -> int:
    if d_new is not None:
        groups.d_new = d_new
    return groups.assign(inst)


def dump_descriptors(instances, fp) -> None:
    for inst in instances:
        d = inst.descriptor
        rec = {
            "id": inst.id,
            "frame": inst.frame,
            "anchor": inst.points.anchor,
            "group": inst.group_id,
            "l_max": d.l_max,
            "n_sectors": d.n_sectors,
            "n_rings": d.n_rings,
            "centroid": [float(c) for c in inst.points.centroid],
            "bins": [float(b) for b in d.bins.ravel()],
        }
        fp.write(json.dumps(rec) + "\n")
