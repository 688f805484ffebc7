"""Loop constraints from re-observed SGFs via point-to-point ICP."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .description import L_MAX, GroupSet, SgfInstance, SgfPoints, best_shift
from .errors import GroupMismatch, TooFewPoints
from .geometry import Se2


@dataclass
class IcpResult:
    transform: Se2
    iterations: int
    rms: float
    converged: bool
    rms_history: list[float] = field(default_factory=list)


@dataclass
class LoopConstraint:
    pose_i: int
    pose_j: int
    z: Se2
    information: np.ndarray
    residual_rms: float
    group_id: int = -1
    shift: int = 0
    instance_i: int = -1
    instance_j: int = -1

    def __post_init__(self):
        if self.pose_i == self.pose_j:
            raise ValueError("loop constraint must join two different poses")


def fit_se2(src: np.ndarray, dst: np.ndarray) -> Se2:
    """Least-squares rigid transform taking ``src`` onto ``dst``."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - ms, dst - md
    num = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    den = np.sum(a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])
    yaw = np.arctan2(num, den)
    c, s = np.cos(yaw), np.sin(yaw)
    t = md - np.array([c * ms[0] - s * ms[1], s * ms[0] + c * ms[1]])
    return Se2(t[0], t[1], yaw)


def _as_array(p) -> np.ndarray:
    if isinstance(p, SgfPoints):
        return p.centered
    return np.asarray(p, float)


def icp_2d(
    source,
    target,
    init: Se2 = Se2(),
    max_iter: int = 50,
    tol: float = 1e-4,
    r_ok: float = 0.05,
    reject: float = 3.0,
    min_points: int = 10,
) -> IcpResult:
    """Align ``source`` onto ``target``.

    ``SgfPoints`` inputs are used centroid-relative. Correspondences farther
    than ``reject`` times the median distance are left out of each fit. The
    RMS is symmetric: nearest-neighbour distances are taken from every
    source point and from every target point, so unmatched parts of either
    shape count against convergence. Only iterates that lower it
    are accepted (``rms_history``); the best one is returned.
    """
    src = _as_array(source)
    dst = _as_array(target)
    if len(src) < min_points or len(dst) < min_points:
        raise TooFewPoints(f"ICP needs at least {min_points} points per set")
    tree = cKDTree(dst)

    def evaluate(T: Se2):
        moved = T.apply(src)
        d, idx = tree.query(moved)
        back, _ = cKDTree(moved).query(dst)
        med = np.median(d)
        keep = d <= reject * med if med > 0 else np.ones(len(d), dtype=bool)
        return float(np.sqrt(0.5 * (np.mean(d**2) + np.mean(back**2)))), keep, idx

    T = init
    rms, keep, idx = evaluate(T)
    history = [rms]
    best = (rms, T)
    it = 0
    while it < max_iter:
        it += 1
        T_new = fit_se2(src[keep], dst[idx[keep]])
        step = T.inverse() @ T_new
        T = T_new
        rms, keep, idx = evaluate(T)
        if rms < best[0]:
            best = (rms, T)
            history.append(rms)
        if np.hypot(step.x, step.y) < tol and abs(step.yaw) < tol:
            break
    rms, T = best
    return IcpResult(T, it, rms, rms < r_ok, history)


def icp_init_from_shift(shift: int, n_sectors: int) -> Se2:
    if not 0 <= shift < n_sectors:
        raise ValueError("shift out of range")
    return Se2(0.0, 0.0, shift * 2 * np.pi / n_sectors)


def loop_information(rms: float, l_max: float = L_MAX, sigma_floor: float = 0.02) -> np.ndarray:
    sigma_t = max(rms, sigma_floor)
    sigma_yaw = sigma_t / l_max
    return np.diag([1 / sigma_t**2, 1 / sigma_t**2, 1 / sigma_yaw**2])


def make_loop_constraint(
    a: SgfInstance,
    b: SgfInstance,
    icp: IcpResult,
    groups: Optional[GroupSet] = None,
    shift: int = 0,
) -> Optional[LoopConstraint]:
    """Relative pose of b's anchor in a's anchor frame.

    ``icp`` must map b's centroid-relative points onto a's. Returns None when
    ICP did not converge or the group is flagged symmetric.
    """
    if a.group_id != b.group_id:
        raise GroupMismatch(f"instances belong to groups {a.group_id} and {b.group_id}")
    if groups is not None and a.group_id is not None and groups[a.group_id].symmetric:
        return None
    if not icp.converged:
        return None
    ca, cb = a.points.centroid, b.points.centroid
    z = Se2(ca[0], ca[1], 0.0) @ icp.transform @ Se2(-cb[0], -cb[1], 0.0)
    return LoopConstraint(
        pose_i=a.points.anchor,
        pose_j=b.points.anchor,
        z=z,
        information=loop_information(icp.rms, a.descriptor.l_max),
        residual_rms=icp.rms,
        group_id=-1 if a.group_id is None else a.group_id,
        shift=shift,
        instance_i=a.id,
        instance_j=b.id,
    )


def find_loop_candidate(query: SgfInstance, groups: GroupSet, t_min: int = 30):
    """Closest earlier member of the query's group, at least ``t_min`` frames older.

    Returns ``(group id, member, shift)`` or None; ``shift`` rotates the query
    onto the member.
    """
    if query.group_id is None:
        return None
    best = None
    for iid, _ in groups[query.group_id].members:
        m = groups.instances[iid]
        if iid == query.id or m.frame > query.frame - t_min:
            continue
        k, dist = best_shift(query.descriptor, m.descriptor)
        if best is None or dist < best[0]:
            best = (dist, m, k)
    if best is None:
        return None
    return query.group_id, best[1], best[2]


def write_constraint_log(constraints, fp, extra: Optional[dict] = None) -> None:
    for c in constraints:
        rec = {
            "pose_i": c.pose_i,
            "pose_j": c.pose_j,
            "z": [round(v, 9) for v in c.z.as_array().tolist()],
            "rms": round(c.residual_rms, 9),
            "group": c.group_id,
            "shift": c.shift,
            "instance_i": c.instance_i,
            "instance_j": c.instance_j,
        }
        if extra:
            rec.update(extra)
        fp.write(json.dumps(rec) + "\n")
