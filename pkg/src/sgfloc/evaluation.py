"""Trajectory error and per-sequence detection / loop counters."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import NoOverlap
from .geometry import Se2, compose_arrays, wrap_angle


@dataclass
class AteReport:
    rmse: float
    mean: float
    median: float
    max: float
    alignment: Se2
    scale: float = 1.0
    n: int = 0

    def __post_init__(self):
        if min(self.rmse, self.mean, self.median, self.max) < 0:
            raise ValueError("error statistics must be non-negative")

    def to_dict(self) -> dict:
        return {
            "rmse": round(self.rmse, 9),
            "mean": round(self.mean, 9),
            "median": round(self.median, 9),
            "max": round(self.max, 9),
            "alignment": [round(v, 9) for v in self.alignment.as_array().tolist()],
            "scale": round(self.scale, 9),
            "n": self.n,
        }


def _planar(traj) -> np.ndarray:
    """(n, 4) rows of (t, x, y, yaw) from (n, 7) pose rows or (n, 4) rows."""
    a = np.asarray(traj, float)
    if a.ndim != 2 or a.shape[1] not in (4, 7):
        raise ValueError("trajectory rows must be (t, x, y, yaw) or (t, x, y, z, roll, pitch, yaw)")
    return a if a.shape[1] == 4 else a[:, [0, 1, 2, 6]]


def associate(t_est: np.ndarray, t_gt: np.ndarray, max_dt: Optional[float] = None):
    """Nearest-timestamp pairs ``(i_est, i_gt)`` within ``max_dt``.

    The default window is half the median ground-truth frame period.
    """
    if len(t_est) == 0 or len(t_gt) == 0:
        raise NoOverlap("empty trajectory")
    if max_dt is None:
        max_dt = 0.5 * float(np.median(np.diff(t_gt))) if len(t_gt) > 1 else 1e-9
    k = np.clip(np.searchsorted(t_gt, t_est), 1, max(len(t_gt) - 1, 1))
    if len(t_gt) == 1:
        j = np.zeros(len(t_est), dtype=int)
    else:
        left = np.abs(t_est - t_gt[k - 1])
        right = np.abs(t_gt[k] - t_est)
        j = np.where(left <= right, k - 1, k)
    ok = np.abs(t_gt[j] - t_est) <= max_dt + 1e-12
    if not ok.any():
        raise NoOverlap("no timestamps within the association window")
    return np.nonzero(ok)[0], j[ok]


def umeyama_2d(src: np.ndarray, dst: np.ndarray, with_scale: bool = False) -> tuple[Se2, float]:
    """Least-squares (s, R, t) with dst ~ s R src + t."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - ms, dst - md
    cov = b.T @ a / len(src)
    u, d, vt = np.linalg.svd(cov)
    sgn = np.eye(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sgn[1, 1] = -1
    r = u @ sgn @ vt
    var = np.mean(np.sum(a**2, axis=1))
    s = float(np.trace(np.diag(d) @ sgn) / var) if with_scale and var > 0 else 1.0
    t = md - s * r @ ms
    return Se2(t[0], t[1], float(np.arctan2(r[1, 0], r[0, 0]))), s


def ate(est, gt, align: bool = True, with_scale: bool = False, max_dt: Optional[float] = None) -> AteReport:
    """Absolute trajectory error of the translation after rigid alignment."""
    e, g = _planar(est), _planar(gt)
    ie, ig = associate(e[:, 0], g[:, 0], max_dt)
    pe, pg = e[ie, 1:3], g[ig, 1:3]
    T, s = Se2(), 1.0
    if align and len(pe) >= 2:
        T, s = umeyama_2d(pe, pg, with_scale)
    aligned = s * (pe @ T.rotation.T) + T.t
    err = np.hypot(*(aligned - pg).T)
    return AteReport(float(np.sqrt(np.mean(err**2))), float(err.mean()), float(np.median(err)),
                     float(err.max()), T, s, len(err))


def align_trajectory(est, gt, with_scale: bool = False) -> np.ndarray:
    """``est`` (n, 7) rows mapped into the ground-truth frame (no scale on yaw)."""
    est = np.asarray(est, float)
    rep = ate(est, gt, with_scale=with_scale)
    out = est.copy()
    pl = est[:, [1, 2, 6]].copy()
    pl[:, :2] *= rep.scale
    out[:, [1, 2, 6]] = compose_arrays(np.repeat(rep.alignment.as_array()[None], len(pl), axis=0), pl)
    return out


@dataclass
class SequenceCounters:
    detected: int = 0
    expected: int = 0
    pairs_found: int = 0
    pairs_total: int = 0
    rev_found: int = 0
    rev_total: int = 0
    closed: int = 0
    rev_closed: int = 0
    false_constraints: int = 0

    def __post_init__(self):
        if not (0 <= self.pairs_found <= self.pairs_total and 0 <= self.closed <= self.pairs_found):
            raise ValueError("counters must satisfy closed <= found <= total")
        if not (0 <= self.rev_found <= self.rev_total and 0 <= self.rev_closed <= self.rev_found):
            raise ValueError("reverse counters must satisfy closed <= found <= total")
        if self.rev_total > self.pairs_total or self.detected < 0 or self.expected < 0:
            raise ValueError("inconsistent counters")

    def to_dict(self) -> dict:
        return asdict(self)


def attribute_instances(instances, annotations, radius: float = 1.0) -> dict:
    """Map instance id -> (marking id, visit index) using the true anchor pose."""
    gt = np.asarray(annotations.gt_poses, float)
    marks = annotations.markings
    if not marks:
        return {}
    centers = np.array([[m["x"], m["y"]] for m in marks])
    out = {}
    for inst in instances:
        a = inst.points.anchor
        if not 0 <= a < len(gt):
            continue
        w = Se2.from_array(gt[a]).apply(np.asarray(inst.points.centroid)[None])[0]
        d = np.hypot(*(centers - w).T)
        k = int(np.argmin(d))
        if d[k] > radius:
            continue
        mid = marks[k]["id"]
        visit = None
        for vi, v in enumerate(annotations.visits):
            if v.marking == mid and v.start - 5 <= inst.frame <= v.end + 5:
                visit = vi
                break
        if visit is not None:
            out[inst.id] = (mid, visit)
    return out


def count_sequence_metrics(detections, groups, constraints, gt_annotations,
                           include_symmetric: bool = True, radius: float = 1.0) -> SequenceCounters:
    """Detection, loop-pair and loop-closure counts against simulator ground truth.

    Every expected visit after a marking's first expected visit is a revisit
    (one loop pair). A pair is found when the revisit's SGF shares a group
    with an SGF from an earlier visit of the same marking, and closed when a
    loop constraint joins two such SGFs. Reverse pairs are those whose
    heading differs from the first visit by more than pi/2.
    """
    ann = gt_annotations
    symmetric = {m["id"]: bool(m.get("symmetric", False)) for m in ann.markings}
    owner = attribute_instances(detections, ann, radius)
    by_visit: dict[int, list] = {}
    for inst in detections:
        if inst.id in owner:
            by_visit.setdefault(owner[inst.id][1], []).append(inst)
    expected_visits = [vi for vi, v in enumerate(ann.visits) if v.expected]
    detected = sum(1 for vi in expected_visits if vi in by_visit)

    links = set()
    false_c = 0
    for c in constraints:
        a, b = owner.get(c.instance_i), owner.get(c.instance_j)
        if a is None or b is None or a[0] != b[0]:
            false_c += 1
            continue
        links.add(c.instance_j)
        links.add(c.instance_i)

    c = dict(found=0, total=0, rev_found=0, rev_total=0, closed=0, rev_closed=0)
    seen: dict[int, list] = {}
    for vi in expected_visits:
        v = ann.visits[vi]
        earlier = seen.setdefault(v.marking, [])
        if earlier and (include_symmetric or not symmetric.get(v.marking, False)):
            first = ann.visits[earlier[0]]
            rev = abs(wrap_angle(v.heading - first.heading)) > np.pi / 2
            prior = [i for e in earlier for i in by_visit.get(e, [])]
            prior_groups = {i.group_id for i in prior}
            mine = by_visit.get(vi, [])
            found = any(i.group_id in prior_groups for i in mine)
            prior_ids = {i.id for i in prior}
            closed = found and any(
                (k.instance_j in {i.id for i in mine} and k.instance_i in prior_ids) for k in constraints
            )
            c["total"] += 1
            c["found"] += found
            c["closed"] += closed
            if rev:
                c["rev_total"] += 1
                c["rev_found"] += found
                c["rev_closed"] += closed
        earlier.append(vi)
    return SequenceCounters(detected, len(expected_visits), c["found"], c["total"], c["rev_found"],
                            c["rev_total"], c["closed"], c["rev_closed"], false_c)


COUNTER_COLUMNS = ["sequence", "detected", "expected", "pairs_found", "pairs_total", "rev_found",
                   "rev_total", "closed", "rev_closed", "false_constraints"]


def write_counters_csv(path, rows) -> None:
    """``rows``: iterable of (sequence name, SequenceCounters)."""
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(COUNTER_COLUMNS)
        for name, c in rows:
            d = c.to_dict()
            w.writerow([name] + [d[k] for k in COUNTER_COLUMNS[1:]])
