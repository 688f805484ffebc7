"""End-to-end orchestration: masks + odometry -> SGFs -> loops -> optimized path."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
import yaml

from . import __version__
from .camera import FLAT, CameraModel, MotionState, PoseQueue, VirtualCamera, compensation_from_queue, warp_mask_to_bev
from .dataset import (
    DatasetManifest,
    load_manifest,
    read_calib,
    read_mask,
    read_odometry,
    read_tum,
    write_calib,
    write_json,
    write_mask,
    write_odometry,
    write_svg,
    write_tum,
)
from .description import GroupSet, SgfInstance, back_project, build_descriptor, dump_descriptors, symmetry_test
from .detection import FeatureTracker, FeatureTrack, select_optimal_sgf, shape_is_interior
from .errors import ConfigError, SgfError
from .geometry import Pose6, Se2, relative_arrays
from .loop_closure import (
    LoopConstraint,
    find_loop_candidate,
    icp_2d,
    icp_init_from_shift,
    make_loop_constraint,
    write_constraint_log,
)
from .pose_graph import Edge, GraphSolution, OptimizerOptions, optimize

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class PipelineConfig:
    queue_size: int = 50
    pitch_gate: float = 0.025
    compensate: bool = True
    min_pixels: int = 50
    track_gate: float = 0.5
    max_gap: int = 3
    hu_threshold: float = 0.005
    voxel: float = 0.02
    l_max: float = 2.0
    n_sectors: int = 90
    n_rings: int = 10
    group_threshold: float = 0.35
    symmetry_tol: float = 0.1
    min_loop_gap: int = 30
    icp_max_iter: int = 50
    icp_tol: float = 1e-4
    icp_rms: float = 0.02
    icp_reject: float = 3.0
    opt_max_iter: int = 100
    opt_rel_tol: float = 1e-9
    opt_lambda: float = 1e-4
    huber_delta: float = 1.0
    sigma_odom_xy: float = 0.005
    sigma_odom_yaw: float = 0.002
    workers: int = 1

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lo, hi = _RANGES[f.name]
            if isinstance(v, bool) != (f.type in ("bool", bool)):
                raise ConfigError(f"{f.name}: expected {f.type}, got {v!r}")
            if f.type in ("int", int) and not isinstance(v, (int, np.integer)):
                raise ConfigError(f"{f.name}: expected an integer, got {v!r}")
            if not isinstance(v, bool) and not lo <= v <= hi:
                raise ConfigError(f"{f.name}={v!r} outside valid range [{lo}, {hi}]")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        vals = {}
        for k, v in d.items():
            t = known[k].type
            if t in ("float", float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            vals[k] = v
        return cls(**vals)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected key: value pairs")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def optimizer_options(self) -> OptimizerOptions:
        return OptimizerOptions(max_iter=self.opt_max_iter, rel_tol=self.opt_rel_tol,
                                lambda0=self.opt_lambda, huber_delta=self.huber_delta)


_RANGES = {
    "queue_size": (1, 10000),
    "pitch_gate": (0.0, 1.0),
    "compensate": (False, True),
    "min_pixels": (1, 10**6),
    "track_gate": (1e-6, 100.0),
    "max_gap": (1, 1000),
    "hu_threshold": (0.0, 10.0),
    "voxel": (0.0, 1.0),
    "l_max": (1e-3, 100.0),
    "n_sectors": (4, 3600),
    "n_rings": (1, 1000),
    "group_threshold": (0.0, 1.0),
    "symmetry_tol": (0.0, 1.0),
    "min_loop_gap": (1, 10**7),
    "icp_max_iter": (1, 10000),
    "icp_tol": (0.0, 1.0),
    "icp_rms": (1e-6, 10.0),
    "icp_reject": (1.0, 100.0),
    "opt_max_iter": (0, 10000),
    "opt_rel_tol": (0.0, 1.0),
    "opt_lambda": (0.0, 1e6),
    "huber_delta": (1e-6, 1e6),
    "sigma_odom_xy": (1e-9, 100.0),
    "sigma_odom_yaw": (1e-9, 10.0),
    "workers": (1, 64),
}


@dataclass
class LoopCandidate:
    query: int
    member: int
    group: int
    shift: int
    rms: float = float("nan")
    converged: bool = False
    symmetric: bool = False
    accepted: bool = False


@dataclass
class PipelineResult:
    trajectory: np.ndarray  # (n, 7) optimized rows
    odometry: np.ndarray  # (n, 7) input rows
    instances: list[SgfInstance]
    groups: GroupSet
    constraints: list[LoopConstraint]
    candidates: list[LoopCandidate]
    solution: Optional[GraphSolution]
    tracks: list[FeatureTrack] = field(default_factory=list)
    frame_errors: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def motion_states(odometry: np.ndarray, cfg: PipelineConfig) -> list[MotionState]:
    """Per-frame camera motion relative to the local ground reference."""
    if not cfg.compensate:
        return [FLAT] * len(odometry)
    q = PoseQueue(cfg.queue_size, cfg.pitch_gate)
    out = []
    for row in odometry:
        p = Pose6(*row)
        q.push(p)
        out.append(compensation_from_queue(q, p))
    return out


class Frontend:
    """Streaming SGF detection, description, grouping and loop search.

    Frames must arrive in order; ``process`` takes an already warped BEV mask.
    """

    def __init__(self, cfg: PipelineConfig, vc: VirtualCamera):
        self.cfg = cfg
        self.vc = vc
        self.tracker = FeatureTracker(vc, gate=cfg.track_gate, max_gap=cfg.max_gap, min_pixels=cfg.min_pixels)
        self.groups = GroupSet(cfg.group_threshold, cfg.symmetry_tol)
        self.instances: list[SgfInstance] = []
        self.constraints: list[LoopConstraint] = []
        self.candidates: list[LoopCandidate] = []
        self.tracks: list[FeatureTrack] = []
        self.errors: list[str] = []
        self._sym: dict[int, bool] = {}

    def process(self, frame: int, bev: np.ndarray, valid: Optional[np.ndarray] = None) -> None:
        if valid is None:
            is_int = None
        else:
            def is_int(s):
                return shape_is_interior(s, valid)
        for t in self.tracker.update(frame, bev, is_interior=is_int):
            self._close(t)

    def finish(self) -> None:
        for t in self.tracker.finish():
            self._close(t)

    def _symmetric(self, inst: SgfInstance) -> bool:
        if inst.id not in self._sym:
            self._sym[inst.id] = symmetry_test(inst.descriptor, self.cfg.symmetry_tol)
        return self._sym[inst.id]

    def _close(self, track: FeatureTrack) -> None:
        self.tracks.append(track)
        cand = select_optimal_sgf(track, self.cfg.hu_threshold)
        if cand is None:
            return
        cfg = self.cfg
        try:
            pts = back_project(cand, self.vc, anchor=cand.frame, voxel=cfg.voxel or None, l_max=cfg.l_max)
        except SgfError as exc:
            self.errors.append(f"frame {cand.frame}: track {track.id}: {exc}")
            log.warning(self.errors[-1])
            return
        desc = build_descriptor(pts, cfg.l_max, cfg.n_sectors, cfg.n_rings)
        inst = SgfInstance(len(self.instances), pts, desc, cand.hu, cand.frame)
        self.instances.append(inst)
        self.groups.assign(inst)
        found = find_loop_candidate(inst, self.groups, cfg.min_loop_gap)
        if found is None:
            return
        gid, member, shift = found
        # Self-similar instances are excluded as well as symmetric groups: at
        # a loose group threshold one group can hold several marking classes.
        sym = self.groups[gid].symmetric or self._symmetric(inst) or self._symmetric(member)
        rec = LoopCandidate(inst.id, member.id, gid, shift, symmetric=sym)
        self.candidates.append(rec)
        if rec.symmetric:
            return
        try:
            icp = icp_2d(inst.points, member.points, icp_init_from_shift(shift, desc.n_sectors),
                         max_iter=cfg.icp_max_iter, tol=cfg.icp_tol, r_ok=cfg.icp_rms, reject=cfg.icp_reject)
        except SgfError as exc:
            self.errors.append(f"frame {cand.frame}: ICP: {exc}")
            log.warning(self.errors[-1])
            return
        rec.rms, rec.converged = icp.rms, icp.converged
        c = make_loop_constraint(member, inst, icp, self.groups, shift)
        if c is not None:
            rec.accepted = True
            self.constraints.append(c)


def optimize_trajectory(odometry: np.ndarray, constraints: list[LoopConstraint],
                        cfg: PipelineConfig) -> tuple[np.ndarray, Optional[GraphSolution]]:
    """Pose graph over every frame; returns optimized (n, 3) poses."""
    planar = odometry[:, [1, 2, 6]]
    if len(planar) < 2:
        return planar.copy(), None
    rel = relative_arrays(planar[:-1], planar[1:])
    info = np.diag([cfg.sigma_odom_xy**-2, cfg.sigma_odom_xy**-2, cfg.sigma_odom_yaw**-2])
    odom = [Edge(t, t + 1, Se2.from_array(z), info) for t, z in enumerate(rel)]
    loops = [Edge(c.pose_i, c.pose_j, c.z, c.information, True) for c in constraints]
    if not loops:
        return planar.copy(), None
    sol = optimize(planar, odom, loops, cfg.optimizer_options())
    return sol.poses, sol


def run_frames(frames: Iterable[tuple[int, np.ndarray]], odometry: np.ndarray, cam: CameraModel,
               vc: VirtualCamera, cfg: PipelineConfig) -> PipelineResult:
    """Core loop over ``(index, front mask)`` pairs in frame order."""
    t0 = time.perf_counter()
    states = motion_states(odometry, cfg)
    front = Frontend(cfg, vc)

    def warp(item):
        t, mask = item
        try:
            if callable(mask):
                mask = mask()
            bev, valid = warp_mask_to_bev(mask, cam, vc, states[t], return_valid=True)
        except (SgfError, OSError) as exc:
            return t, None, None, f"frame {t}: warp: {exc}"
        return t, bev, valid, None

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            _consume(_ordered_map(pool, warp, frames, 4 * cfg.workers), front)
    else:
        _consume(map(warp, frames), front)
    front.finish()
    t1 = time.perf_counter()
    poses, sol = optimize_trajectory(odometry, front.constraints, cfg)
    t2 = time.perf_counter()
    traj = odometry.copy()
    traj[:, [1, 2, 6]] = poses
    return PipelineResult(traj, odometry, front.instances, front.groups, front.constraints, front.candidates,
                          sol, front.tracks, front.errors, {"frontend_s": t1 - t0, "backend_s": t2 - t1})


def _ordered_map(pool, fn, items, depth: int):
    """Like ``pool.map`` but with at most ``depth`` items in flight."""
    pending = deque()
    for item in items:
        pending.append(pool.submit(fn, item))
        if len(pending) >= depth:
            yield pending.popleft().result()
    while pending:
        yield pending.popleft().result()


def _consume(items, front: Frontend) -> None:
    for t, bev, valid, err in items:
        if err is not None:
            front.errors.append(err)
            log.warning(err)
            continue
        try:
            front.process(t, bev, valid)
        except SgfError as exc:
            front.errors.append(f"frame {t}: {exc}")
            log.warning(front.errors[-1])


def run_scenario(s, cfg: Optional[PipelineConfig] = None, odometry: Optional[np.ndarray] = None,
                 masks: Optional[Callable[[int], np.ndarray]] = None) -> PipelineResult:
    """Run the pipeline straight on a simulator scenario, without files."""
    from .sim import noisy_odometry, render_mask

    cfg = cfg or PipelineConfig()
    if odometry is None:
        odometry = noisy_odometry(s, seed=s.seed)
    render = masks or (lambda t: render_mask(s, t))
    frames = ((t, partial(render, t)) for t in range(len(s)))
    return run_frames(frames, odometry, s.camera, s.vcam, cfg)


def metrics_document(res: PipelineResult, gt: Optional[np.ndarray] = None, annotations=None,
                     dataset: str = "") -> dict:
    from .evaluation import ate, count_sequence_metrics

    sol = res.solution
    doc = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "dataset": dataset,
        "frames": int(len(res.odometry)),
        "sgf_instances": len(res.instances),
        "groups": len(res.groups),
        "symmetric_groups": sum(g.symmetric for g in res.groups.groups),
        "loop_candidates": len(res.candidates),
        "loop_constraints": len(res.constraints),
        "frame_errors": len(res.frame_errors),
        "optimizer": None if sol is None else {
            "iterations": sol.iterations,
            "initial_cost": round(sol.initial_cost, 9),
            "final_cost": round(sol.cost, 9),
            "converged": sol.converged,
        },
    }
    if gt is not None and len(gt):
        a_odo = ate(res.odometry, gt)
        a_opt = ate(res.trajectory, gt)
        doc["ate"] = {"odometry": a_odo.to_dict(), "optimized": a_opt.to_dict()}
    if annotations is not None:
        c = count_sequence_metrics(res.instances, res.groups, res.constraints, annotations)
        doc["counters"] = c.to_dict()
    return doc


def run_pipeline(manifest, config: Optional[PipelineConfig] = None, out=None) -> PipelineResult:
    """Ingest a dataset directory; write outputs to ``out`` when given.

    Outputs: ``trajectory.tum``, ``constraints.jsonl``, ``descriptors.jsonl``,
    ``metrics.json``, ``counters.csv`` (with annotations) and ``trajectory.svg``.
    """
    from .evaluation import count_sequence_metrics, write_counters_csv
    from .sim import Annotations

    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    cfg = config or PipelineConfig()
    cam, vc, _ = read_calib(manifest.calib)
    odometry = read_odometry(manifest.odometry)
    if out is not None:
        # Fail before the expensive part when the output cannot be created.
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
    frames = ((t, partial(read_mask, manifest.mask_path(t))) for t in range(manifest.frame_count))
    res = run_frames(frames, odometry, cam, vc, cfg)
    if out is None:
        return res
    gt = read_tum(manifest.groundtruth) if manifest.groundtruth else None
    ann = None
    if manifest.annotations is not None and gt is not None:
        ann = Annotations.from_json(json.loads(manifest.annotations.read_text()), gt[:, [1, 2, 6]])
    write_tum(out / "trajectory.tum", res.trajectory)
    with (out / "constraints.jsonl").open("w") as fp:
        write_constraint_log(res.constraints, fp)
    with (out / "descriptors.jsonl").open("w") as fp:
        dump_descriptors(res.instances, fp)
    write_json(out / "metrics.json", metrics_document(res, gt, ann, manifest.root.name))
    if ann is not None:
        write_counters_csv(out / "counters.csv", [(manifest.root.name,
                           count_sequence_metrics(res.instances, res.groups, res.constraints, ann))])
    paths = {"odometry": odometry[:, 1:3], "optimized": res.trajectory[:, 1:3]}
    if gt is not None:
        paths = {"ground truth": gt[:, 1:3], **paths}
    write_svg(out / "trajectory.svg", paths)
    return res


def run_simulate(kind: str, seed: int, out, noise=None) -> DatasetManifest:
    """Write a complete simulator dataset directory."""
    from .sim import annotate, make_scenario, noisy_odometry, render_mask

    s = make_scenario(kind, seed, noise=noise)
    out = Path(out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    write_calib(out / "calib.txt", s.camera, s.vcam, s.frame_period)
    write_odometry(out / "odometry.csv", noisy_odometry(s, seed))
    for t in range(len(s)):
        write_mask(out / "masks" / f"{t:06d}.png", render_mask(s, t))
    write_tum(out / "groundtruth.tum", s.poses)
    write_json(out / "annotations.json", annotate(s).to_json())
    return load_manifest(out)
