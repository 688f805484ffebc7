"""Dataset directory layout: calibration, odometry, masks and ground truth.

::

    root/
      calib.txt          YAML: camera, bev and frame_period
      odometry.csv       timestamp,x,y,z,roll,pitch,yaw (absolute, integrated)
      masks/000000.png   1-bit front-camera masks, one per odometry row
      groundtruth.tum    optional, TUM format
      annotations.json   optional, simulator ground truth for counters
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from PIL import Image
from scipy.spatial.transform import Rotation

from .camera import CameraModel, VirtualCamera
from .errors import ManifestError

ODOMETRY_HEADER = "timestamp,x,y,z,roll,pitch,yaw"
MASK_PATTERN = re.compile(r"^(\d{6})\.png$")


@dataclass
class DatasetManifest:
    root: Path
    calib: Path
    odometry: Path
    masks: Path
    frame_count: int
    groundtruth: Optional[Path] = None
    annotations: Optional[Path] = None

    def mask_path(self, t: int) -> Path:
        return self.masks / f"{t:06d}.png"


def load_manifest(root) -> DatasetManifest:
    """Validate a dataset directory and describe its contents."""
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"{root}: not a directory")
    calib, odom, masks = root / "calib.txt", root / "odometry.csv", root / "masks"
    for p in (calib, odom):
        if not p.is_file():
            raise ManifestError(f"{p}: missing")
    if not masks.is_dir():
        raise ManifestError(f"{masks}: missing mask directory")
    names = sorted(p.name for p in masks.iterdir() if p.suffix == ".png")
    if not names:
        raise ManifestError(f"{masks}: no masks")
    bad = [n for n in names if not MASK_PATTERN.match(n)]
    if bad:
        raise ManifestError(f"{masks}: mask names must be zero-padded frame indices, got {bad[0]}")
    idx = [int(n[:6]) for n in names]
    if idx != list(range(len(idx))):
        raise ManifestError(f"{masks}: frame indices are not contiguous from 0")
    rows = read_odometry(odom)
    if len(rows) != len(idx):
        raise ManifestError(f"odometry has {len(rows)} rows but there are {len(idx)} masks")
    gt = root / "groundtruth.tum"
    ann = root / "annotations.json"
    return DatasetManifest(root, calib, odom, masks, len(idx),
                           gt if gt.is_file() else None, ann if ann.is_file() else None)


# Calibration -------------------------------------------------------------

def calib_to_dict(cam: CameraModel, vc: VirtualCamera, frame_period: float) -> dict:
    return {
        "camera": {
            "f_m": cam.f_m,
            "h_c": cam.h_c,
            "alpha": cam.alpha,
            "image_size": list(cam.image_size),
            "pixel_pitch": cam.pixel_pitch,
            "principal_point": list(cam.principal_point),
        },
        "bev": {
            "K_v": [list(r) for r in vc.K_v],
            "X_c": vc.X_c,
            "Z_c": vc.Z_c,
            "bev_size": list(vc.bev_size),
        },
        "frame_period": frame_period,
    }


def write_calib(path, cam: CameraModel, vc: VirtualCamera, frame_period: float = 0.1) -> None:
    Path(path).write_text(yaml.safe_dump(calib_to_dict(cam, vc, frame_period), sort_keys=True))


def read_calib(path) -> tuple[CameraModel, VirtualCamera, float]:
    try:
        d = yaml.safe_load(Path(path).read_text())
        c, b = d["camera"], d["bev"]
        cam = CameraModel(c["f_m"], c["h_c"], c["alpha"], tuple(c["image_size"]), c["pixel_pitch"],
                          tuple(c["principal_point"]))
        vc = VirtualCamera(tuple(tuple(r) for r in b["K_v"]), b["X_c"], b["Z_c"], tuple(b["bev_size"]))
        return cam, vc, float(d.get("frame_period", 0.1))
    except (KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise ManifestError(f"{path}: bad calibration ({exc})") from exc


# Odometry ----------------------------------------------------------------

def write_odometry(path, rows: np.ndarray) -> None:
    np.savetxt(path, np.asarray(rows, float), fmt="%.9f", delimiter=",", header=ODOMETRY_HEADER, comments="")


def read_odometry(path) -> np.ndarray:
    path = Path(path)
    with path.open() as fp:
        header = fp.readline().strip()
    if header.replace(" ", "") != ODOMETRY_HEADER:
        raise ManifestError(f"{path}: expected header '{ODOMETRY_HEADER}'")
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if rows.size == 0:
        return np.zeros((0, 7))
    if rows.shape[1] != 7 or not np.all(np.isfinite(rows)):
        raise ManifestError(f"{path}: rows must hold 7 finite values")
    if np.any(np.diff(rows[:, 0]) <= 0):
        raise ManifestError(f"{path}: timestamps must increase strictly")
    return rows


# Masks -------------------------------------------------------------------

def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path, optimize=False)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


# Trajectories ------------------------------------------------------------

def write_tum(path, rows: np.ndarray) -> None:
    """Rows (t, x, y, z, roll, pitch, yaw) as ``t x y z qx qy qz qw``."""
    rows = np.asarray(rows, float)
    q = Rotation.from_euler("ZYX", rows[:, [6, 5, 4]]).as_quat()
    # Canonical sign keeps the text stable across platforms.
    q[q[:, 3] < 0] *= -1
    data = np.column_stack([rows[:, :4], q])
    np.savetxt(path, data, fmt="%.9f", delimiter=" ")


def read_tum(path) -> np.ndarray:
    """Returns (n, 7) rows (t, x, y, z, roll, pitch, yaw)."""
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if data.size == 0:
        return np.zeros((0, 7))
    if data.shape[1] != 8:
        raise ManifestError(f"{path}: TUM rows need 8 columns")
    ypr = Rotation.from_quat(data[:, 4:8]).as_euler("ZYX")
    return np.column_stack([data[:, :4], ypr[:, 2], ypr[:, 1], ypr[:, 0]])


def write_svg(path, trajectories: dict, size: int = 800, margin: float = 20.0) -> None:
    """Polyline overlay of named (n, >=2) x/y trajectories."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"]
    pts = np.vstack([np.asarray(t, float)[:, :2] for t in trajectories.values() if len(t)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = (size - 2 * margin) / max(float(np.max(hi - lo)), 1e-9)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             '<rect width="100%" height="100%" fill="white"/>']
    for k, (name, t) in enumerate(trajectories.items()):
        t = np.asarray(t, float)
        if not len(t):
            continue
        x = margin + (t[:, 0] - lo[0]) * scale
        y = size - margin - (t[:, 1] - lo[1]) * scale
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        c = colors[k % len(colors)]
        lines.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"><title>{name}</title></polyline>')
        lines.append(f'<text x="{margin}" y="{margin + 14 * (k + 1)}" fill="{c}" font-size="12">{name}</text>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
