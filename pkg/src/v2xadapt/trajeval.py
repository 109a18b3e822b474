"""Planned-trajectory metrics: horizon L2, collision rate, communication cost.

Obstacles are birds-eye convex polygons.  The ego footprint is a rectangle
centred on each waypoint and rotated to the local heading, and overlap is
decided with the separating-axis test.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, CoverageError

HORIZONS = (2.5, 3.5, 4.5)
SCENARIO_NAMES = ("normal", "snow", "fog")
TIMING_STAGES = ("preprocessing", "inference", "postprocessing", "residual")
_T_EPS = 1e-9


@dataclass
class Trajectory:
    t: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        if self.t.ndim != 1 or self.t.size != self.xy.shape[0] or self.t.size == 0:
            raise ContractError("trajectory needs matching timestamps and (x, y) points")
        if np.any(np.diff(self.t) <= 0):
            raise ContractError("trajectory timestamps must be strictly increasing")

    @classmethod
    def from_rows(cls, rows):
        arr = np.asarray(rows, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1:])

    def to_rows(self):
        return np.column_stack([self.t, self.xy]).tolist()

    def translated(self, dx, dy):
        return Trajectory(self.t, self.xy + np.array([dx, dy]))


# ------------------------------------------------------------------ L2


def l2_at_horizon(pred: Trajectory, gt: Trajectory, horizon: float, mode: str = "average") -> float:
    """Mean distance over predicted timestamps in ``[0, horizon]``.

    Ground truth is linearly interpolated at the predicted timestamps.  With
    ``mode="point"`` only the displacement at ``t == horizon`` is returned.
    """
    for name, tr in (("prediction", pred), ("ground truth", gt)):
        if tr.t[-1] < horizon - _T_EPS:
            raise CoverageError(f"{name} ends at {tr.t[-1]} s, before the {horizon} s horizon")
    if mode == "point":
        p = np.array([np.interp(horizon, pred.t, pred.xy[:, k]) for k in range(2)])
        g = np.array([np.interp(horizon, gt.t, gt.xy[:, k]) for k in range(2)])
        return float(np.hypot(*(p - g)))
    if mode != "average":
        raise ContractError(f"unknown L2 mode {mode!r}")
    sel = (pred.t >= -_T_EPS) & (pred.t <= horizon + _T_EPS)
    if not sel.any():
        raise CoverageError(f"no predicted waypoint in [0, {horizon}] s")
    ts = pred.t[sel]
    if ts[0] < gt.t[0] - _T_EPS:
        raise CoverageError("ground truth starts after the first predicted waypoint")
    g = np.column_stack([np.interp(ts, gt.t, gt.xy[:, k]) for k in range(2)])
    d = pred.xy[sel] - g
    return float(np.mean(np.hypot(d[:, 0], d[:, 1])))


# -------------------------------------------------------------- geometry


def polygon_area(poly):
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def check_polygon(poly):
    p = np.asarray(poly, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
        raise ContractError("polygon needs at least three (x, y) vertices")
    if polygon_area(p) <= 0:
        raise ContractError("polygon must be non-degenerate and counter-clockwise")
    return p


def _axes(poly):
    edges = np.roll(poly, -1, axis=0) - poly
    return np.column_stack([-edges[:, 1], edges[:, 0]])


def polygons_intersect(a, b) -> bool:
    """Separating-axis test for two convex polygons; touching counts as overlap."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def rectangle(width, length, center=(0.0, 0.0), heading=0.0):
    """Counter-clockwise rectangle; ``length`` runs along ``heading``."""
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    c, s = math.cos(heading), math.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(center, dtype=float)


def headings(xy):
    """Central differences inside, one-sided at the ends."""
    xy = np.asarray(xy, dtype=float)
    if xy.shape[0] < 2:
        raise ContractError("heading needs at least two waypoints")
    d = np.empty_like(xy)
    d[1:-1] = xy[2:] - xy[:-2]
    d[0] = xy[1] - xy[0]
    d[-1] = xy[-1] - xy[-2]
    return np.arctan2(d[:, 1], d[:, 0])


@dataclass
class Obstacle:
    """Convex footprint, optionally moved by a per-timestep ``(dx, dy, yaw)`` pose."""

    vertices: np.ndarray
    poses: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = check_polygon(self.vertices)
        if self.poses is not None:
            self.poses = np.asarray(self.poses, dtype=float).reshape(-1, 3)

    @classmethod
    def from_obj(cls, obj):
        if isinstance(obj, cls):
            return obj
        if isinstance(obj, dict):
            return cls(obj["vertices"], obj.get("poses"))
        return cls(obj)

    def at(self, k):
        if self.poses is None:
            return self.vertices
        dx, dy, yaw = self.poses[min(k, len(self.poses) - 1)]
        c, s = math.cos(yaw), math.sin(yaw)
        return self.vertices @ np.array([[c, -s], [s, c]]).T + np.array([dx, dy])

    def to_obj(self):
        out = {"vertices": self.vertices.tolist()}
        if self.poses is not None:
            out["poses"] = self.poses.tolist()
        return out


def ego_footprints(traj: Trajectory, footprint):
    """Ego polygons at every waypoint; ``footprint`` is ``(width, length)``."""
    w, l = footprint
    if not (w > 0 and l > 0):
        raise ContractError("ego footprint must have positive width and length")
    return [rectangle(w, l, p, h) for p, h in zip(traj.xy, headings(traj.xy))]


def trajectory_collides(traj: Trajectory, obstacles, footprint) -> bool:
    obstacles = [Obstacle.from_obj(o) for o in obstacles]
    for k, ego in enumerate(ego_footprints(traj, footprint)):
        if any(polygons_intersect(ego, ob.at(k)) for ob in obstacles):
            return True
    return False


def collision_rate(samples, footprint) -> float:
    """Fraction of ``(trajectory, obstacles)`` pairs with at least one overlap."""
    samples = list(samples)
    if not samples:
        return 0.0
    hits = sum(trajectory_collides(t, obs, footprint) for t, obs in samples)
    return hits / len(samples)


def communication_cost(frames) -> float:
    """Bits per second over ``{payload_bytes, interval_seconds}`` frames."""
    frames = list(frames)
    if not frames:
        raise ContractError("communication cost needs at least one frame")
    if any(f["interval_seconds"] <= 0 for f in frames):
        raise ContractError("frame intervals must be positive")
    bits = math.fsum(8.0 * f["payload_bytes"] for f in frames)
    return bits / math.fsum(f["interval_seconds"] for f in frames)


# --------------------------------------------------------------- reports


@dataclass
class EvalSample:
    scene_id: str
    scenario_label: int
    pred: Trajectory
    gt: Trajectory
    obstacles: list = field(default_factory=list)
    frames: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, row):
        return cls(str(row["scene_id"]), int(row["scenario_label"]),
                   Trajectory.from_rows(row["pred"]), Trajectory.from_rows(row["gt"]),
                   [Obstacle.from_obj(o) for o in row.get("obstacles", [])],
                   list(row.get("frames", [])))

    def to_dict(self):
        return {"scene_id": self.scene_id, "scenario_label": self.scenario_label,
                "pred": self.pred.to_rows(), "gt": self.gt.to_rows(),
                "obstacles": [o.to_obj() for o in self.obstacles], "frames": self.frames}


def _aggregate(samples, footprint, horizons, mode):
    n = len(samples)
    l2 = {f"{h}s": (math.fsum(l2_at_horizon(s.pred, s.gt, h, mode) for s in samples) / n if n else None)
          for h in horizons}
    vals = [v for v in l2.values() if v is not None]
    frames = [f for s in samples for f in s.frames]
    return {
        "count": n,
        "l2": l2,
        "l2_avg": math.fsum(vals) / len(vals) if vals else None,
        "collision_rate": collision_rate(((s.pred, s.obstacles) for s in samples), footprint) if n else None,
        "comm_cost_bps": communication_cost(frames) if frames else None,
    }


def scenario_report(samples, footprint=(1.8, 4.5), horizons=HORIZONS, mode="average", timing=None):
    """Overall and per-scenario metrics, ordered Normal, Snow, Fog."""
    samples = list(samples)
    report = {"overall": _aggregate(samples, footprint, horizons, mode), "per_scenario": {}}
    for label, name in enumerate(SCENARIO_NAMES):
        group = [s for s in samples if s.scenario_label == label]
        if group:
            report["per_scenario"][name] = _aggregate(group, footprint, horizons, mode)
    if timing is not None:
        report["timing"] = timing
    return report


def timing_table(stage_ms: dict) -> dict:
    """Latency per stage with percentage shares and the implied frame rate."""
    missing = [s for s in TIMING_STAGES if s not in stage_ms]
    if missing:
        raise ContractError(f"timing is missing stages {missing}")
    total = math.fsum(stage_ms[s] for s in TIMING_STAGES)
    rows = {s: {"ms": stage_ms[s], "percent": 100.0 * stage_ms[s] / total if total > 0 else 0.0}
            for s in TIMING_STAGES}
    return {"stages": rows, "total_ms": total, "fps": 1000.0 / total if total > 0 else None}


def format_percent(fraction):
    return f"{100.0 * fraction:.2f}%"


def load_samples(path):
    with open(path) as fh:
        return [EvalSample.from_dict(json.loads(line)) for line in fh if line.strip()]
