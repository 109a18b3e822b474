"""Weather-aware composite quality scores for generated long-tail scenes.

Raw metric values are ingested (they are produced elsewhere by perceptual
networks); here they are mapped onto higher-is-better [0, 1] scores and fused
into ``sqrt(sum_i w_i * s_i)`` with weather-specific weights.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ConfigError

log = logging.getLogger(__name__)

METRICS = ("lpips", "brisque", "fid", "fade", "semantic_iou")
WEATHERS = ("snow", "fog")

DEFAULT_WEIGHTS = {
    "snow": {"lpips": 0.30, "brisque": 0.25, "fid": 0.20, "fade": 0.05, "semantic_iou": 0.20},
    "fog": {"lpips": 0.20, "brisque": 0.10, "fid": 0.25, "fade": 0.30, "semantic_iou": 0.15},
}

_RAW_RANGES = {
    "lpips": (0.0, 1.0),
    "brisque": (0.0, 100.0),
    "fid": (0.0, math.inf),
    "fade": (0.0, math.inf),
    "semantic_iou": (0.0, 1.0),
}


@dataclass(frozen=True)
class WeightProfile:
    weather: str
    weights: dict

    def __post_init__(self):
        if set(self.weights) != set(METRICS):
            raise ConfigError(f"profile must weight exactly {METRICS}")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("profile weights must be non-negative")
        total = math.fsum(self.weights.values())
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"{self.weather} profile weights sum to {total}, not 1")

    def vector(self):
        return np.array([self.weights[m] for m in METRICS])


def default_profiles():
    return {w: WeightProfile(w, dict(DEFAULT_WEIGHTS[w])) for w in WEATHERS}


def load_profiles(path):
    with open(path) as fh:
        data = json.load(fh)
    return {w.lower(): WeightProfile(w.lower(), dict(weights)) for w, weights in data.items()}


# every default column must sum to one before anything gets scored
for _w in WEATHERS:
    WeightProfile(_w, DEFAULT_WEIGHTS[_w])


@dataclass
class MetricRecord:
    scene_id: str
    weather: str
    lpips: float
    brisque: float
    fid: float
    fade: float
    semantic_iou: float

    @classmethod
    def from_dict(cls, row):
        missing = [k for k in ("scene_id", "weather", *METRICS) if k not in row]
        if missing:
            raise ConfigError(f"record is missing {missing}")
        weather = str(row["weather"]).lower()
        if weather not in WEATHERS:
            raise ConfigError(f"weather must be snow or fog, got {row['weather']!r}")
        rec = cls(str(row["scene_id"]), weather, *(float(row[m]) for m in METRICS))
        rec.validate()
        return rec

    def validate(self):
        for m in METRICS:
            lo, hi = _RAW_RANGES[m]
            v = getattr(self, m)
            if not math.isfinite(v) or not lo <= v <= hi:
                raise ConfigError(f"{m}={v} outside [{lo}, {hi}]")

    def raw(self):
        return np.array([getattr(self, m) for m in METRICS])


@dataclass
class ScoredScene:
    scene_id: str
    weather: str
    scores: list
    composite: float
    accepted: bool
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {"scene_id": self.scene_id, "weather": self.weather,
                "scores": dict(zip(METRICS, self.scores)), "composite": self.composite,
                "accepted": self.accepted, "warnings": self.warnings}


def normalize_metric(name: str, m: float, warnings: list | None = None) -> float:
    """Map a raw metric value onto a higher-is-better score in [0, 1]."""
    if name in ("brisque", "fid"):
        s = 1.0 - m / 100.0
    elif name in ("lpips", "fade"):
        s = 1.0 - m
    elif name == "semantic_iou":
        s = m
    else:
        raise ConfigError(f"unknown metric {name!r}")
    if s < 0.0 or s > 1.0:
        msg = f"{name}={m} normalizes outside [0, 1]; clamped"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        s = min(max(s, 0.0), 1.0)
    return s


def composite_from_scores(scores, weights):
    """Square root of the weighted sum; works on floats or Tensors."""
    if isinstance(scores, dc.Tensor):
        return dc.sqrt(dc.sum(scores * dc.as_tensor(weights)))
    return math.sqrt(sum(w * s for w, s in zip(weights, scores)))


def composite_score(record: MetricRecord, profile=None, threshold: float = 0.5) -> ScoredScene:
    if profile is None:
        profile = default_profiles()[record.weather]
    elif isinstance(profile, dict):
        profile = profile[record.weather]
    warnings = []
    scores = [normalize_metric(m, getattr(record, m), warnings) for m in METRICS]
    composite = composite_from_scores(scores, profile.vector())
    return ScoredScene(record.scene_id, record.weather, scores, composite,
                       composite >= threshold, warnings)


@dataclass
class BatchSummary:
    per_weather: dict
    errors: list

    def to_dict(self):
        return {"per_weather": self.per_weather, "errors": self.errors}


def summarize(scored):
    per = {}
    for w in WEATHERS:
        vals = [s.composite for s in scored if s.weather == w]
        if vals:
            per[w] = {"count": len(vals), "accepted": sum(1 for s in scored if s.weather == w and s.accepted),
                      "mean": math.fsum(vals) / len(vals), "min": min(vals), "max": max(vals)}
        else:
            per[w] = {"count": 0, "accepted": 0, "mean": None, "min": None, "max": None}
    return per


def score_batch(rows, profiles=None, threshold: float = 0.5):
    """Score an iterable of dicts or MetricRecords.

    Malformed rows become error entries; processing continues.
    Returns ``(scored, BatchSummary)``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("threshold must lie in [0, 1]")
    profiles = profiles or default_profiles()
    scored, errors = [], []
    for i, row in enumerate(rows):
        try:
            rec = row if isinstance(row, MetricRecord) else MetricRecord.from_dict(row)
            rec.validate()
            scored.append(composite_score(rec, profiles, threshold))
        except (ConfigError, TypeError, ValueError) as exc:
            sid = row.get("scene_id") if isinstance(row, dict) else None
            errors.append({"index": i, "scene_id": sid, "error": str(exc)})
    return scored, BatchSummary(summarize(scored), errors)
