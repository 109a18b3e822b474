"""Seeded synthetic multimodal driving data.

Each sample carries dual-view visual tokens (first half vehicle view, second
half infrastructure view) drawn around a scenario cluster centre, a
description-feature vector derived from the same cluster (optionally echoing
the sample's own visual deviation), a manoeuvre intent that only the
description reveals, and a target trajectory token sequence derived from scenario and
intent.  Snow and fog centres sit close together so the two adverse
scenarios overlap visually.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..trajeval import Obstacle, Trajectory, rectangle
from .config import SyntheticConfig

# speed bin per scenario (normal, snow, fog) and lateral bins per intent
SPEED_BIN = (3, 1, 2)
SPEEDS = (2.0, 4.0, 6.0, 8.0)  # m/s per speed bin
LATERAL_OFFSETS = (-1.0, 0.0, 1.0, 2.0)  # metres per lateral bin
INTENT_PATTERNS = (
    (1, 1, 1, 1, 1, 1),  # keep lane
    (1, 2, 2, 3, 3, 3),  # shift left
    (1, 1, 0, 0, 0, 0),  # shift right
)
INTENTS = ("keep", "left", "right")


@dataclass
class SyntheticDataset:
    scene_ids: list
    labels: np.ndarray  # n
    tokens: np.ndarray  # n x T x D
    descriptions: np.ndarray  # n x D
    intents: np.ndarray  # n
    targets: np.ndarray  # n x K
    cfg: SyntheticConfig

    def __len__(self):
        return len(self.scene_ids)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return SyntheticDataset([self.scene_ids[i] for i in idx], self.labels[idx], self.tokens[idx],
                                self.descriptions[idx], self.intents[idx], self.targets[idx], self.cfg)

    def fingerprint(self):
        h = hashlib.sha256()
        for arr in (self.labels, self.tokens, self.descriptions, self.intents, self.targets):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\n".join(self.scene_ids).encode())
        return h.hexdigest()


def scenario_counts(n, imbalance_ratio):
    """``(normal, snow, fog)`` counts; the adverse remainder is split evenly."""
    normal = int(round(imbalance_ratio * n))
    rest = n - normal
    snow = rest - rest // 2
    return normal, snow, rest // 2


def target_tokens(label, intent):
    speed = SPEED_BIN[label]
    return np.array([4 * speed + b for b in INTENT_PATTERNS[intent]], dtype=int)


def decode_tokens(tokens, step_seconds=0.75):
    """Token sequence -> trajectory starting at the origin.

    A token encodes ``4 * speed_bin + lateral_bin``.
    """
    tokens = np.asarray(tokens, dtype=int)
    speeds = np.array([SPEEDS[t // 4] for t in tokens])
    lateral = np.array([LATERAL_OFFSETS[t % 4] for t in tokens])
    t = step_seconds * np.arange(len(tokens) + 1)
    x = np.concatenate([[0.0], np.cumsum(speeds * step_seconds)])
    y = np.concatenate([[0.0], lateral])
    return Trajectory(t, np.column_stack([x, y]))


def scene_obstacles(scene_id, seed):
    """A parked vehicle on the right shoulder, jittered per scene."""
    rng = np.random.default_rng(_stable_int(f"{seed}:obstacle:{scene_id}"))
    cx = rng.uniform(8.0, 30.0)
    return [Obstacle(rectangle(1.8, 4.5, (cx, -3.2 + rng.uniform(-0.3, 0.3)), 0.0))]


def _stable_int(text):
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticDataset:
    rng = np.random.default_rng(cfg.seed)
    D, T = cfg.feature_dim, cfg.tokens
    common = cfg.common_scale * _unit(rng.normal(size=D))
    normal_dir = _unit(rng.normal(size=D))
    adverse_dir = _unit(rng.normal(size=D))
    gap_dir = _unit(rng.normal(size=D))
    centers = np.stack([
        common + cfg.center_scale * normal_dir,
        common + cfg.center_scale * adverse_dir + 0.5 * cfg.snow_fog_gap * gap_dir,
        common + cfg.center_scale * adverse_dir - 0.5 * cfg.snow_fog_gap * gap_dir,
    ])
    position = 0.3 * rng.normal(size=(T, D))
    text_mix = rng.normal(size=(D, D)) / np.sqrt(D)
    # text follows the visual cluster, so it is as ambiguous between snow and fog
    text_centers = centers @ text_mix
    text_intents = rng.normal(size=(3, D))

    counts = scenario_counts(cfg.num_samples, cfg.imbalance_ratio)
    labels = np.concatenate([np.full(c, k, dtype=int) for k, c in enumerate(counts)])
    intents = rng.integers(0, 3, size=labels.size)
    noise = rng.normal(size=(labels.size, T, D))
    text_noise = rng.normal(size=(labels.size, D))

    tokens = centers[labels][:, None, :] + position[None] + cfg.noise_sigma * noise
    # pair_coupling > 0 lets descriptions echo the per-sample visual deviation
    descriptions = (text_centers[labels] + text_intents[intents]
                    + cfg.pair_coupling * cfg.noise_sigma * noise.mean(axis=1) @ text_mix * np.sqrt(T)
                    + cfg.text_noise * cfg.noise_sigma * text_noise)
    targets = np.stack([target_tokens(l, i) for l, i in zip(labels, intents)])
    scene_ids = [f"scene-{i:05d}" for i in range(labels.size)]
    return SyntheticDataset(scene_ids, labels, tokens, descriptions, intents, targets, cfg)


def _unit(x):
    return x / np.linalg.norm(x)


def split_holdout(data: SyntheticDataset, fraction=0.2, seed=0):
    """Seed-stable hash split; returns ``(train, heldout)``."""
    bucket = np.array([_stable_int(f"{seed}:{sid}") % 1000 for sid in data.scene_ids])
    held = bucket < int(round(fraction * 1000))
    return data.subset(np.flatnonzero(~held)), data.subset(np.flatnonzero(held))
