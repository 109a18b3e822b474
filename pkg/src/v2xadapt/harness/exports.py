"""Analysis exports: attention heatmaps, embedding tables, eval samples, timing."""
from __future__ import annotations

import time

import numpy as np

from ..trajeval import EvalSample, SCENARIO_NAMES, timing_table
from .data import SyntheticDataset, decode_tokens, scene_obstacles
from .model import ToyModel


def attention_traces(model: ToyModel, data: SyntheticDataset):
    """One trace record per sample; empty when the attention module is bypassed."""
    if not model.cfg.use_gmsaa or len(data) == 0:
        return []
    out = model.forward(data.tokens, data.descriptions, data.labels)
    return out.trace.to_records(scene_ids=data.scene_ids)


def export_attention(traces, num_scenarios=3):
    """Mean blended attention grouped by input scenario.

    Row ``k`` averages the traces of samples labelled ``k``; scenarios with no
    samples get ``None``.
    """
    sums = np.zeros((num_scenarios, num_scenarios))
    counts = np.zeros(num_scenarios, dtype=int)
    for tr in traces:
        k = int(tr["label"])
        sums[k] += np.asarray(tr["blended"], dtype=float)
        counts[k] += 1
    matrix = [(sums[k] / counts[k]).tolist() if counts[k] else None for k in range(num_scenarios)]
    names = SCENARIO_NAMES[:num_scenarios]
    return {
        "scenarios": list(names),
        "matrix": matrix,
        "counts": counts.tolist(),
        "per_scenario": {names[k]: matrix[k] for k in range(num_scenarios)},
    }


def diagonal_dominant(matrix):
    for k, row in enumerate(matrix):
        if row is None:
            continue
        if any(row[k] <= row[j] for j in range(len(row)) if j != k):
            return False
    return True


def cosine_matrix(X):
    X = np.asarray(X, dtype=float)
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    return U @ U.T


def separation_statistic(X, labels):
    """Mean cosine over same-label pairs minus mean over cross-label pairs (i < j)."""
    labels = np.asarray(labels)
    cos = cosine_matrix(X)
    iu = np.triu_indices(len(labels), k=1)
    same = labels[iu[0]] == labels[iu[1]]
    vals = cos[iu]
    intra = float(vals[same].mean()) if same.any() else float("nan")
    inter = float(vals[~same].mean()) if (~same).any() else float("nan")
    return {"intra": intra, "inter": inter, "separation": intra - inter}


def export_embeddings(model: ToyModel, data: SyntheticDataset):
    """Pooled embeddings before and after scenario adaptation, plus separation stats."""
    out = model.forward(data.tokens, data.descriptions, data.labels)
    pre = out.z.data.mean(axis=1)
    post = out.z_tilde.data.mean(axis=1)
    rows = [{"scene_id": sid, "label": int(lab), "pre": pre[i].tolist(), "post": post[i].tolist()}
            for i, (sid, lab) in enumerate(zip(data.scene_ids, data.labels))]
    stats = {"pre": separation_statistic(pre, data.labels),
             "post": separation_statistic(post, data.labels)}
    return rows, stats


def predict_tokens(model: ToyModel, data: SyntheticDataset):
    out = model.forward(data.tokens, data.descriptions, data.labels)
    return out.logits.data.argmax(axis=-1)


def _frames(cfg):
    return [{"payload_bytes": cfg.payload_bytes, "interval_seconds": cfg.frame_interval}]


def eval_samples(model: ToyModel, data: SyntheticDataset):
    if len(data) == 0:
        return []
    syn = data.cfg
    preds = predict_tokens(model, data)
    return [
        EvalSample(sid, int(lab), decode_tokens(p, syn.step_seconds), decode_tokens(t, syn.step_seconds),
                   scene_obstacles(sid, syn.seed), _frames(syn))
        for sid, lab, p, t in zip(data.scene_ids, data.labels, preds, data.targets)
    ]


def timing_report(model: ToyModel, data: SyntheticDataset, repeats: int = 3):
    """Wall-clock latency per inference stage, per sample, in milliseconds."""
    stages = {"preprocessing": 0.0, "inference": 0.0, "postprocessing": 0.0}
    n = max(len(data), 1)
    wall = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        for i in range(len(data)):
            a = time.perf_counter()
            tokens = np.ascontiguousarray(data.tokens[i:i + 1], dtype=float)
            desc = np.ascontiguousarray(data.descriptions[i:i + 1], dtype=float)
            labels = data.labels[i:i + 1]
            b = time.perf_counter()
            out = model.forward(tokens, desc, labels)
            c = time.perf_counter()
            decode_tokens(out.logits.data.argmax(axis=-1)[0], data.cfg.step_seconds)
            d = time.perf_counter()
            stages["preprocessing"] += b - a
            stages["inference"] += c - b
            stages["postprocessing"] += d - c
        wall += time.perf_counter() - t0
    # loop and bookkeeping time not attributed to a stage
    stages["residual"] = max(wall - sum(stages.values()), 0.0)
    scale = 1000.0 / (repeats * n)
    return timing_table({k: v * scale for k, v in stages.items()})
