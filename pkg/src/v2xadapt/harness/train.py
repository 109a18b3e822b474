"""Toy training loop over the full objective."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..errors import ContractError, NonFiniteLossError
from ..mscl import mscl_terms
from ..objectives import distillation_loss, generation_loss, total_loss
from .config import RunConfig
from .data import SyntheticDataset, generate_synthetic, split_holdout
from .model import Teacher, ToyModel

log = logging.getLogger(__name__)


class SGD:
    """Plain gradient descent with optional heavy-ball momentum."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        for k, t in self.params.items():
            if t.grad is None:
                continue
            v = self.momentum * self.velocity[k] + t.grad
            self.velocity[k] = v
            t.data = t.data - self.lr * v


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def fit_teacher(teacher: Teacher, model: ToyModel, data: SyntheticDataset, run: RunConfig):
    params = teacher.heads.named_tensors()
    opt = SGD(params, run.learning_rate, run.momentum)
    rng = np.random.default_rng(run.seed + 7919)
    pooled = model.encode_images(data.tokens).data.mean(axis=1)
    for _ in range(run.teacher_epochs):
        for idx in batches(len(data), run.batch_size, rng):
            opt.zero_grad()
            logits = teacher.logits(pooled[idx], data.descriptions[idx], data.labels[idx])
            loss = generation_loss(logits, data.targets[idx]) / len(idx)
            dc.backward(loss)
            opt.step()
    teacher.freeze()


@dataclass
class StepLosses:
    l_gen: dc.Tensor
    l_mscl: dc.Tensor
    l_mod: dc.Tensor
    l_scenario: dc.Tensor
    l_kd: dc.Tensor
    l_total: dc.Tensor
    weights: np.ndarray
    output: object = None

    def record(self, run: RunConfig):
        return {
            "l_total": self.l_total.item(), "l_gen": self.l_gen.item(), "l_mscl": self.l_mscl.item(),
            "l_mod": self.l_mod.item(), "l_scenario": self.l_scenario.item(), "l_kd": self.l_kd.item(),
            "alpha": run.objective.alpha, "beta": run.objective.beta, "lambda_d": run.mscl.lambda_d,
            "weights": self.weights.tolist(),
        }


def compute_losses(model: ToyModel, teacher: Teacher, run: RunConfig, data: SyntheticDataset, idx):
    """Forward one batch and assemble every loss term (per-sample means)."""
    B = len(idx)
    tokens, desc, labels = data.tokens[idx], data.descriptions[idx], data.labels[idx]
    out = model.forward(tokens, desc, labels)
    l_gen = generation_loss(out.logits, data.targets[idx]) / B
    zero = dc.Tensor(0.0)
    if run.use_mscl:
        l_mscl, l_mod, l_sc, w = mscl_terms(out.v, out.h, labels, run.mscl)
        weights = w.data
    else:
        l_mscl = l_mod = l_sc = zero
        weights = np.full(B, 1.0 / B)
    if run.objective.beta != 0.0:
        t_logits = teacher.logits(out.z.data.mean(axis=1), desc, labels)
        l_kd = distillation_loss(out.logits, t_logits, run.objective.tau_kd, run.objective.kd_reduction) / B
    else:
        l_kd = zero
    l_total = total_loss(l_gen, l_mscl, l_kd, run.objective)
    return StepLosses(l_gen, l_mscl, l_mod, l_sc, l_kd, l_total, weights, out)


@dataclass
class RunArtifacts:
    run: RunConfig
    model: ToyModel
    teacher: Teacher
    train: SyntheticDataset
    heldout: SyntheticDataset
    data: SyntheticDataset
    telemetry: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    teacher_hash_before: str = ""
    teacher_hash_after: str = ""
    heldout_gen_loss: float = math.nan


def evaluate_gen_loss(model, data: SyntheticDataset):
    if len(data) == 0:
        return math.nan
    out = model.forward(data.tokens, data.descriptions, data.labels)
    return generation_loss(out.logits, data.targets).item() / len(data)


def train(run: RunConfig, data: SyntheticDataset | None = None, holdout: float = 0.2) -> RunArtifacts:
    data = data if data is not None else generate_synthetic(run.synthetic)
    if len(data) == 0:
        raise ContractError("training needs a non-empty dataset")
    train_set, heldout = split_holdout(data, holdout, run.synthetic.seed)
    if len(train_set) == 0:
        raise ContractError("the holdout split left no training samples")
    model = ToyModel(run)
    teacher = Teacher(run, rng=run.seed + 1)
    fit_teacher(teacher, model, train_set, run)
    art = RunArtifacts(run, model, teacher, train_set, heldout, data)
    art.teacher_hash_before = teacher.parameter_hash()

    opt = SGD(model.trainable(), run.learning_rate, run.momentum)
    rng = np.random.default_rng(run.seed)
    step = 0
    for epoch in range(run.epochs):
        sums = {}
        n_steps = 0
        for idx in batches(len(train_set), run.batch_size, rng):
            opt.zero_grad()
            losses = compute_losses(model, teacher, run, train_set, idx)
            rec = losses.record(run)
            if not all(math.isfinite(rec[k]) for k in ("l_total", "l_gen", "l_mscl", "l_kd")):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch} step {step}",
                    dump={"epoch": epoch, "step": step, "scene_ids": [train_set.scene_ids[i] for i in idx],
                          "losses": rec},
                )
            dc.backward(losses.l_total)
            opt.step()
            art.telemetry.append({"epoch": epoch, "step": step, **rec})
            for k in ("l_total", "l_gen", "l_mscl", "l_mod", "l_scenario", "l_kd"):
                sums[k] = sums.get(k, 0.0) + rec[k]
            n_steps += 1
            step += 1
        summary = {"epoch": epoch, **{k: v / n_steps for k, v in sums.items()},
                   "heldout_l_gen": evaluate_gen_loss(model, heldout)}
        art.epochs.append(summary)
        log.debug("epoch %d %s", epoch, summary)
    art.teacher_hash_after = teacher.parameter_hash()
    art.heldout_gen_loss = evaluate_gen_loss(model, heldout)
    return art


def _dump(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(_dump(row) + "\n")


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n")


def save_run(art: RunArtifacts, out_dir: str):
    """Write every deterministic artifact of a finished run under ``out_dir``."""
    from .exports import attention_traces, eval_samples, export_attention, export_embeddings
    from ..trajeval import scenario_report

    os.makedirs(out_dir, exist_ok=True)
    run = art.run
    write_json(os.path.join(out_dir, "config.json"), {**run.to_dict(), "ablation": run.ablation_name()})
    write_jsonl(os.path.join(out_dir, "telemetry.jsonl"), art.telemetry)
    write_jsonl(os.path.join(out_dir, "epochs.jsonl"), art.epochs)
    write_json(os.path.join(out_dir, "params.json"), art.model.snapshot())

    traces = attention_traces(art.model, art.data)
    write_jsonl(os.path.join(out_dir, "attention_traces.jsonl"), traces)
    if traces:
        write_json(os.path.join(out_dir, "attention_aggregate.json"), export_attention(traces))

    rows, stats = export_embeddings(art.model, art.data)
    write_jsonl(os.path.join(out_dir, "embeddings.jsonl"), rows)
    write_json(os.path.join(out_dir, "embedding_stats.json"), stats)

    samples = eval_samples(art.model, art.heldout)
    write_jsonl(os.path.join(out_dir, "eval_samples.jsonl"), [s.to_dict() for s in samples])
    write_json(os.path.join(out_dir, "eval_report.json"), scenario_report(samples))

    write_json(os.path.join(out_dir, "summary.json"), {
        "ablation": run.ablation_name(),
        "data_fingerprint": art.data.fingerprint(),
        "train_size": len(art.train), "heldout_size": len(art.heldout),
        "final_heldout_l_gen": art.heldout_gen_loss,
        "final_l_total": art.telemetry[-1]["l_total"] if art.telemetry else None,
        "teacher_hash_before": art.teacher_hash_before,
        "teacher_hash_after": art.teacher_hash_after,
        "separation_pre": stats["pre"]["separation"], "separation_post": stats["post"]["separation"],
    })
