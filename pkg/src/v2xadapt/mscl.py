"""Scenario-aware multi-task contrastive objective.

Two terms share inverse-frequency instance weights computed within the batch:

* a weighted image-to-text InfoNCE over the cross-modal similarity matrix,
* a pairwise regression of ``tanh`` image-image similarities onto +1 for
  same-scenario pairs and -1 otherwise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, ContractError, DimensionError
from .validation import check_unit_rows

UNIT_NORM_TOL = 1e-9


@dataclass
class MsclConfig:
    tau_mod: float = 0.07
    tau_d: float = 0.1
    lambda_d: float = 0.3
    weighting_enabled: bool = True
    scenario_term_enabled: bool = True
    modality_term_enabled: bool = True
    symmetric: bool = False  # adds the text->image direction when on

    def __post_init__(self):
        if not self.tau_mod > 0 or not self.tau_d > 0:
            raise ConfigError("contrastive temperatures must be positive")
        if not 0.0 <= self.lambda_d <= 1.0:
            raise ConfigError("lambda_d must lie in [0, 1]")

    def to_dict(self):
        return asdict(self)


@dataclass
class EmbeddingBatch:
    visual: Tensor
    textual: Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.visual = dc.as_tensor(self.visual)
        self.textual = dc.as_tensor(self.textual)
        self.labels = np.asarray(self.labels, dtype=int)
        check_embedding_batch(self.visual, self.textual, self.labels)


def check_embedding_batch(v, h, labels):
    if v.ndim != 2 or v.shape != h.shape:
        raise DimensionError(f"visual {v.shape} and textual {h.shape} must be equal-shaped matrices")
    if labels.shape != (v.shape[0],):
        raise DimensionError(f"{labels.size} labels for a batch of {v.shape[0]}")
    check_unit_rows(v.data, UNIT_NORM_TOL, "visual")
    check_unit_rows(h.data, UNIT_NORM_TOL, "textual")


@dataclass
class LossBreakdown:
    l_mod: float
    l_scenario: float
    lambda_d: float
    weights: list

    def to_dict(self):
        return {"l_mod": self.l_mod, "l_scenario": self.l_scenario,
                "lambda_d": self.lambda_d, "weights": self.weights}

    def to_json(self):
        return json.dumps(self.to_dict())


def instance_weights(labels) -> Tensor:
    """Inverse in-batch label frequency, normalized to sum to one."""
    labels = np.asarray(labels, dtype=int)
    if labels.ndim != 1 or labels.size == 0:
        raise ContractError("instance weights need at least one label")
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    inv_freq = 1.0 / counts[inverse]
    return Tensor(inv_freq / inv_freq.sum())


def uniform_weights(n) -> Tensor:
    return Tensor(np.full(n, 1.0 / n))


def modality_similarity(v, h, tau_mod) -> Tensor:
    if not tau_mod > 0:
        raise ConfigError("tau_mod must be positive")
    v, h = dc.as_tensor(v), dc.as_tensor(h)
    if v.shape != h.shape:
        raise DimensionError(f"visual {v.shape} and textual {h.shape} differ")
    return (v @ h.T) / tau_mod


def modality_loss(S, weights) -> Tensor:
    S, weights = dc.as_tensor(S), dc.as_tensor(weights)
    if np.any(weights.data < 0):
        raise ContractError("instance weights must be non-negative")
    B = S.shape[0]
    diag = Tensor(np.eye(B))
    nll = -dc.sum(dc.log_softmax(S, axis=1) * diag, axis=1)
    return dc.sum(weights * nll)


def scenario_similarity(v, tau_d) -> Tensor:
    if not tau_d > 0:
        raise ConfigError("tau_d must be positive")
    v = dc.as_tensor(v)
    return (v @ v.T) / tau_d


def scenario_targets(labels):
    labels = np.asarray(labels, dtype=int)
    same = (labels[:, None] == labels[None, :]).astype(float)
    return 2.0 * same - 1.0


def scenario_loss(R, labels, weights) -> Tensor:
    R, weights = dc.as_tensor(R), dc.as_tensor(weights)
    labels = np.asarray(labels, dtype=int)
    B = labels.size
    if B < 2:
        raise ContractError("scenario loss needs a batch of at least two")
    off = 1.0 - np.eye(B)
    pair_w = weights.reshape(B, 1) * weights.reshape(1, B) * Tensor(off)
    resid = dc.tanh(R) - Tensor(scenario_targets(labels))
    return dc.sum(pair_w * resid * resid) / dc.sum(pair_w)


def mscl_terms(v, h, labels, cfg: MsclConfig):
    """Unchecked loss assembly; returns ``(total, l_mod, l_scenario, weights)``.

    A trailing batch of one has no pairs, so the scenario term is skipped there
    instead of raising.
    """
    labels = np.asarray(labels, dtype=int)
    B = labels.size
    w = instance_weights(labels) if cfg.weighting_enabled else uniform_weights(B)
    zero = Tensor(0.0)
    l_mod = zero
    if cfg.modality_term_enabled:
        l_mod = modality_loss(modality_similarity(v, h, cfg.tau_mod), w)
        if cfg.symmetric:
            l_mod = 0.5 * (l_mod + modality_loss(modality_similarity(h, v, cfg.tau_mod), w))
    l_sc = zero
    if cfg.scenario_term_enabled and B >= 2:
        l_sc = scenario_loss(scenario_similarity(v, cfg.tau_d), labels, w)
    total = l_mod + cfg.lambda_d * l_sc
    return total, l_mod, l_sc, w


def mscl_loss(batch: EmbeddingBatch, cfg: MsclConfig | None = None):
    """Return ``(loss, LossBreakdown)`` for a validated embedding batch."""
    cfg = cfg or MsclConfig()
    if cfg.scenario_term_enabled and batch.labels.size < 2:
        raise ContractError("scenario loss needs a batch of at least two")
    total, l_mod, l_sc, w = mscl_terms(batch.visual, batch.textual, batch.labels, cfg)
    breakdown = LossBreakdown(l_mod.item(), l_sc.item(), cfg.lambda_d, w.data.tolist())
    return total, breakdown
