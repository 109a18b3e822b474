"""Generation, distillation and total training losses."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DimensionError


@dataclass
class ObjectiveConfig:
    alpha: float = 0.2
    beta: float = 0.5
    tau_kd: float = 2.0
    kd_reduction: str = "sum"  # or "mean" over decoding steps

    def __post_init__(self):
        if not self.tau_kd > 0:
            raise ConfigError("distillation temperature must be positive")
        if self.kd_reduction not in ("sum", "mean"):
            raise ConfigError("kd_reduction must be 'sum' or 'mean'")

    def to_dict(self):
        return asdict(self)


def _targets(targets, shape):
    targets = np.asarray(targets, dtype=int)
    if targets.shape != shape[:-1]:
        raise DimensionError(f"targets {targets.shape} do not match logits {shape}")
    V = shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexError(f"target token outside vocabulary of size {V}")
    return targets


def one_hot(targets, vocab):
    out = np.zeros(targets.shape + (vocab,))
    np.put_along_axis(out, targets[..., None], 1.0, axis=-1)
    return out


def generation_loss(logits, targets) -> Tensor:
    """Summed token cross-entropy over all steps (and batch rows, if any)."""
    logits = dc.as_tensor(logits)
    if logits.ndim < 2:
        raise DimensionError("logits must be steps x vocab")
    targets = _targets(targets, logits.shape)
    mask = Tensor(one_hot(targets, logits.shape[-1]))
    return -dc.sum(dc.log_softmax(logits, axis=-1) * mask)


def distillation_loss(student, teacher, tau_kd=2.0, reduction="sum") -> Tensor:
    """``tau^2 * KL(teacher || student)`` on temperature-softened distributions.

    The teacher is detached.
    """
    student = dc.as_tensor(student)
    teacher = dc.as_tensor(teacher).detach()
    if student.shape != teacher.shape:
        raise DimensionError(f"student {student.shape} and teacher {teacher.shape} differ")
    if not tau_kd > 0:
        raise ConfigError("distillation temperature must be positive")
    if reduction not in ("sum", "mean"):
        raise ConfigError("reduction must be 'sum' or 'mean'")
    log_p_t = dc.log_softmax(teacher / tau_kd, axis=-1).data
    p_t = np.exp(log_p_t)
    log_p_s = dc.log_softmax(student / tau_kd, axis=-1)
    kl = dc.sum(Tensor(p_t) * (Tensor(log_p_t) - log_p_s))
    if reduction == "mean":
        kl = kl / int(np.prod(student.shape[:-1]))
    return (tau_kd * tau_kd) * kl


def total_loss(l_gen, l_mscl, l_kd, cfg: ObjectiveConfig | None = None) -> Tensor:
    cfg = cfg or ObjectiveConfig()
    return dc.as_tensor(l_gen) + cfg.alpha * dc.as_tensor(l_mscl) + cfg.beta * dc.as_tensor(l_kd)
