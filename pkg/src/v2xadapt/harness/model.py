"""Toy encoder/decoder stacks standing in for the vision-language backbone."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..diffcore import Tensor
from ..gmsaa import GmsaaParams, gmsaa_forward
from .config import RunConfig


def _dense(rng, fan_in, fan_out, trainable=True):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), requires_grad=trainable)


def _zeros(n, trainable=True):
    return Tensor(np.zeros(n), requires_grad=trainable)


@dataclass
class Heads:
    """Text encoder plus the fusion layer emitting ``v``, ``h`` and logits."""

    text_w: Tensor
    text_b: Tensor
    fuse_v: Tensor
    fuse_h: Tensor
    fuse_b: Tensor
    out_w: Tensor
    out_b: Tensor
    proj_v: Tensor
    proj_h: Tensor
    extra: dict = field(default_factory=dict)

    @classmethod
    def init(cls, rng, dim, hidden, steps, vocab, trainable=True, extra_inputs=0):
        heads = cls(
            text_w=_dense(rng, dim, dim, trainable), text_b=_zeros(dim, trainable),
            fuse_v=_dense(rng, dim, hidden, trainable), fuse_h=_dense(rng, dim, hidden, trainable),
            fuse_b=_zeros(hidden, trainable),
            out_w=_dense(rng, hidden, steps * vocab, trainable), out_b=_zeros(steps * vocab, trainable),
            proj_v=_dense(rng, dim, dim, trainable), proj_h=_dense(rng, dim, dim, trainable),
        )
        if extra_inputs:
            heads.extra["fuse_x"] = _dense(rng, extra_inputs, hidden, trainable)
        return heads

    def named_tensors(self):
        out = {k: getattr(self, k) for k in ("text_w", "text_b", "fuse_v", "fuse_h", "fuse_b",
                                             "out_w", "out_b", "proj_v", "proj_h")}
        out.update(self.extra)
        return out

    def __call__(self, pooled, desc, steps, vocab, extra=None):
        B = pooled.shape[0]
        h_raw = desc @ self.text_w + self.text_b
        pre = pooled @ self.fuse_v + h_raw @ self.fuse_h + self.fuse_b
        if extra is not None:
            pre = pre + extra @ self.extra["fuse_x"]
        fused = dc.tanh(pre)
        logits = (fused @ self.out_w + self.out_b).reshape(B, steps, vocab)
        v = dc.l2_normalize(pooled)
        h = dc.l2_normalize(h_raw @ self.proj_h)
        return v, h, logits


@dataclass
class ForwardOutput:
    z: Tensor
    z_tilde: Tensor
    v: Tensor
    h: Tensor
    logits: Tensor
    trace: object = None


class ToyModel:
    """Frozen image encoder -> scenario adaptation -> fusion heads (student)."""

    def __init__(self, cfg: RunConfig, rng=None):
        rng = np.random.default_rng(cfg.seed if rng is None else rng)
        syn = cfg.synthetic
        D = syn.feature_dim
        self.cfg = cfg
        q, _ = np.linalg.qr(rng.normal(size=(D, D)))
        self.image_w = Tensor(q)  # frozen
        self.gmsaa = GmsaaParams.init(cfg.gmsaa, rng)
        self.heads = Heads.init(rng, D, cfg.hidden, syn.horizon_steps, syn.vocab)

    def encode_images(self, tokens):
        tokens = np.asarray(tokens, dtype=float)
        if not self.cfg.use_infrastructure:
            tokens = tokens.copy()
            tokens[:, tokens.shape[1] // 2:, :] = 0.0
        return Tensor(tokens) @ self.image_w

    def forward(self, tokens, descriptions, labels) -> ForwardOutput:
        syn = self.cfg.synthetic
        z = self.encode_images(tokens)
        trace = None
        if self.cfg.use_gmsaa:
            z_tilde, trace = gmsaa_forward(z, labels, self.gmsaa, self.cfg.gmsaa)
        else:
            z_tilde = z
        desc = np.asarray(descriptions, dtype=float)
        if not self.cfg.use_description:
            desc = np.zeros_like(desc)
        v, h, logits = self.heads(dc.mean(z_tilde, axis=1), Tensor(desc), syn.horizon_steps, syn.vocab)
        return ForwardOutput(z, z_tilde, v, h, logits, trace)

    def trainable(self):
        out = {}
        if self.cfg.use_gmsaa:
            out.update({f"gmsaa.{k}": t for k, t in self.gmsaa.named_tensors().items()})
        out.update({f"heads.{k}": t for k, t in self.heads.named_tensors().items()})
        return out

    def snapshot(self):
        out = {"image_w": self.image_w.data.tolist()}
        out.update({f"gmsaa.{k}": t.data.tolist() for k, t in self.gmsaa.named_tensors().items()})
        out.update({f"heads.{k}": t.data.tolist() for k, t in self.heads.named_tensors().items()})
        return out

    def load_snapshot(self, snap):
        self.image_w = Tensor(snap["image_w"])
        for prefix, named in (("gmsaa.", self.gmsaa.named_tensors()), ("heads.", self.heads.named_tensors())):
            for k, t in named.items():
                t.data = np.array(snap[prefix + k], dtype=float)


class Teacher:
    """Wider frozen stack that also sees the scenario one-hot.

    It is fitted once on the training split before the student starts, then
    never updated.
    """

    def __init__(self, cfg: RunConfig, rng=None):
        rng = np.random.default_rng(rng)
        syn = cfg.synthetic
        self.cfg = cfg
        self.heads = Heads.init(rng, syn.feature_dim, cfg.teacher_hidden, syn.horizon_steps,
                                syn.vocab, extra_inputs=cfg.gmsaa.num_scenarios)

    def logits(self, z_pooled, descriptions, labels):
        syn = self.cfg.synthetic
        onehot = np.eye(self.cfg.gmsaa.num_scenarios)[np.asarray(labels, dtype=int)]
        _, _, logits = self.heads(dc.as_tensor(z_pooled), Tensor(descriptions), syn.horizon_steps,
                                  syn.vocab, extra=Tensor(onehot))
        return logits

    def freeze(self):
        for t in self.heads.named_tensors().values():
            t.requires_grad = False
            t.grad = None

    def parameter_hash(self):
        h = hashlib.sha256()
        for k, t in sorted(self.heads.named_tensors().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()
