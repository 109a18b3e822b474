"""Gated multi-scenario adaptive attention.

Recalibrates a batch of visual token embeddings ``z`` (batch x tokens x dim)
using the scenario label of each sample:

1. pool tokens to a global descriptor,
2. score the scenarios with a three-layer ReLU projection,
3. temperature-scale the scores and add a self bias plus a snow/fog penalty,
4. blend the softmax with a prior read from a learnable similarity matrix,
5. attend to the scenario embedding matrix,
6. refine the context with a per-scenario extractor,
7. gate, condition, add back to every token and layer-normalize.

Batch rows are treated as row vectors, so every projection is ``x @ W``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, DimensionError

DEFAULT_SIMILARITY = ((1.1, 0.1, 0.1), (0.1, 1.1, 0.05), (0.1, 0.05, 1.1))


class ScenarioLabel(enum.IntEnum):
    NORMAL = 0
    SNOW = 1
    FOG = 2

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ConfigError(f"unknown scenario {value!r}") from None
        try:
            return cls(int(value))
        except ValueError:
            raise ConfigError(f"scenario label must be 0, 1 or 2, got {value!r}") from None


def as_labels(labels, num_scenarios=3):
    arr = np.array([int(ScenarioLabel.parse(v)) if num_scenarios == 3 else int(v) for v in labels])
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError("labels must be a non-empty 1-D sequence")
    if arr.min() < 0 or arr.max() >= num_scenarios:
        raise ConfigError(f"labels must lie in [0, {num_scenarios})")
    return arr


@dataclass
class GmsaaConfig:
    feature_dim: int = 16
    num_scenarios: int = 3
    hidden_dim: int | None = None  # d'
    hidden_dim2: int | None = None  # d''
    gate_hidden: int | None = None
    temperature: float = 0.5
    blend: float = 0.85
    self_bias: tuple = (2.0, 2.5, 2.5)
    similarity_init: tuple = DEFAULT_SIMILARITY
    embed_init_scale: float = 0.1
    fusion_enhanced: float = 0.7
    fusion_raw: float = 0.3
    # ablation switches
    snow_fog_penalty: bool = True
    similarity_guidance: bool = True
    scenario_extractors: bool = True
    adaptive_gating: bool = True
    orthogonal_init: bool = True
    layer_norm_affine: bool = False  # learned scale/shift after the final LN

    def __post_init__(self):
        self.self_bias = tuple(float(b) for b in self.self_bias)
        self.similarity_init = tuple(tuple(float(v) for v in row) for row in self.similarity_init)
        self.validate()

    @property
    def d1(self):
        return self.hidden_dim or self.feature_dim

    @property
    def d2(self):
        return self.hidden_dim2 or self.feature_dim

    @property
    def dg(self):
        return self.gate_hidden or self.feature_dim

    @property
    def effective_blend(self):
        return self.blend if self.similarity_guidance else 0.0

    def validate(self):
        C = self.num_scenarios
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be at least 2 (layer norm)")
        if C < 1:
            raise ConfigError("num_scenarios must be positive")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError("blend must lie in [0, 1]")
        if abs(self.fusion_enhanced + self.fusion_raw - 1.0) > 1e-12:
            raise ConfigError("fusion weights must sum to 1")
        if len(self.self_bias) != C:
            raise ConfigError("self_bias needs one entry per scenario")
        if len(self.similarity_init) != C or any(len(r) != C for r in self.similarity_init):
            raise ConfigError("similarity_init must be C x C")
        if self.snow_fog_penalty and C != 3:
            raise ConfigError("the snow/fog penalty is defined for exactly three scenarios")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown gmsaa keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Mlp2:
    """Two linear layers with a ReLU in between."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __call__(self, x):
        return dc.relu(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def tensors(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def _dense(rng, fan_in, fan_out):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def _mlp(rng, d_in, d_hidden, d_out):
    return Mlp2(_dense(rng, d_in, d_hidden), _zeros(d_hidden), _dense(rng, d_hidden, d_out), _zeros(d_out))


def orthogonal_rows(rng, rows, cols, scale):
    """``rows x cols`` matrix with mutually orthogonal rows of norm ``scale``."""
    if rows > cols:
        raise ConfigError("orthogonal init needs num_scenarios <= feature_dim")
    q, r = np.linalg.qr(rng.normal(size=(cols, rows)))
    q = q * np.sign(np.diag(r))
    return scale * q.T


@dataclass
class GmsaaParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor
    similarity: Tensor
    embeddings: Tensor
    extractors: dict = field(default_factory=dict)  # label -> Mlp2; Normal is identity
    gate_net: Mlp2 = None
    cond_w: Tensor = None
    cond_b: Tensor = None
    ln_scale: Tensor = None
    ln_shift: Tensor = None

    @classmethod
    def init(cls, cfg: GmsaaConfig, rng=None):
        rng = np.random.default_rng(rng)
        D, C = cfg.feature_dim, cfg.num_scenarios
        if cfg.orthogonal_init:
            emb = orthogonal_rows(rng, C, D, cfg.embed_init_scale)
        else:
            emb = rng.normal(0.0, cfg.embed_init_scale, size=(C, D))
        return cls(
            w1=_dense(rng, D, cfg.d1), b1=_zeros(cfg.d1),
            w2=_dense(rng, cfg.d1, cfg.d2), b2=_zeros(cfg.d2),
            w3=_dense(rng, cfg.d2, C), b3=_zeros(C),
            similarity=Tensor(np.array(cfg.similarity_init), requires_grad=True),
            embeddings=Tensor(emb, requires_grad=True),
            extractors={k: _mlp(rng, D, D, D) for k in range(1, C)},
            gate_net=_mlp(rng, D, cfg.dg, 1),
            cond_w=_dense(rng, D, D), cond_b=_zeros(D),
            ln_scale=Tensor(np.ones(D), requires_grad=True) if cfg.layer_norm_affine else None,
            ln_shift=_zeros(D) if cfg.layer_norm_affine else None,
        )

    def named_tensors(self):
        out = {
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "w3": self.w3, "b3": self.b3,
            "similarity": self.similarity, "embeddings": self.embeddings,
            "cond_w": self.cond_w, "cond_b": self.cond_b,
        }
        for k, mlp in sorted(self.extractors.items()):
            out.update({f"extractor{k}.{n}": t for n, t in mlp.tensors().items()})
        out.update({f"gate.{n}": t for n, t in self.gate_net.tensors().items()})
        if self.ln_scale is not None:
            out.update({"ln_scale": self.ln_scale, "ln_shift": self.ln_shift})
        return out

    def replace(self, **named):
        """Copy with some named tensors swapped (used by gradient checks)."""
        current = self.named_tensors()
        current.update(named)
        ext = {}
        for k in self.extractors:
            ext[k] = Mlp2(*(current[f"extractor{k}.{n}"] for n in ("w1", "b1", "w2", "b2")))
        gate = Mlp2(*(current[f"gate.{n}"] for n in ("w1", "b1", "w2", "b2")))
        flat = {n: current[n] for n in ("w1", "b1", "w2", "b2", "w3", "b3", "similarity",
                                        "embeddings", "cond_w", "cond_b")}
        return GmsaaParams(extractors=ext, gate_net=gate, ln_scale=current.get("ln_scale"),
                           ln_shift=current.get("ln_shift"), **flat)


@dataclass
class AttentionTrace:
    logits: np.ndarray
    adjusted: np.ndarray
    guided: np.ndarray
    blended: np.ndarray
    gate: np.ndarray
    labels: np.ndarray = None

    def to_records(self, scene_ids=None):
        rows = []
        for i in range(self.blended.shape[0]):
            row = {
                "logits": self.logits[i].tolist(),
                "adjusted": self.adjusted[i].tolist(),
                "guided": self.guided[i].tolist(),
                "blended": self.blended[i].tolist(),
                "gate": self.gate[i].tolist(),
            }
            if self.labels is not None:
                row["label"] = int(self.labels[i])
            if scene_ids is not None:
                row["scene_id"] = scene_ids[i]
            rows.append(row)
        return rows

    def to_json(self):
        return json.dumps({
            "logits": self.logits.tolist(), "adjusted": self.adjusted.tolist(),
            "guided": self.guided.tolist(), "blended": self.blended.tolist(),
            "gate": self.gate.tolist(),
        })


# ------------------------------------------------------------ operations


def pool_tokens(z) -> Tensor:
    z = dc.as_tensor(z)
    if z.ndim != 3:
        raise DimensionError(f"token embeddings must be batch x tokens x dim, got {z.shape}")
    return dc.mean(z, axis=1)


def scenario_logits(z_bar, params: GmsaaParams) -> Tensor:
    z_bar = dc.as_tensor(z_bar)
    if z_bar.ndim != 2 or z_bar.shape[1] != params.w1.shape[0]:
        raise DimensionError(f"pooled features {z_bar.shape} do not match W1 {params.w1.shape}")
    h = dc.relu(z_bar @ params.w1 + params.b1)
    h = dc.relu(h @ params.w2 + params.b2)
    return h @ params.w3 + params.b3


def _one_hot(labels, C):
    out = np.zeros((labels.size, C))
    out[np.arange(labels.size), labels] = 1.0
    return out


def penalty_vectors(labels, cfg: GmsaaConfig):
    """The cross-domain penalty for each label: -1 on the opposite adverse scenario."""
    C = cfg.num_scenarios
    out = np.zeros((labels.size, C))
    if not cfg.snow_fog_penalty:
        return out
    out[labels == ScenarioLabel.SNOW, ScenarioLabel.FOG] = -1.0
    out[labels == ScenarioLabel.FOG, ScenarioLabel.SNOW] = -1.0
    return out


def adjust_logits(a, labels, cfg: GmsaaConfig) -> Tensor:
    a = dc.as_tensor(a)
    labels = as_labels(labels, cfg.num_scenarios)
    onehot = _one_hot(labels, cfg.num_scenarios)
    bias = np.array(cfg.self_bias) * onehot + penalty_vectors(labels, cfg)
    return a / cfg.temperature + bias


def guided_attention(S, labels) -> Tensor:
    """Row ``d`` of the row-softmaxed similarity matrix, one per label.

    Accepts a single label (returns length-C) or a sequence (returns batch x C).
    """
    S = dc.as_tensor(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"similarity matrix must be square, got {S.shape}")
    single = np.ndim(labels) == 0
    labs = np.atleast_1d(np.asarray(labels, dtype=int))
    C = S.shape[0]
    if labs.min() < 0 or labs.max() >= C:
        raise ConfigError("label outside the similarity matrix")
    out = dc.matmul(Tensor(_one_hot(labs, C)), dc.softmax(S, axis=1))
    return out.reshape(C) if single else out


def blend_attention(adjusted, guided, blend: float) -> Tensor:
    if not 0.0 <= blend <= 1.0:
        raise ConfigError(f"blend must lie in [0, 1], got {blend}")
    return (1.0 - blend) * dc.softmax(adjusted, axis=-1) + blend * dc.as_tensor(guided)


def scenario_context(w, E) -> Tensor:
    return dc.matmul(w, E)


def extract_scenario_features(c, labels, params: GmsaaParams, enabled=True) -> Tensor:
    """Route each row through its scenario's extractor; Normal rows pass through."""
    c = dc.as_tensor(c)
    if not enabled:
        return c
    labels = np.asarray(labels, dtype=int)
    out = c * Tensor((labels == ScenarioLabel.NORMAL).astype(float)[:, None])
    for k, mlp in sorted(params.extractors.items()):
        mask = (labels == k).astype(float)[:, None]
        if mask.any():
            out = out + mlp(c) * Tensor(mask)
    return out


def gate(z_bar, params: GmsaaParams) -> Tensor:
    return dc.sigmoid(params.gate_net(dc.as_tensor(z_bar)))


def gmsaa_forward(z, labels, params: GmsaaParams, cfg: GmsaaConfig):
    """Recalibrate tokens; returns ``(z_tilde, AttentionTrace)``."""
    z = dc.as_tensor(z)
    if z.ndim != 3 or z.shape[2] != cfg.feature_dim:
        raise DimensionError(f"expected batch x tokens x {cfg.feature_dim}, got {z.shape}")
    labels = as_labels(labels, cfg.num_scenarios)
    if labels.size != z.shape[0]:
        raise DimensionError(f"{labels.size} labels for a batch of {z.shape[0]}")
    B, T, D = z.shape

    z_bar = pool_tokens(z)
    a = scenario_logits(z_bar, params)
    a_adj = adjust_logits(a, labels, cfg)
    w_guided = guided_attention(params.similarity, labels)
    w = blend_attention(a_adj, w_guided, cfg.effective_blend)
    c = scenario_context(w, params.embeddings)
    c_d = extract_scenario_features(c, labels, params, enabled=cfg.scenario_extractors)
    c_mix = cfg.fusion_enhanced * c_d + cfg.fusion_raw * c
    cond = c_mix @ params.cond_w + params.cond_b
    if cfg.adaptive_gating:
        g = gate(z_bar, params)
        update = g * cond
    else:
        g = Tensor(np.ones((B, 1)))
        update = cond
    z_tilde = dc.layer_norm(z + update.reshape(B, 1, D))
    if cfg.layer_norm_affine:
        z_tilde = z_tilde * params.ln_scale + params.ln_shift
    trace = AttentionTrace(
        logits=a.numpy(), adjusted=a_adj.numpy(), guided=w_guided.numpy(),
        blended=w.numpy(), gate=g.numpy(), labels=labels,
    )
    return z_tilde, trace
