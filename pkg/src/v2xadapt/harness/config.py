"""Run configuration, ablation presets and config-file loading."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from ..errors import ConfigError
from ..gmsaa import GmsaaConfig
from ..mscl import MsclConfig
from ..objectives import ObjectiveConfig

SEED_ENV = "REALM_SEED"


@dataclass
class SyntheticConfig:
    feature_dim: int = 16
    tokens: int = 8
    num_samples: int = 100
    imbalance_ratio: float = 0.8  # fraction of Normal samples
    noise_sigma: float = 0.6
    snow_fog_gap: float = 0.35  # distance between the two adverse cluster centres
    center_scale: float = 1.5
    common_scale: float = 2.0
    text_noise: float = 0.3
    pair_coupling: float = 0.0  # share of the visual noise echoed in the description
    horizon_steps: int = 6
    vocab: int = 16
    step_seconds: float = 0.75
    payload_bytes: int = 1_550_000
    frame_interval: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma must be non-negative")
        if not 0.0 <= self.imbalance_ratio <= 1.0:
            raise ConfigError("imbalance_ratio must lie in [0, 1]")
        if self.tokens < 1 or self.num_samples < 1:
            raise ConfigError("tokens and num_samples must be positive")
        if self.vocab != 16:
            raise ConfigError("the toy trajectory tokenizer uses a vocabulary of 16")


# Each named row switches off exactly one component.
ABLATIONS = {
    "full": {},
    "wo_infrastructure_images": {"use_infrastructure": False},
    "wo_scene_description": {"use_description": False},
    "wo_gmsaa": {"use_gmsaa": False},
    "wo_mscl": {"use_mscl": False},
    "wo_orthogonal_init": {"orthogonal_init": False},
    "wo_snow_fog_separation": {"snow_fog_penalty": False},
    "wo_similarity_guidance": {"similarity_guidance": False},
    "wo_scenario_extractors": {"scenario_extractors": False},
    "wo_adaptive_gating": {"adaptive_gating": False},
    "wo_scenario_weighting": {"weighting_enabled": False},
    "wo_scenario_awareness": {"scenario_term_enabled": False},
    "wo_text_image_discrimination": {"modality_term_enabled": False},
}

_RUN_FLAGS = ("use_infrastructure", "use_description", "use_gmsaa", "use_mscl")
_GMSAA_FLAGS = ("orthogonal_init", "snow_fog_penalty", "similarity_guidance",
                "scenario_extractors", "adaptive_gating")
_MSCL_FLAGS = ("weighting_enabled", "scenario_term_enabled", "modality_term_enabled")


@dataclass
class RunConfig:
    epochs: int = 60
    learning_rate: float = 0.005
    momentum: float = 0.9
    batch_size: int = 4
    hidden: int = 32
    teacher_hidden: int = 64
    teacher_epochs: int = 60
    seed: int = 0
    out: str = "runs/toy"
    use_infrastructure: bool = True
    use_description: bool = True
    use_gmsaa: bool = True
    use_mscl: bool = True
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    gmsaa: GmsaaConfig = field(default_factory=GmsaaConfig)
    mscl: MsclConfig = field(default_factory=MsclConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.gmsaa.feature_dim != self.synthetic.feature_dim:
            raise ConfigError("gmsaa.feature_dim must equal synthetic.feature_dim")
        self.ablation_name()  # refuses undefined flag combinations

    def flags(self):
        out = {k: getattr(self, k) for k in _RUN_FLAGS}
        out.update({k: getattr(self.gmsaa, k) for k in _GMSAA_FLAGS})
        out.update({k: getattr(self.mscl, k) for k in _MSCL_FLAGS})
        return out

    def ablation_name(self):
        off = {k: v for k, v in self.flags().items() if v is False}
        for name, row in ABLATIONS.items():
            if off == row:
                return name
        raise ConfigError(f"flag combination {sorted(off)} does not match any ablation row")

    def with_ablation(self, name):
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        if self.ablation_name() != "full":
            raise ConfigError("ablations apply on top of the full configuration only")
        row = ABLATIONS[name]
        run_kw = {k: v for k, v in row.items() if k in _RUN_FLAGS}
        g_kw = {k: v for k, v in row.items() if k in _GMSAA_FLAGS}
        m_kw = {k: v for k, v in row.items() if k in _MSCL_FLAGS}
        return replace(self, gmsaa=replace(self.gmsaa, **g_kw), mscl=replace(self.mscl, **m_kw), **run_kw)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        nested = {"synthetic": SyntheticConfig, "gmsaa": GmsaaConfig, "mscl": MsclConfig,
                  "objective": ObjectiveConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                sub = nested[key]
                sub_known = {f.name for f in fields(sub)}
                bad = set(value or {}) - sub_known
                if bad:
                    raise ConfigError(f"unknown {key} keys: {sorted(bad)}")
                kwargs[key] = sub(**(value or {}))
            else:
                kwargs[key] = value
        if "gmsaa" not in kwargs and "synthetic" in kwargs:
            kwargs["gmsaa"] = GmsaaConfig(feature_dim=kwargs["synthetic"].feature_dim)
        return cls(**kwargs)


def load_config(path=None, ablation=None, env=None) -> RunConfig:
    """Read a YAML run config; ``REALM_SEED`` overrides both seeds."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    cfg = RunConfig.from_dict(data)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
        cfg = replace(cfg, seed=seed, synthetic=replace(cfg.synthetic, seed=seed))
    if ablation:
        cfg = cfg.with_ablation(ablation)
    return cfg
