import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xadapt import diffcore as dc
from v2xadapt.diffcore import Tensor
from v2xadapt.errors import ConfigError, DimensionError
from v2xadapt.gmsaa import (
    GmsaaConfig,
    GmsaaParams,
    ScenarioLabel,
    adjust_logits,
    blend_attention,
    extract_scenario_features,
    gate,
    gmsaa_forward,
    guided_attention,
    pool_tokens,
    scenario_context,
    scenario_logits,
)

SIM = np.array([[1.1, 0.1, 0.1], [0.1, 1.1, 0.05], [0.1, 0.05, 1.1]])


def _softmax_rows(m):
    e = np.exp(m - m.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_config_defaults():
    cfg = GmsaaConfig()
    assert (cfg.num_scenarios, cfg.temperature, cfg.blend) == (3, 0.5, 0.85)
    assert cfg.self_bias == (2.0, 2.5, 2.5)
    assert np.array_equal(np.array(cfg.similarity_init), SIM)
    assert (cfg.embed_init_scale, cfg.fusion_enhanced, cfg.fusion_raw) == (0.1, 0.7, 0.3)


@pytest.mark.parametrize("kw", [{"temperature": 0.0}, {"blend": 1.5}, {"fusion_raw": 0.4},
                                {"self_bias": (1.0, 2.0)}, {"feature_dim": 1}])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        GmsaaConfig(**kw)


def test_scenario_label_parse():
    assert ScenarioLabel.parse("Snow") is ScenarioLabel.SNOW
    assert ScenarioLabel.parse(2) is ScenarioLabel.FOG
    with pytest.raises(ConfigError):
        ScenarioLabel.parse("rain")


def test_orthogonal_embeddings_at_init():
    for seed in range(5):
        E = GmsaaParams.init(GmsaaConfig(), seed).embeddings.data
        assert np.allclose(E @ E.T, 0.01 * np.eye(3), atol=1e-8)


def test_pool_tokens():
    one = np.arange(6.0).reshape(2, 1, 3)
    assert np.array_equal(pool_tokens(one).data, one[:, 0])
    assert pool_tokens(np.array([[[1.0, 1.0], [3.0, 3.0]]])).data.tolist() == [[2.0, 2.0]]
    z = np.random.default_rng(0).normal(size=(2, 5, 3))
    assert np.allclose(pool_tokens(z).data, pool_tokens(z[:, ::-1]).data, atol=1e-15)


def test_pool_tokens_rejects_empty_and_wrong_rank():
    with pytest.raises(DimensionError):
        pool_tokens(np.ones((2, 0, 3)))
    with pytest.raises(DimensionError):
        pool_tokens(np.ones((2, 3)))


def test_scenario_logits_oracle(rng):
    cfg = GmsaaConfig(feature_dim=6)
    p = GmsaaParams.init(cfg, 3)
    for b in (p.b1, p.b2, p.b3):
        b.data = rng.normal(size=b.shape)
    x = rng.normal(size=(4, 6))
    relu = lambda v: np.maximum(v, 0)
    want = relu(relu(x @ p.w1.data + p.b1.data) @ p.w2.data + p.b2.data) @ p.w3.data + p.b3.data
    got = scenario_logits(x, p).data
    assert got.shape == (4, 3)
    assert np.max(np.abs(got - want)) < 1e-12


def test_scenario_logits_zero_input():
    p = GmsaaParams.init(GmsaaConfig(feature_dim=4), 0)
    assert np.array_equal(scenario_logits(np.zeros((1, 4)), p).data, np.zeros((1, 3)))
    with pytest.raises(DimensionError):
        scenario_logits(np.zeros((1, 5)), p)


def test_adjust_logits_examples():
    cfg = GmsaaConfig()
    assert adjust_logits(np.zeros((1, 3)), [ScenarioLabel.SNOW], cfg).data.tolist() == [[0.0, 2.5, -1.0]]
    assert adjust_logits(np.zeros((1, 3)), [ScenarioLabel.NORMAL], cfg).data.tolist() == [[2.0, 0.0, 0.0]]
    assert adjust_logits(np.ones((1, 3)), [ScenarioLabel.FOG], cfg).data.tolist() == [[2.0, 1.0, 4.5]]


def test_adjust_logits_without_penalty():
    cfg = GmsaaConfig(snow_fog_penalty=False)
    assert adjust_logits(np.zeros((1, 3)), [1], cfg).data.tolist() == [[0.0, 2.5, 0.0]]


def test_guided_attention_examples():
    assert np.allclose(guided_attention(np.zeros((3, 3)), 1).data, [1 / 3] * 3, atol=1e-15)
    g = guided_attention(SIM, ScenarioLabel.NORMAL).data
    assert g.shape == (3,)
    assert np.max(np.abs(g - _softmax_rows(SIM)[0])) < 1e-12
    assert np.allclose(g, [0.57611688, 0.21194156, 0.21194156], atol=1e-8)
    batch = guided_attention(SIM, [0, 2, 1]).data
    assert np.allclose(batch, _softmax_rows(SIM)[[0, 2, 1]], atol=1e-12)
    with pytest.raises(DimensionError):
        guided_attention(np.zeros((2, 3)), 0)


def test_blend_attention_examples():
    a = np.log([[0.6, 0.3, 0.1]])
    g = np.array([[0.5, 0.25, 0.25]])
    assert np.allclose(blend_attention(a, g, 0.85).data, [[0.515, 0.2575, 0.2275]], atol=1e-12)
    assert np.allclose(blend_attention(a, g, 1.0).data, g, atol=1e-15)
    assert np.allclose(blend_attention(a, g, 0.0).data, [[0.6, 0.3, 0.1]], atol=1e-12)
    with pytest.raises(ConfigError):
        blend_attention(a, g, -0.1)


def test_scenario_context(rng):
    E = rng.normal(size=(3, 5))
    assert np.array_equal(scenario_context(np.array([[0.0, 1.0, 0.0]]), E).data[0], E[1])
    assert np.allclose(scenario_context(np.full((1, 3), 1 / 3), E).data[0], E.mean(axis=0), atol=1e-12)
    w = rng.dirichlet(np.ones(3), size=4)
    assert np.max(np.abs(scenario_context(w, E).data - w @ E)) < 1e-12


def test_extractors(rng):
    cfg = GmsaaConfig(feature_dim=5)
    p = GmsaaParams.init(cfg, 7)
    c = rng.normal(size=(1, 5))
    assert np.array_equal(extract_scenario_features(c, [0], p).data, c)
    snow = extract_scenario_features(c, [1], p).data
    fog = extract_scenario_features(c, [2], p).data
    assert not np.allclose(snow, fog)
    m = p.extractors[1]
    want = np.maximum(c @ m.w1.data + m.b1.data, 0) @ m.w2.data + m.b2.data
    assert np.max(np.abs(snow - want)) < 1e-12
    assert np.array_equal(extract_scenario_features(c, [1], p, enabled=False).data, c)


def test_gate_range(rng):
    p = GmsaaParams.init(GmsaaConfig(feature_dim=4), 0)
    g = gate(rng.normal(size=(10, 4)) * 3, p).data
    assert g.shape == (10, 1) and np.all((g > 0) & (g < 1))
    p.gate_net.b2.data = np.array([0.0])
    p.gate_net.w2.data = np.zeros_like(p.gate_net.w2.data)
    assert np.all(gate(rng.normal(size=(3, 4)), p).data == 0.5)
    vals = []
    for b in (-1.0, -10.0, -100.0):
        p.gate_net.b2.data = np.array([b])
        vals.append(gate(np.zeros((1, 4)), p).data.item())
    assert vals[0] > vals[1] > vals[2] >= 0


def _straight_line(z, labels, p, cfg):
    zb = z.mean(axis=1)
    relu = lambda v: np.maximum(v, 0)
    a = relu(relu(zb @ p.w1.data + p.b1.data) @ p.w2.data + p.b2.data) @ p.w3.data + p.b3.data
    C = cfg.num_scenarios
    onehot = np.eye(C)[labels]
    pen = np.zeros_like(onehot)
    pen[labels == 1, 2] = -1
    pen[labels == 2, 1] = -1
    a2 = a / cfg.temperature + np.array(cfg.self_bias) * onehot + pen
    sm = np.exp(a2 - a2.max(axis=1, keepdims=True))
    sm /= sm.sum(axis=1, keepdims=True)
    w = (1 - cfg.blend) * sm + cfg.blend * _softmax_rows(p.similarity.data)[labels]
    c = w @ p.embeddings.data
    cd = c.copy()
    for k, m in p.extractors.items():
        rows = labels == k
        cd[rows] = (relu(c @ m.w1.data + m.b1.data) @ m.w2.data + m.b2.data)[rows]
    mix = cfg.fusion_enhanced * cd + cfg.fusion_raw * c
    cond = mix @ p.cond_w.data + p.cond_b.data
    g = 1 / (1 + np.exp(-(relu(zb @ p.gate_net.w1.data + p.gate_net.b1.data) @ p.gate_net.w2.data
                          + p.gate_net.b2.data)))
    x = z + (g * cond)[:, None, :]
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5)


def test_forward_matches_straight_line_oracle(rng):
    cfg = GmsaaConfig(feature_dim=6)
    p = GmsaaParams.init(cfg, 11)
    z = rng.normal(size=(5, 4, 6))
    labels = np.array([0, 1, 2, 1, 0])
    out, trace = gmsaa_forward(z, labels, p, cfg)
    assert out.shape == z.shape
    assert np.max(np.abs(out.data - _straight_line(z, labels, p, cfg))) < 1e-10
    assert np.allclose(trace.blended.sum(axis=1), 1.0, atol=1e-9)


def test_gate_closed_gives_plain_layer_norm(rng):
    cfg = GmsaaConfig(feature_dim=6)
    p = GmsaaParams.init(cfg, 2)
    p.gate_net.b2.data = np.array([-800.0])
    z = rng.normal(size=(3, 2, 6))
    out, trace = gmsaa_forward(z, [0, 1, 2], p, cfg)
    assert np.allclose(out.data, dc.layer_norm(Tensor(z)).data, atol=1e-12)


def test_ablation_flags(rng):
    z = rng.normal(size=(4, 3, 6))
    labels = [0, 1, 2, 2]
    p = GmsaaParams.init(GmsaaConfig(feature_dim=6), 5)
    _, tr = gmsaa_forward(z, labels, p, GmsaaConfig(feature_dim=6, adaptive_gating=False))
    assert np.all(tr.gate == 1.0)
    cfg = GmsaaConfig(feature_dim=6, similarity_guidance=False)
    _, tr = gmsaa_forward(z, labels, p, cfg)
    sm = np.exp(tr.adjusted) / np.exp(tr.adjusted).sum(axis=1, keepdims=True)
    assert np.allclose(tr.blended, sm, atol=1e-12)
    _, tr = gmsaa_forward(z, labels, p, GmsaaConfig(feature_dim=6, snow_fog_penalty=False))
    assert np.allclose(tr.adjusted - tr.logits / 0.5, np.eye(3)[labels] * [2.0, 2.5, 2.5])
    no_ext = GmsaaConfig(feature_dim=6, scenario_extractors=False)
    a, _ = gmsaa_forward(z, [0, 0, 0, 0], p, GmsaaConfig(feature_dim=6))
    b, _ = gmsaa_forward(z, [0, 0, 0, 0], p, no_ext)
    assert np.allclose(a.data, b.data)  # Normal already routes through the identity


def test_lambda_one_attention_ignores_input(rng):
    cfg = GmsaaConfig(feature_dim=6, blend=1.0)
    p = GmsaaParams.init(cfg, 0)
    _, t1 = gmsaa_forward(rng.normal(size=(2, 3, 6)), [1, 2], p, cfg)
    _, t2 = gmsaa_forward(rng.normal(size=(2, 3, 6)) * 9, [1, 2], p, cfg)
    assert np.array_equal(t1.blended, t2.blended)
    assert np.allclose(t1.blended, _softmax_rows(SIM)[[1, 2]], atol=1e-12)


@given(st.integers(0, 10_000), st.lists(st.integers(0, 2), min_size=1, max_size=6))
def test_blended_rows_convex(seed, labels):
    r = np.random.default_rng(seed)
    cfg = GmsaaConfig(feature_dim=4)
    p = GmsaaParams.init(cfg, seed)
    _, tr = gmsaa_forward(r.normal(size=(len(labels), 2, 4)) * 5, labels, p, cfg)
    assert np.all(tr.blended >= 0)
    assert np.allclose(tr.blended.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((tr.gate > 0) & (tr.gate < 1))


def test_forward_dimension_errors():
    cfg = GmsaaConfig(feature_dim=4)
    p = GmsaaParams.init(cfg, 0)
    with pytest.raises(DimensionError):
        gmsaa_forward(np.zeros((2, 3, 5)), [0, 1], p, cfg)
    with pytest.raises(DimensionError):
        gmsaa_forward(np.zeros((2, 3, 4)), [0], p, cfg)


def test_forward_gradients(rng):
    cfg = GmsaaConfig(feature_dim=4, layer_norm_affine=True)
    p = GmsaaParams.init(cfg, 9)
    named = {k: t.data for k, t in p.named_tensors().items()}
    z = rng.normal(size=(3, 2, 4))
    labels = [0, 1, 2]
    weights = Tensor(rng.normal(size=(3, 2, 4)))

    def loss(**kw):
        zz = kw.pop("z")
        out, _ = gmsaa_forward(zz, labels, p.replace(**kw), cfg)
        return dc.sum(out * weights)

    errs = dc.check_gradients(loss, {"z": z, **named})
    assert max(errs.values()) < 1e-4, errs


def test_trace_json_roundtrip(rng):
    cfg = GmsaaConfig(feature_dim=4)
    _, tr = gmsaa_forward(rng.normal(size=(2, 2, 4)), [1, 2], GmsaaParams.init(cfg, 0), cfg)
    doc = json.loads(tr.to_json())
    assert set(doc) == {"logits", "adjusted", "guided", "blended", "gate"}
    assert np.array_equal(np.array(doc["blended"]), tr.blended)
    recs = tr.to_records(scene_ids=["a", "b"])
    assert recs[1]["scene_id"] == "b" and recs[1]["label"] == 2
