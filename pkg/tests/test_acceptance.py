"""Acceptance criteria, one test each.

Every test prints a ``PASS``/``FAIL`` line with the measured quantity and the
pinned tolerance; the lines are repeated in the pytest terminal summary.  The
file also runs standalone: ``python tests/test_acceptance.py``.
"""
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import brute_collision_rate, pointwise_l2, random_scenes  # noqa: E402
from v2xadapt import diffcore as dc  # noqa: E402
from v2xadapt.diffcore import Tensor  # noqa: E402
from v2xadapt.gmsaa import (  # noqa: E402
    GmsaaConfig,
    GmsaaParams,
    adjust_logits,
    gmsaa_forward,
    pool_tokens,
    scenario_context,
)
from v2xadapt.harness.config import RunConfig  # noqa: E402
from v2xadapt.harness.data import generate_synthetic  # noqa: E402
from v2xadapt.harness.exports import (  # noqa: E402
    attention_traces,
    diagonal_dominant,
    export_attention,
    export_embeddings,
)
from v2xadapt.harness.train import train  # noqa: E402
from v2xadapt.mscl import MsclConfig, instance_weights, mscl_terms, scenario_loss  # noqa: E402
from v2xadapt.objectives import distillation_loss, generation_loss  # noqa: E402
from v2xadapt.prompts import FOG, SNOW, build_prompt  # noqa: E402
from v2xadapt.scoring import METRICS, MetricRecord, composite_score, default_profiles  # noqa: E402
from v2xadapt.trajeval import (  # noqa: E402
    EvalSample,
    Obstacle,
    Trajectory,
    collision_rate,
    l2_at_horizon,
    scenario_report,
)

RESULTS = []

FD_STEP = 1e-4
FD_TOL = 1e-4
GRAD_SEEDS = 20
GRAD_BUDGET_S = 120.0
CONVEX_TOL = 1e-9
GUIDED_TOL = 1e-12
WEIGHT_TOL = 1e-12
SCORE_TOL = 1e-12
KD_PREFACTOR_TOL = 1e-10
SCENARIO_LIMIT = 1e-3
L2_TOL = 1e-12
SEPARATION_GAIN = 0.1
TOY_EPOCHS_MAX = 200
TOY_BUDGET_S = 300.0
GOLDEN = Path(__file__).parent / "golden"
EXPECTED_WEIGHTS = {
    "snow": {"lpips": 0.30, "brisque": 0.25, "fid": 0.20, "fade": 0.05, "semantic_iou": 0.20},
    "fog": {"lpips": 0.20, "brisque": 0.10, "fid": 0.25, "fade": 0.30, "semantic_iou": 0.15},
}


def report(num, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{num:>2}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------

PRIMITIVES = {
    "add": lambda x, c: dc.sum(x + c * x * x),
    "sub": lambda x, c: dc.sum((c - x) * x),
    "mul": lambda x, c: dc.sum(x * c),
    "div": lambda x, c: dc.sum(c / (x * x + 1.0)),
    "power": lambda x, c: dc.sum((x * x + 1.0) ** 1.5),
    "matmul": lambda x, c: dc.sum((x @ dc.transpose(c)) ** 2),
    "relu": lambda x, c: dc.sum(dc.relu(x) * c),
    "sigmoid": lambda x, c: dc.sum(dc.sigmoid(x) * c),
    "tanh": lambda x, c: dc.sum(dc.tanh(x) * c),
    "exp": lambda x, c: dc.sum(dc.exp(x) * c),
    "log": lambda x, c: dc.sum(dc.log(x * x + 0.5) * c),
    "sqrt": lambda x, c: dc.sum(dc.sqrt(x * x + 0.5) * c),
    "sum": lambda x, c: dc.sum(dc.sum(x, axis=1) * dc.sum(c, axis=1)),
    "mean": lambda x, c: dc.sum(dc.mean(x * c, axis=0, keepdims=True) ** 2),
    "reshape": lambda x, c: dc.sum(dc.reshape(x, (-1,)) * dc.reshape(c, (-1,))),
    "transpose": lambda x, c: dc.sum(dc.transpose(x) @ c),
    "softmax": lambda x, c: dc.sum(dc.softmax(x, axis=1) * c),
    "log_softmax": lambda x, c: dc.sum(dc.log_softmax(x, axis=0) * c),
    "layer_norm": lambda x, c: dc.sum(dc.layer_norm(x) * c),
    "l2_normalize": lambda x, c: dc.sum(dc.l2_normalize(x) * c),
}


def composed_loss_inputs(seed):
    """GMSAA forward feeding the contrastive, generation and distillation terms."""
    r = np.random.default_rng(seed)
    D, T, B, K, V = 4, 2, 4, 2, 5
    cfg = GmsaaConfig(feature_dim=D)
    params = GmsaaParams.init(cfg, r)
    labels = np.array([0, 1, 2, int(r.integers(0, 3))])
    # zero-initialised biases put ReLUs exactly on their kink whenever a layer
    # dies for a sample; jitter every parameter to check at a generic point
    inputs = {k: t.data + 0.05 * r.normal(size=t.shape) for k, t in params.named_tensors().items()}
    inputs["z"] = r.normal(size=(B, T, D))
    inputs["text"] = r.normal(size=(B, D))
    inputs["head"] = r.normal(size=(D, K * V)) * 0.5
    teacher = Tensor(r.normal(size=(B, K, V)))
    targets = r.integers(0, V, size=(B, K))
    mscl_cfg = MsclConfig()

    def loss(**kw):
        z, text, head = kw.pop("z"), kw.pop("text"), kw.pop("head")
        z_tilde, _ = gmsaa_forward(z, labels, params.replace(**kw), cfg)
        pooled = dc.mean(z_tilde, axis=1)
        l_mscl, _, _, _ = mscl_terms(dc.l2_normalize(pooled), dc.l2_normalize(text), labels, mscl_cfg)
        logits = (pooled @ head).reshape(B, K, V)
        return (generation_loss(logits, targets) + 0.2 * l_mscl
                + 0.5 * distillation_loss(logits, teacher, 2.0))

    return loss, inputs


def test_criterion_01_gradient_integrity():
    start = time.perf_counter()
    worst_prim, worst_comp, worst_tight = 0.0, 0.0, 0.0
    for seed in range(GRAD_SEEDS):
        r = np.random.default_rng(seed)
        for name, f in PRIMITIVES.items():
            x = r.normal(size=(3, 4))
            if name == "relu":
                x = np.where(np.abs(x) < 1e-2, 0.5, x)
            c = Tensor(r.normal(size=(3, 4)))
            worst_prim = max(worst_prim, dc.finite_difference_check(lambda t: f(t, c), x, h=FD_STEP))
        loss, inputs = composed_loss_inputs(seed)
        errs = dc.check_gradients(loss, inputs, h=FD_STEP)
        worst_comp = max(worst_comp, max(errs.values()))
    elapsed = time.perf_counter() - start
    # informational: the same composed check with a much smaller denominator floor
    for seed in range(GRAD_SEEDS):
        loss, inputs = composed_loss_inputs(seed)
        tight = dc.check_gradients(loss, inputs, h=FD_STEP, floor=1e-8)
        worst_tight = max(worst_tight, max(tight.values()))
    ok = worst_prim < FD_TOL and worst_comp < FD_TOL and elapsed < GRAD_BUDGET_S
    report(1, "gradient integrity", ok,
           f"primitives max rel err {worst_prim:.2e}, composed {worst_comp:.2e} over {GRAD_SEEDS} seeds "
           f"(tol {FD_TOL:g}, h={FD_STEP:g}, floor {dc.FD_FLOOR:g}; with floor 1e-8 {worst_tight:.2e}); "
           f"{elapsed:.1f}s (budget {GRAD_BUDGET_S:.0f}s)")


# 2 ---------------------------------------------------------------------------

def test_criterion_02_attention_convexity():
    r = np.random.default_rng(2)
    cfg = GmsaaConfig(feature_dim=8)
    guided_cfg = GmsaaConfig(feature_dim=8, blend=1.0)
    params = GmsaaParams.init(cfg, 0)
    S = np.array(cfg.similarity_init)
    softS = np.exp(S - S.max(axis=1, keepdims=True))
    softS /= softS.sum(axis=1, keepdims=True)
    worst_sum, min_entry, worst_guided = 0.0, np.inf, 0.0
    for _ in range(1000):
        z = r.normal(size=(1, 3, 8)) * r.uniform(0.1, 5.0)
        d = [int(r.integers(0, 3))]
        _, tr = gmsaa_forward(z, d, params, cfg)
        worst_sum = max(worst_sum, abs(tr.blended.sum() - 1.0))
        min_entry = min(min_entry, tr.blended.min())
        _, tg = gmsaa_forward(z, d, params, guided_cfg)
        worst_guided = max(worst_guided, np.max(np.abs(tg.blended[0] - softS[d[0]])))
    ok = worst_sum < CONVEX_TOL and min_entry >= 0 and worst_guided < GUIDED_TOL
    report(2, "attention convexity", ok,
           f"max |row sum - 1| {worst_sum:.1e} (tol {CONVEX_TOL:g}), min entry {min_entry:.3g}, "
           f"lambda=1 max dev from softmax(S) row {worst_guided:.1e} (tol {GUIDED_TOL:g})")


# 3 ---------------------------------------------------------------------------

def test_criterion_03_adjust_logits_golden():
    cfg = GmsaaConfig(temperature=0.5, self_bias=(2.0, 2.5, 2.5))
    cases = [
        (np.zeros((1, 3)), 1, [0.0, 2.5, -1.0]),
        (np.zeros((1, 3)), 0, [2.0, 0.0, 0.0]),
        (np.ones((1, 3)), 2, [2.0, 1.0, 4.5]),
    ]
    got = [adjust_logits(a, [d], cfg).data[0].tolist() for a, d, _ in cases]
    ok = all(g == want for g, (_, _, want) in zip(got, cases))
    report(3, "logit adjustment golden values", ok, f"snow/normal/fog -> {got} (bit-for-bit)")


# 4 ---------------------------------------------------------------------------

def test_criterion_04_instance_weights():
    w = instance_weights([0, 0, 1, 2]).data
    dev = float(np.max(np.abs(w - [1 / 6, 1 / 6, 1 / 3, 1 / 3])))
    r = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        labels = r.integers(0, 3, size=int(r.integers(1, 33)))
        worst = max(worst, abs(instance_weights(labels).data.sum() - 1.0))
    ok = dev < WEIGHT_TOL and worst < WEIGHT_TOL
    report(4, "instance weights", ok,
           f"[N,N,S,F] max dev {dev:.1e}; worst |sum - 1| over 1000 batches {worst:.1e} (tol {WEIGHT_TOL:g})")


# 5 ---------------------------------------------------------------------------

def direct_composite(row, weights):
    s = {
        "lpips": 1.0 - row["lpips"],
        "brisque": 1.0 - row["brisque"] / 100.0,
        "fid": 1.0 - row["fid"] / 100.0,
        "fade": 1.0 - row["fade"],
        "semantic_iou": row["semantic_iou"],
    }
    s = {k: min(max(v, 0.0), 1.0) for k, v in s.items()}
    return math.sqrt(sum(weights[m] * s[m] for m in METRICS))


def test_criterion_05_composite_oracle():
    r = np.random.default_rng(5)
    profiles = default_profiles()
    worst = 0.0
    for weather in ("snow", "fog"):
        for i in range(100):
            row = {"scene_id": f"{weather}-{i}", "weather": weather, "lpips": r.uniform(),
                   "brisque": r.uniform(0, 100), "fid": r.uniform(0, 120), "fade": r.uniform(0, 1.5),
                   "semantic_iou": r.uniform()}
            got = composite_score(MetricRecord.from_dict(row), profiles).composite
            worst = max(worst, abs(got - direct_composite(row, EXPECTED_WEIGHTS[weather])))
    tables_equal = all(profiles[w].weights == EXPECTED_WEIGHTS[w] for w in EXPECTED_WEIGHTS)
    sums = {w: math.fsum(profiles[w].weights.values()) for w in profiles}
    ok = worst < SCORE_TOL and tables_equal and all(abs(s - 1.0) < 1e-15 for s in sums.values())
    report(5, "composite score oracle", ok,
           f"max |diff| {worst:.1e} on 200 records (tol {SCORE_TOL:g}); default weights as expected: "
           f"{tables_equal}; sums {sums}")


# 6 ---------------------------------------------------------------------------

def test_criterion_06_distillation_identities():
    r = np.random.default_rng(6)
    x = r.normal(size=(3, 6, 16))
    self_kd = distillation_loss(x, x.copy(), 2.0).item()
    min_kd, worst_pref = np.inf, 0.0
    for _ in range(1000):
        s, t = r.normal(size=(2, 16)) * 3, r.normal(size=(2, 16)) * 3
        tau = float(r.uniform(0.5, 4.0))
        kd = distillation_loss(s, t, tau).item()
        min_kd = min(min_kd, kd)
        pt = np.exp(t / tau - np.max(t / tau, axis=-1, keepdims=True))
        pt /= pt.sum(axis=-1, keepdims=True)
        ps = np.exp(s / tau - np.max(s / tau, axis=-1, keepdims=True))
        ps /= ps.sum(axis=-1, keepdims=True)
        kl = float(np.sum(pt * (np.log(pt) - np.log(ps))))
        worst_pref = max(worst_pref, abs(kd - tau * tau * kl))
    ok = self_kd == 0.0 and min_kd >= 0.0 and worst_pref < KD_PREFACTOR_TOL
    report(6, "distillation identities", ok,
           f"L_kd(s=t)={self_kd!r}; min over 1000 pairs {min_kd:.3g}; "
           f"max |L_kd - tau^2 KL| {worst_pref:.1e} (tol {KD_PREFACTOR_TOL:g})")


# 7 ---------------------------------------------------------------------------

def test_criterion_07_scenario_limits():
    labels = np.array([0, 0, 1, 1, 2, 2])
    same = labels[:, None] == labels[None, :]
    R = np.where(same, 12.0, -12.0)
    w = instance_weights(labels)
    separated = scenario_loss(R, labels, w).item()
    flat = scenario_loss(np.zeros((5, 5)), [1] * 5, instance_weights([1] * 5)).item()
    ok = separated < SCENARIO_LIMIT and flat == 1.0
    report(7, "scenario loss limits", ok,
           f"perfect separation {separated:.2e} (< {SCENARIO_LIMIT:g}); one label with R=0 -> {flat!r}")


# 8 ---------------------------------------------------------------------------

def test_criterion_08_trajectory_oracles():
    scenes = random_scenes(8, 200)
    footprint = (1.8, 4.5)
    ours = collision_rate([(Trajectory(t, xy), [Obstacle(o) for o in obs]) for t, xy, obs in scenes],
                          footprint)
    oracle = brute_collision_rate([(xy, obs) for _, xy, obs in scenes], footprint)

    r = np.random.default_rng(8)
    worst_l2 = 0.0
    for _ in range(100):
        pt = np.unique(np.concatenate([[0.0, 5.0], r.uniform(0, 5, size=10)]))
        gt_t = np.linspace(0, 5, 9)
        pred, gt = Trajectory(pt, r.normal(size=(pt.size, 2))), Trajectory(gt_t, r.normal(size=(9, 2)))
        for h in (2.5, 3.5, 4.5):
            worst_l2 = max(worst_l2, abs(l2_at_horizon(pred, gt, h) - pointwise_l2(pt, pred.xy, gt_t, gt.xy, h)))

    samples = []
    T = np.arange(0, 5.01, 0.5)
    for i in range(30):
        lab = int(r.integers(0, 3))
        gt = Trajectory(T, np.column_stack([2 * T, np.zeros_like(T)]))
        obs = [Obstacle(np.array([[4, -2], [6, -2], [6, 2], [4, 2]], dtype=float) + [r.uniform(-20, 20), 0])]
        samples.append(EvalSample(f"s{i}", lab, gt.translated(*r.normal(size=2)), gt, obs,
                                  [{"payload_bytes": 10, "interval_seconds": 1.0}]))
    rep = scenario_report(samples, footprint=footprint)
    n = rep["overall"]["count"]
    worst_rec = 0.0
    for key in ("2.5s", "3.5s", "4.5s"):
        rec = sum(v["count"] * v["l2"][key] for v in rep["per_scenario"].values() if v["count"]) / n
        worst_rec = max(worst_rec, abs(rec - rep["overall"]["l2"][key]))
    cr = sum(v["count"] * v["collision_rate"] for v in rep["per_scenario"].values() if v["count"]) / n
    worst_rec = max(worst_rec, abs(cr - rep["overall"]["collision_rate"]))
    ok = ours == oracle and worst_l2 < L2_TOL and worst_rec < 1e-12
    report(8, "trajectory metric oracles", ok,
           f"collision rate {ours:.3f} vs brute force {oracle:.3f} on 200 scenes (exact); "
           f"L2 max dev {worst_l2:.1e} (tol {L2_TOL:g}); recombination dev {worst_rec:.1e}")


# 9, 10 -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_runs():
    run = RunConfig()
    assert run.epochs <= TOY_EPOCHS_MAX
    data = generate_synthetic(run.synthetic)
    out = {}
    start = time.perf_counter()
    for name in ("full", "wo_mscl", "wo_gmsaa"):
        out[name] = train(run.with_ablation(name), data)
    out["_elapsed"] = time.perf_counter() - start
    out["_data"] = data
    return out


def test_criterion_09_toy_qualitative(toy_runs):
    full, data = toy_runs["full"], toy_runs["_data"]
    agg = export_attention(attention_traces(full.model, data))
    diag = [round(agg["matrix"][k][k], 3) for k in range(3)]
    dominant = diagonal_dominant(agg["matrix"])
    _, stats = export_embeddings(full.model, data)
    _, stats_wo = export_embeddings(toy_runs["wo_mscl"].model, data)
    pre, post, post_wo = stats["pre"]["separation"], stats["post"]["separation"], stats_wo["post"]["separation"]
    elapsed = toy_runs["_elapsed"]
    ok = dominant and post - pre >= SEPARATION_GAIN and post > post_wo and elapsed < TOY_BUDGET_S
    report(9, "toy qualitative reproduction", ok,
           f"attention diagonal {diag} dominant={dominant}; separation pre {pre:.3f} post {post:.3f} "
           f"(gain >= {SEPARATION_GAIN}), w/o MSCL post {post_wo:.3f}; {RunConfig().epochs} epochs, "
           f"3 runs in {elapsed:.1f}s (budget {TOY_BUDGET_S:.0f}s)")


def test_criterion_10_ablation_ordering(toy_runs):
    losses = {k: toy_runs[k].heldout_gen_loss for k in ("full", "wo_gmsaa", "wo_mscl")}
    ok = losses["full"] <= losses["wo_gmsaa"] and losses["full"] <= losses["wo_mscl"]
    report(10, "ablation ordering", ok,
           "held-out generation loss " + ", ".join(f"{k} {v:.5f}" for k, v in losses.items()))


# 11 --------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path):
    env = dict(os.environ)
    env.pop("REALM_SEED", None)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        subprocess.run([sys.executable, "-m", "v2xadapt", "train-toy", "--out", str(out)],
                       check=True, capture_output=True, env=env)
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = outs[0] == outs[1]
    report(11, "train-toy determinism", same and "telemetry.jsonl" in outs[0],
           f"{len(outs[0])} artifacts byte-identical across two runs: {same}")


# 12 --------------------------------------------------------------------------

def test_criterion_12_prompt_fidelity():
    counts = []
    golden_ok = True
    for tpl in (SNOW, FOG):
        for camera in ("vehicle_front", "infrastructure"):
            prompt = build_prompt(tpl.weather, camera)
            golden_ok &= prompt == json.loads((GOLDEN / f"{tpl.weather}_{camera}.json").read_text())
            counts += [prompt["user"].count(b) for b in tpl.transformations + tpl.specifications]
    ok = golden_ok and all(c == 1 for c in counts) and len(counts) == 64
    report(12, "prompt fidelity", ok,
           f"{len(counts)} bullet occurrences all exactly once: {all(c == 1 for c in counts)}; "
           f"golden files match: {golden_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
