"""Acceptance gate: one test per primary criterion, one PASS/FAIL line each.

Run with -s to see the per-criterion lines. The end-to-end and ablation
criteria train real models and together take on the order of ten minutes.
"""
import functools
import json
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from lacon.cli import main as cli_main
from lacon.curation import (
    FILTER_PRESETS,
    Manifest,
    SampleRecord,
    apply_filter,
    build_manifest,
    median_quality,
)
from lacon.encoder import ATTRIBUTES, default_anchor_specs, init_strategy, rbf_weights
from lacon.flowmodel import (
    TrainConfig,
    VelocityNet,
    fm_loss_given,
    load_checkpoint,
    make_synthetic_corpus,
    save_checkpoint,
    train,
)
from lacon.images import GrayImage, RgbImage, save_png
from lacon.sampler import (
    GuidanceSpec,
    SamplerConfig,
    euler_sample,
    lacon_a_sample,
    lacon_a_velocity,
    measure_outputs,
)
from lacon.signals import (
    QualityVector,
    clarity,
    corner_tag_wat_scorer,
    entropy,
    heuristic_aes_scorer,
    luminance,
)
from oracles import filter_oracle

SPECS = default_anchor_specs()


def criterion(name, limit_s):
    """Print exactly one PASS/FAIL line for the wrapped criterion."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.monotonic()
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"FAIL [PRIMARY] {name} ({time.monotonic() - t0:.1f}s)")
                raise
            elapsed = time.monotonic() - t0
            verdict = "PASS" if elapsed <= limit_s else "FAIL"
            print(f"{verdict} [PRIMARY] {name} ({elapsed:.1f}s, limit {limit_s:.0f}s)")
            assert elapsed <= limit_s, f"runtime {elapsed:.1f}s over {limit_s}s limit"

        return wrapper

    return deco


# --- shared expensive artifacts ----------------------------------------------

E2E_SEED = 123
TRAIN_SEED = 0
N_IMAGES = 5000


@pytest.fixture(scope="session")
def e2e_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    corpus = make_synthetic_corpus(N_IMAGES, E2E_SEED, 16)
    entries = []
    for i, (img, cls) in enumerate(corpus):
        p = root / f"img_{i:05d}.png"
        save_png(img, p)
        entries.append((f"img_{i:05d}", str(p), cls))
    return build_manifest(entries, heuristic_aes_scorer(), corner_tag_wat_scorer(), 16)


@pytest.fixture(scope="session")
def e2e_checkpoint(e2e_manifest):
    ckpt, curve = train(e2e_manifest, TrainConfig(seed=TRAIN_SEED))
    assert all(np.isfinite(l) for _, l in curve)
    return ckpt


# --- criteria ----------------------------------------------------------------


@criterion("GCC correctness", 1.0)
def test_gcc_correctness():
    rng = np.random.default_rng(0)
    ranges = {"aes": (0, 10), "wat": (0, 1), "cla": (0, 3000), "ent": (0, 8), "luma": (0, 1)}
    attrs = list(ATTRIBUTES)
    for _ in range(1000):
        attr = attrs[rng.integers(len(attrs))]
        spec = SPECS[attr]
        lo, hi = ranges[attr]
        s = rng.uniform(lo, hi)
        w = rbf_weights(s, spec)
        assert abs(w.sum() - 1.0) <= 1e-12
        assert (w > 0).all()
        nearest = int(np.argmin(np.abs(np.asarray(spec.anchors) - np.clip(s, lo, hi))))
        assert int(np.argmax(w)) == nearest
    for attr in attrs:
        spec = SPECS[attr]
        mid = 0.5 * (spec.anchors[3] + spec.anchors[4])
        w = rbf_weights(mid, spec)
        top = np.sort(w)[-2:]
        assert abs(top[0] - top[1]) <= 1e-12


@criterion("Clipping at cla >= 3000", 1.0)
def test_clipping():
    ref = rbf_weights(3000.0, SPECS["cla"])
    for v in [3000.0, 3000.5, 3500.0, 1e4, 1e6, 1e12]:
        assert np.array_equal(rbf_weights(v, SPECS["cla"]), ref)


@criterion("Signal trivia", 1.0)
def test_signal_trivia():
    flat = GrayImage(np.full((16, 16), 0.25))
    assert clarity(flat) == 0.0
    assert entropy(flat) == 0.0
    ramp = GrayImage((np.arange(256, dtype=np.float64) / 255.0).reshape(16, 16))
    assert entropy(ramp) == pytest.approx(8.0, abs=1e-9)
    assert luminance(RgbImage(np.ones((4, 4, 3)))) == 1.0
    assert luminance(RgbImage(np.zeros((4, 4, 3)))) == 0.0


@criterion("Gradient checks", 30.0)
def test_gradient_checks():
    cfg = TrainConfig(seed=1, hidden=(8,), d=4, d_y=4, side=2)
    rng = np.random.default_rng(2)
    strategy = init_strategy("gcc", SPECS, cfg.d, rng)
    net = VelocityNet.init(cfg, rng)
    B = 3
    x = rng.uniform(-1, 1, size=(B, 4))
    cls = rng.integers(0, 2, size=B)
    scores = np.stack([
        QualityVector(4.0, 0.3, 900.0, 5.0, 0.6).as_array(),
        QualityVector(8.0, 0.9, 100.0, 1.0, 0.2).as_array(),
        QualityVector(1.0, 0.5, 2500.0, 7.0, 0.9).as_array(),
    ])
    t = rng.random(B)
    eps = rng.standard_normal((B, 4))
    drop = np.array([False, True, False])
    _, grads = fm_loss_given(net, strategy, x, cls, scores, t, eps, drop)
    all_params = dict(net.params)
    for name, arr in strategy.params().items():
        all_params[f"strategy/{name}"] = arr
    h = 1e-5
    probe_rng = np.random.default_rng(3)
    for name, arr in all_params.items():
        flat = arr.ravel()
        idx = range(flat.size) if flat.size <= 80 else probe_rng.integers(0, flat.size, 60)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = fm_loss_given(net, strategy, x, cls, scores, t, eps, drop, want_grads=False)
            flat[j] = orig - h
            lm, _ = fm_loss_given(net, strategy, x, cls, scores, t, eps, drop, want_grads=False)
            flat[j] = orig
            fd = (lp - lm) / (2 * h)
            got = grads.get(name, np.zeros_like(arr)).ravel()[j]
            # abs floor covers finite-difference roundoff on near-zero grads
            assert got == pytest.approx(fd, rel=1e-4, abs=1e-8), f"{name}[{j}]"


@criterion("Guidance degeneracy", 10.0)
def test_guidance_degeneracy():
    cfg = TrainConfig(seed=4, hidden=(32,), d=8, d_y=8, side=4)
    rng = np.random.default_rng(5)
    strategy = init_strategy("gcc", SPECS, cfg.d, rng)
    net = VelocityNet.init(cfg, rng)
    s_base = QualityVector(5.0, 0.5, 1500.0, 4.0, 0.5)
    g = GuidanceSpec.from_target_values(3.0, {}, s_base)
    scfg = SamplerConfig(steps=25, seed=6, count=8, mode="LACON-A")
    a = lacon_a_sample(net, strategy, 0, g, scfg)
    b = euler_sample(net, strategy, 0, s_base, scfg, 3.0)
    assert np.array_equal(a, b)
    # omega_c = 1 as well: per-step velocity equals v_text exactly
    g1 = GuidanceSpec.from_target_values(1.0, {}, s_base)
    x = np.random.default_rng(7).standard_normal((8, net.D))
    t = np.full(8, 0.6)
    v = lacon_a_velocity(net, strategy, x, t, 1, g1)
    cond = np.broadcast_to(strategy.embed(s_base), (8, 5, cfg.d)).copy()
    v_text = net.forward(x, t, np.ones(8, dtype=int), cond)
    assert np.array_equal(v, v_text)


@criterion("Filter protocol", 5.0)
def test_filter_protocol():
    table2 = {
        "ratio5": (5.0, 0.3, 800.0, 6.0, 0.1, 0.9),
        "ratio30": (4.0, 0.5, 600.0, 4.0, 0.1, 0.9),
        "ratio50": (3.5, 0.6, 500.0, 3.0, 0.1, 0.9),
        "ratio65": (3.0, 0.7, 400.0, 2.0, 0.1, 0.9),
        "ratio80": (3.0, 0.8, 200.0, 2.0, 0.1, 0.9),
    }
    assert set(FILTER_PRESETS) == set(table2)
    for name, (aes, wat, cla, ent, llo, lhi) in table2.items():
        t = FILTER_PRESETS[name]
        assert (t.aes_min, t.wat_max, t.cla_min, t.ent_min, t.luma_min, t.luma_max) == (
            aes, wat, cla, ent, llo, lhi,
        )
    rng = np.random.default_rng(8)
    recs = tuple(
        SampleRecord(
            f"r{i:05d}", "", int(rng.integers(0, 2)),
            QualityVector(
                rng.uniform(0, 10), rng.uniform(0, 1), rng.uniform(0, 3000),
                rng.uniform(0, 8), rng.uniform(0, 1),
            ),
        )
        for i in range(10000)
    )
    m = Manifest(recs)
    order = ["ratio80", "ratio65", "ratio50", "ratio30", "ratio5"]
    kept = {}
    for name in order:
        out = apply_filter(m, FILTER_PRESETS[name])
        assert [r.id for r in out.records] == filter_oracle(m.records, FILTER_PRESETS[name])
        kept[name] = {r.id for r in out.records}
    for loose, strict in zip(order, order[1:]):
        assert kept[strict] <= kept[loose]


@criterion("End-to-end controllability", 900.0)
def test_end_to_end_controllability(e2e_manifest, e2e_checkpoint):
    net, strategy = e2e_checkpoint.net_and_strategy()
    base = median_quality(e2e_manifest)
    aes, wat = heuristic_aes_scorer(), corner_tag_wat_scorer()

    def mean_measured(attr, target):
        out = euler_sample(
            net, strategy, 0, base.replace(**{attr: target}),
            SamplerConfig(steps=50, seed=2024, count=256, mode="LACON-S"), 4.0,
        )
        qs = measure_outputs(out, 16, aes, wat)
        return float(np.mean([getattr(q, attr) for q in qs]))

    lumas = [mean_measured("luma", v) for v in (0.3, 0.5, 0.8)]
    print(f"  luma targets (0.3, 0.5, 0.8) -> measured {[round(v, 4) for v in lumas]}")
    assert lumas[0] < lumas[1] < lumas[2]
    assert lumas[1] - lumas[0] >= 0.05
    assert lumas[2] - lumas[1] >= 0.05
    ents = [mean_measured("ent", v) for v in (3.0, 7.0)]
    print(f"  ent targets (3, 7) -> measured {[round(v, 4) for v in ents]}")
    assert ents[1] - ents[0] >= 0.5


@criterion("Ablation harness parity", 600.0)
def test_ablation_harness(e2e_manifest):
    finals = {}
    for kind in ("gcc", "linear", "binning", "fourier"):
        cfg = TrainConfig(seed=TRAIN_SEED, steps=1000, strategy=kind)
        _, curve = train(e2e_manifest, cfg)
        assert len(curve) == 1000
        assert all(np.isfinite(l) for _, l in curve)
        finals[kind] = float(np.mean([l for _, l in curve[-50:]]))
    # reported, not gated: the paper's GCC-vs-linear ordering is at scale
    ordering = "<=" if finals["gcc"] <= finals["linear"] else ">"
    print(f"  final losses: {json.dumps(finals)}; gcc {ordering} linear (not gated)")


@criterion("Determinism and round-trip", 120.0)
def test_determinism_and_roundtrip(tmp_path):
    runner = CliRunner()
    corpus = tmp_path / "corpus"
    res = runner.invoke(cli_main, ["synth", "--n", "60", "--seed", "9", "--out", str(corpus)],
                        catch_exceptions=False)
    assert res.exit_code == 0, res.output
    man = tmp_path / "m.jsonl"
    res = runner.invoke(cli_main, ["label", str(corpus), "--out", str(man),
                                   "--target-long-side", "16"], catch_exceptions=False)
    assert res.exit_code == 0, res.output
    ck1, ck2 = tmp_path / "a.json", tmp_path / "b.json"
    for out in (ck1, ck2):
        res = runner.invoke(cli_main, ["train", str(man), "--out", str(out),
                                       "--seed", "10", "--steps", "150", "--batch-size", "32"],
                            catch_exceptions=False)
        assert res.exit_code == 0, res.output
    assert ck1.read_bytes() == ck2.read_bytes()
    # serialize / deserialize / forward is bit-identical
    ckpt = load_checkpoint(ck1)
    resaved = tmp_path / "c.json"
    save_checkpoint(ckpt, resaved)
    assert resaved.read_bytes() == ck1.read_bytes()
    net1, strat1 = ckpt.net_and_strategy()
    net2, strat2 = load_checkpoint(resaved).net_and_strategy()
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, net1.D))
    t = rng.random(4)
    cls = np.array([0, 1, 0, 1])
    s = QualityVector(5.0, 0.5, 1500.0, 4.0, 0.5)
    c1 = np.broadcast_to(strat1.embed(s), (4, 5, net1.cfg.d)).copy()
    c2 = np.broadcast_to(strat2.embed(s), (4, 5, net2.cfg.d)).copy()
    assert np.array_equal(net1.forward(x, t, cls, c1), net2.forward(x, t, cls, c2))
