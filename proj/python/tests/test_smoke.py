import math

import numpy as np
import pytest

import moepp


def test_capacity_example():
    cfg = moepp.LayerConfig()
    caps = moepp.capacity(cfg, 1000)
    assert caps[:8] == [83] * 8
    assert caps[8:] == [110] * 4


def test_complexity_and_sweep():
    assert moepp.complexity_ratio(1.0, 16, 4) == 0.8
    assert moepp.complexity_ratio(moepp.LayerConfig.vanilla(8)) == 1.0
    rows = moepp.tau_sweep(moepp.LayerConfig(), [0.1, 0.75])
    assert rows[0]["predicted_speedup_pct"] == pytest.approx(500.0)
    assert rows[0]["measured_increase_pct"] == 164.5
    assert rows[1]["ratio"] == pytest.approx(0.6)


def test_adaptive_count():
    assert moepp.adaptive_constant_count(16, 1, 1) == 2
    assert moepp.adaptive_constant_count(32, 1, 1) == 6


def test_route_gates_are_masked_softmax():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(6, 3))
    out = moepp.route(x, w, k=2)
    logits = x @ w.T
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    for t in range(5):
        top = list(np.argsort(-logits[t], kind="stable")[:2])
        assert out["selected"][t] == top
        assert np.count_nonzero(out["gates"][t]) == 2
        np.testing.assert_allclose(out["gates"][t][top], probs[t][top], rtol=1e-12)


def test_layer_forward():
    cfg = moepp.LayerConfig()
    cfg.gamma = 20.0
    layer = moepp.Layer(cfg, hidden=8, intermediate=12, seed=3)
    x = np.random.default_rng(1).normal(size=(10, 8))
    out = layer.forward(x)
    assert out["y"].shape == (10, 8)
    assert out["dropped_pairs"] == 0
    assert sum(out["f"]) == pytest.approx(2.0)
    assert sum(out["p"]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        layer.forward(np.zeros((3, 5)))
    cfg.ffn_activation = "relu"
    relu_out = moepp.Layer(cfg, hidden=8, intermediate=12, seed=3).forward(x)
    assert relu_out["selected"] == out["selected"]
    assert not np.allclose(relu_out["y"], out["y"])
    with pytest.raises(ValueError):
        cfg.ffn_activation = "swish"


def test_train_smoke():
    config = {
        "model": {"vocab": 12, "hidden": 8, "intermediate": 12, "layers": 2, "heads": 2, "head_dim": 4, "seq_len": 8},
        "layer": {"n_ffn": 4, "n_zero": 1, "n_copy": 1, "n_const": 1},
        "train": {"steps": 30, "batch": 4, "warmup_steps": 3, "lr": 0.01, "corpus": {"kind": "pattern", "length": 600}},
    }
    metrics = moepp.train(config)
    assert len(metrics) == 30
    assert all(math.isfinite(m["loss"]) for m in metrics)
    assert metrics[-1]["ce"] < metrics[0]["ce"]
    assert moepp.train(config) == metrics


def test_errors():
    with pytest.raises(ValueError, match="layer.taux"):
        moepp.train({"layer": {"taux": 1}})
    bad = {
        "model": {"vocab": 12, "hidden": 8, "intermediate": 12, "layers": 1, "heads": 2, "head_dim": 4, "seq_len": 8},
        "layer": {"n_ffn": 4, "n_const": 1},
        "train": {"steps": 3, "batch": 2, "lr": 1e300, "clip_norm": 1e300, "corpus": {"length": 300}},
    }
    with pytest.raises(moepp.NumericalError):
        moepp.train(bad)
