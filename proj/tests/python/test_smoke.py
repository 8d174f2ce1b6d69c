import math

import numpy as np
import pytest

import m4mil
from m4mil import _core


def small_config(variant=m4mil.Variant.M4, tasks=3, d=12):
    c = m4mil.ModelConfig()
    c.input_dim = d
    c.expert_dim = 8
    c.gate_dim = 8
    c.attention_dim = 4
    c.tower_hidden = 4
    c.experts = 2
    c.tasks = tasks
    c.variant = variant
    c.seed = 5
    return c


def test_softmax_and_matmul():
    s = _core.softmax(np.array([[1.0, 2.0, 3.0]]), 1)
    assert s.sum() == pytest.approx(1.0, abs=1e-12)
    assert s[0, 2] == pytest.approx(0.66524096, abs=1e-8)
    out = _core.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.eye(2))
    assert np.array_equal(out, [[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(_core.ShapeError):
        _core.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_auc():
    assert m4mil.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert _core.auc_pairwise([0.3, 0.3], [0, 1]) == 0.5
    with pytest.raises(_core.UndefinedAucError):
        m4mil.auc([0.1, 0.2], [1, 1])


def test_forward_invariants():
    model = m4mil.Model(small_config())
    rng = np.random.default_rng(0)
    out = model.forward(rng.uniform(-1, 1, size=(9, 12)))
    assert out["probs"].shape == (3,)
    assert np.allclose(out["attention"].sum(axis=1), 1.0, atol=1e-12)
    assert out["gates"].shape == (3, 4, 2)
    assert np.allclose(out["gates"].sum(axis=2), 1.0, atol=1e-12)
    for h in out["task_heatmaps"]:
        assert math.isclose(sum(h), 1.0, abs_tol=1e-10)
    assert np.allclose(out["probs"], 1 / (1 + np.exp(-out["logits"])))


def test_bag_round_trip(tmp_path):
    bag = m4mil.Bag("x", np.array([[0.5]]))
    assert len(_core.encode_bag(bag)) == 17
    back = _core.decode_bag(_core.encode_bag(bag))
    assert back.features.tolist() == [[0.5]]
    with pytest.raises(_core.FormatError):
        _core.decode_bag(b"XXXX" + _core.encode_bag(bag)[4:])
    _core.write_bag(bag, tmp_path / "x.mbg")
    assert _core.read_bag(tmp_path / "x.mbg").n == 1


def test_train_and_evaluate(tmp_path):
    data = m4mil.generate_synthetic(bags=30, tasks=2, dim=12, min_instances=4, max_instances=8,
                                    prevalence_first=0.5, prevalence_last=0.3, seed=2)
    assert len(data.bags) == 30
    bags = _core.normalize_bags(data.bags)
    model = m4mil.Model(small_config(tasks=2))
    cfg = m4mil.TrainConfig()
    cfg.lr = 1e-3
    cfg.epochs = 3
    losses = m4mil.train(model, bags, cfg)
    assert len(losses) == 3
    assert all(l >= 0 for l in losses)
    aucs = _core.evaluate(model, bags)
    assert len(aucs) == 2
    _core.save_models([model], tmp_path / "m.mpr")
    again = _core.load_models(tmp_path / "m.mpr")[0]
    assert np.array_equal(again.predict(bags), model.predict(bags))


def test_config_errors():
    c = small_config()
    c.expert_dim = 10
    with pytest.raises(_core.ConfigError):
        m4mil.Model(c)


def test_gradcheck_sensitivity():
    assert all(e.passed for e in m4mil.gradcheck())
    assert not all(e.passed for e in m4mil.gradcheck(1.01))


def test_cli_wrappers(tmp_path):
    config = "\n".join([
        "seed = 1", "synth.bags = 25", "synth.tasks = 2", "synth.dim = 12",
        "synth.min_instances = 9", "synth.max_instances = 9", "synth.prevalence_last = 0.3",
        "model.expert_dim = 8", "model.gate_dim = 8", "model.attention_dim = 4",
        "model.experts = 2", "model.tower_hidden = 4", "train.epochs = 1", "train.folds = 2",
    ])
    rc, out, _ = _core.cli_synth(config, tmp_path / "data")
    assert rc == 0 and "wrote 25 bags" in out
    manifest = tmp_path / "data" / "manifest.csv"
    assert _core.cli_train(config, manifest, tmp_path / "m.mpr")[0] == 0
    assert _core.cli_eval(tmp_path / "m.mpr", manifest, tmp_path / "r.csv")[0] == 0
    assert (tmp_path / "r.csv").read_text() == (tmp_path / "m.report.csv").read_text()
    rc, _, _ = _core.cli_heatmap(tmp_path / "m.mpr", tmp_path / "data" / "bags" / "bag00000.mbg", tmp_path / "h")
    assert rc == 0
    assert (tmp_path / "h_task1.pgm").read_bytes().startswith(b"P5\n3 3\n255\n")
    assert _core.encode_graymap([0.2, 0.2]).endswith(bytes([128, 128, 0, 0]))
