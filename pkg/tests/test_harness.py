import json

import numpy as np
import pytest
import yaml

from ndl import harness
from ndl.dataio import make_synthetic, write_idx_dataset
from ndl.errors import ConfigError
from ndl.metrics import read_metrics
from ndl.numkernel import make_rng


@pytest.fixture
def idx_data(tmp_path):
    ds = make_synthetic(4, 20, 36, make_rng(11))
    write_idx_dataset(ds, tmp_path / "images.idx", tmp_path / "labels.idx")
    return {"images": str(tmp_path / "images.idx"), "labels": str(tmp_path / "labels.idx")}


def small_config(dataset, out, **kw):
    data = {
        "dataset": dataset,
        "initial_classes": [0, 1],
        "order": [2, 3],
        "architecture": [8, 4],
        "output_dir": str(out),
        "train": {"epochs": 3, "learning_rate": 0.5},
        "neurogenesis": {"max_nodes": [4, 2], "nodes_per_step": 2, "plasticity_epochs": 2, "stability_epochs": 1},
    }
    data.update(kw)
    return harness.load_config(data=data)


def test_defaults_and_validation():
    cfg = harness.load_config(data={"dataset": {"bundled": "mnist5k"}, "neurogenesis": {"max_nodes": [1, 1, 1, 1]}})
    assert cfg.architecture == [200, 100, 75, 20]
    assert cfg.order == [0, 2, 3, 4, 5, 6, 8, 9] and cfg.initial_classes == [1, 7]
    with pytest.raises(ConfigError, match="max_nodes"):
        harness.load_config(data={"dataset": {"bundled": "mnist5k"}})
    with pytest.raises(ConfigError, match="unknown key"):
        harness.load_config(data={"dataset": {"bundled": "mnist5k"}, "lr": 1})
    with pytest.raises(ConfigError, match="condition"):
        harness.load_config(data={"dataset": {"bundled": "mnist5k"}, "condition": "X"})
    with pytest.raises(ConfigError, match="dataset"):
        harness.load_config(data={"condition": "CL"})


def test_precedence_file_env_cli(tmp_path, monkeypatch):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"condition": "CL", "seed": 4, "output_dir": "from_file",
                                    "dataset": {"bundled": "mnist5k"}}))
    assert harness.load_config(path).output_dir == "from_file"
    monkeypatch.setenv("NDL_OUTPUT_DIR", "from_env")
    cfg = harness.load_config(path)
    assert cfg.output_dir == "from_env" and cfg.seed == 4
    cfg = harness.load_config(path, ["output_dir=from_cli", "seed=9", "train.epochs=2"])
    assert (cfg.output_dir, cfg.seed, cfg.train.epochs) == ("from_cli", 9, 2)
    with pytest.raises(ConfigError):
        harness.load_config(path, ["no_equals_sign"])


def test_missing_dataset_file_is_reported(tmp_path):
    cfg = small_config({"images": str(tmp_path / "nope"), "labels": str(tmp_path / "nope")}, tmp_path / "o")
    with pytest.raises(FileNotFoundError):
        harness.load_data(cfg)


def test_missing_class_is_reported(idx_data, tmp_path):
    cfg = small_config(idx_data, tmp_path / "o", order=[2, 5])
    with pytest.raises(FileNotFoundError, match="5"):
        harness.load_data(cfg)


@pytest.mark.parametrize("condition", ["CL", "CL+IR", "NDL", "NDL+IR"])
def test_every_condition_runs(condition, idx_data, tmp_path):
    cfg = small_config(idx_data, tmp_path / condition, condition=condition)
    out = harness.run_experiment(cfg)
    records = read_metrics(out.metrics)
    assert [r["round"] for r in records] == [0, 1, 2]
    assert [r["class_learned"] for r in records] == [None, 2, 3]
    assert sorted(records[0]["mean_re"], key=int) == ["0", "1", "2", "3"]
    assert (out.checkpoints / "round002.npz").exists()
    growth = out.growth.read_text().splitlines()
    assert bool(growth) == condition.startswith("NDL")
    state = harness.RunState.load(out.checkpoint(2))
    assert state.seen == [0, 1, 2, 3]
    assert (len(state.store) > 0) == condition.endswith("+IR")


def test_zero_new_classes_gives_only_pretraining_round(idx_data, tmp_path):
    out = harness.run_experiment(small_config(idx_data, tmp_path / "o", condition="CL", order=[]))
    assert len(read_metrics(out.metrics)) == 1


def test_cl_sized_from_growth_report(idx_data, tmp_path):
    ndl = harness.run_experiment(small_config(idx_data, tmp_path / "ndl", condition="NDL"))
    final = read_metrics(ndl.metrics)[-1]["widths"]
    assert harness.final_widths_from_growth(ndl.growth, 2) == final
    cl = harness.run_experiment(small_config(idx_data, tmp_path / "cl", condition="CL", growth_report=str(ndl.growth)))
    assert all(r["widths"] == final for r in read_metrics(cl.metrics))


def test_same_seed_same_metrics(idx_data, tmp_path):
    a = harness.run_experiment(small_config(idx_data, tmp_path / "a"))
    b = harness.run_experiment(small_config(idx_data, tmp_path / "b"))
    assert a.metrics.read_bytes() == b.metrics.read_bytes()
    assert a.table.read_bytes() == b.table.read_bytes()
    c = harness.run_experiment(small_config(idx_data, tmp_path / "c", seed=1))
    assert c.metrics.read_bytes() != a.metrics.read_bytes()


def test_resume_matches_uninterrupted(idx_data, tmp_path):
    full = harness.run_experiment(small_config(idx_data, tmp_path / "full"))
    cfg = small_config(idx_data, tmp_path / "split")
    _, splits, out = harness.start_run(cfg)
    for label in cfg.order:
        state = harness.RunState.load(sorted(out.checkpoints.glob("*.npz"))[-1])
        harness.continue_run(state, cfg, splits, out, label)
    assert out.metrics.read_bytes() == full.metrics.read_bytes()
    assert out.growth.read_bytes() == full.growth.read_bytes()


def test_relearning_a_class_is_refused(idx_data, tmp_path):
    cfg = small_config(idx_data, tmp_path / "o")
    state, splits, out = harness.start_run(cfg)
    with pytest.raises(ConfigError):
        harness.continue_run(state, cfg, splits, out, 0)


def test_numeric_failure_writes_abort_marker(idx_data, tmp_path, monkeypatch):
    cfg = small_config(idx_data, tmp_path / "o")
    state, splits, out = harness.start_run(cfg)

    def boom(*args, **kwargs):
        raise ArithmeticError("forced")

    monkeypatch.setattr(harness, "run_ndl", boom)
    with pytest.raises(ArithmeticError):
        harness.continue_run(state, cfg, splits, out, 2)
    marker = json.loads((out.root / "aborted.json").read_text())
    assert marker["class"] == 2 and marker["last_checkpoint"].endswith("round000.npz")


def test_resolved_config_and_timings_are_written(idx_data, tmp_path):
    out = harness.run_experiment(small_config(idx_data, tmp_path / "o"))
    resolved = yaml.safe_load((out.root / "config.resolved.yaml").read_text())
    assert resolved["architecture"] == [8, 4]
    assert len(out.timings.read_text().splitlines()) == 4
    assert np.all(np.diff([r["widths"][0] for r in read_metrics(out.metrics)]) >= 0)
