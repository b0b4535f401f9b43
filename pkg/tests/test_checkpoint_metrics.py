import json

import jsonschema
import numpy as np
import pytest

from ndl.autoencoder import StackedAutoencoder
from ndl.checkpoint import load_checkpoint, save_checkpoint
from ndl.errors import CheckpointError, ComparisonError
from ndl.metrics import compare_runs, dump_record, flat_rows, format_csv, read_metrics, validate_record
from ndl.replay import ReplayStore, fit_class_stats


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    ae = StackedAutoencoder.random([12, 6, 3], rng)
    store = ReplayStore(3).with_class(fit_class_stats(ae, rng.random((9, 12)), 4))
    path = tmp_path / "c.npz"
    save_checkpoint(path, ae, store, {"note": "x"})
    ae2, store2, extra = load_checkpoint(path)
    assert extra == {"note": "x"}
    for a, b in zip(ae.encoders + ae.decoders, ae2.encoders + ae2.decoders):
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.bias.tobytes() == b.bias.tobytes()
    assert store2.labels == [4] and store2.stats[4].sample_count == 9
    assert store2.stats[4].chol.tobytes() == store.stats[4].chol.tobytes()


def test_checkpoint_without_store(tmp_path, rng):
    ae = StackedAutoencoder.random([5, 2], rng)
    save_checkpoint(tmp_path / "c.npz", ae)
    _, store, _ = load_checkpoint(tmp_path / "c.npz")
    assert len(store) == 0 and store.model_code_width == 2


def test_bad_checkpoints(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.npz")
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")
    np.savez(tmp_path / "other.npz", meta=np.frombuffer(json.dumps({"format": "x"}).encode(), np.uint8))
    with pytest.raises(CheckpointError, match="not an ndl checkpoint"):
        load_checkpoint(tmp_path / "other.npz")


def record(condition="NDL+IR", rnd=0, re1=(10.0, 12.0), re2=(20.0, 22.0)):
    return {
        "condition": condition, "seed": 0, "round": rnd, "class_learned": None if rnd == 0 else 2,
        "classes_seen": [1], "widths": [4, 2], "mean_re": {"1": list(re1), "2": list(re2)},
    }


def write_run(path, records):
    path.write_text("".join(dump_record(r) + "\n" for r in records))
    return path


def test_schema_rejects_bad_records():
    validate_record(record())
    bad = record()
    bad["condition"] = "XY"
    with pytest.raises(jsonschema.ValidationError):
        validate_record(bad)
    bad = record()
    bad["mean_re"]["1"] = [1.0]
    with pytest.raises(jsonschema.ValidationError):
        validate_record(bad)
    bad = record()
    bad["wall_time"] = 1.0
    with pytest.raises(jsonschema.ValidationError):
        validate_record(bad)


def test_flat_rows():
    rows = flat_rows(record())
    assert rows[0] == ["NDL+IR", 0, 0, None, 1, 1, 10.0, 4]
    assert len(rows) == 4


def test_compare_with_itself_is_all_zero(tmp_path):
    run = write_run(tmp_path / "a.jsonl", [record(), record(rnd=1, re1=(8.0, 9.0))])
    header, rows = compare_runs([run, run])
    assert len(rows) == 2 * 2
    assert all(r[-1] == 0 for r in rows)
    i = header.index("NDL+IR_change")
    assert rows[0][i] == pytest.approx(-2.0)
    assert format_csv(header, rows).splitlines()[0] == ",".join(header)


def test_compare_across_conditions(tmp_path):
    a = write_run(tmp_path / "a.jsonl", [record(), record(rnd=1, re1=(8.0, 9.0))])
    b = write_run(tmp_path / "b.jsonl", [record("CL"), record("CL", rnd=1, re1=(11.0, 12.0))])
    header, rows = compare_runs([a, b])
    assert header[-1] == "CL_final_minus_NDL+IR"
    assert rows[0][-1] == pytest.approx(3.0)


def test_compare_rejects_mismatches(tmp_path):
    a = write_run(tmp_path / "a.jsonl", [record()])
    other = record()
    del other["mean_re"]["2"]
    b = write_run(tmp_path / "b.jsonl", [other])
    with pytest.raises(ComparisonError, match="class set"):
        compare_runs([a, b])
    with pytest.raises(ComparisonError):
        compare_runs([a])
    (tmp_path / "bad.jsonl").write_text(json.dumps({"condition": "CL"}) + "\n")
    with pytest.raises(ComparisonError, match="schema"):
        read_metrics(tmp_path / "bad.jsonl")
