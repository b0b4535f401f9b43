"""Metrics records, their schema, and cross-run comparison."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import jsonschema

from .errors import ComparisonError

METRICS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ndl metrics record",
    "type": "object",
    "required": ["condition", "seed", "round", "class_learned", "classes_seen", "widths", "mean_re"],
    "additionalProperties": False,
    "properties": {
        "condition": {"enum": ["CL", "NDL", "CL+IR", "NDL+IR"]},
        "seed": {"type": "integer"},
        "round": {"type": "integer", "minimum": 0},
        "class_learned": {"type": ["integer", "null"]},
        "classes_seen": {"type": "array", "items": {"type": "integer"}},
        "widths": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "mean_re": {
            "type": "object",
            "propertyNames": {"pattern": "^-?[0-9]+$"},
            "additionalProperties": {
                "type": "array",
                "items": {"type": "number", "minimum": 0},
                "minItems": 1,
            },
        },
    },
}

FLAT_COLUMNS = ["condition", "seed", "round", "class_learned", "class", "level", "mean_re", "width"]


def validate_record(record: dict) -> None:
    jsonschema.validate(record, METRICS_SCHEMA)
    depth = len(record["widths"])
    for label, values in record["mean_re"].items():
        if len(values) != depth:
            raise jsonschema.ValidationError(
                f"class {label} has {len(values)} levels, widths list has {depth}"
            )


def dump_record(record: dict) -> str:
    validate_record(record)
    return json.dumps(record, sort_keys=True)


def flat_rows(record: dict) -> list[list]:
    rows = []
    for label in sorted(record["mean_re"], key=int):
        for level, value in enumerate(record["mean_re"][label], start=1):
            rows.append([
                record["condition"], record["seed"], record["round"], record["class_learned"],
                int(label), level, value, record["widths"][level - 1],
            ])
    return rows


def read_metrics(path) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                validate_record(record)
            except jsonschema.ValidationError as exc:
                raise ComparisonError(f"{path}:{lineno} violates the metrics schema: {exc.message}") from exc
            records.append(record)
    if not records:
        raise ComparisonError(f"{path} holds no metrics records")
    return sorted(records, key=lambda r: r["round"])


def compare_runs(paths) -> tuple[list[str], list[list]]:
    """Per (class, level): each run's initial and final RE, its change, and
    the final RE relative to the first run.

    Returns ``(header, rows)`` with one row per class per level.
    """
    paths = [Path(p) for p in paths]
    if len(paths) < 2:
        raise ComparisonError("compare_runs needs at least two metrics files")
    runs = [read_metrics(p) for p in paths]
    names = []
    for i, (path, records) in enumerate(zip(paths, runs)):
        name = records[0]["condition"]
        names.append(name if name not in names else f"{name}#{i}")

    classes = sorted(runs[0][-1]["mean_re"], key=int)
    depth = len(runs[0][-1]["widths"])
    for path, records in zip(paths[1:], runs[1:]):
        if sorted(records[-1]["mean_re"], key=int) != classes or sorted(records[0]["mean_re"], key=int) != classes:
            raise ComparisonError(f"{path} evaluates a different class set than {paths[0]}")
        if len(records[-1]["widths"]) != depth:
            raise ComparisonError(f"{path} has a different number of levels than {paths[0]}")

    header = ["class", "level"]
    for i, name in enumerate(names):
        header += [f"{name}_initial", f"{name}_final", f"{name}_change"]
        if i:
            header.append(f"{name}_final_minus_{names[0]}")
    rows = []
    for label in classes:
        for level in range(depth):
            row = [int(label), level + 1]
            base_final = runs[0][-1]["mean_re"][label][level]
            for i, records in enumerate(runs):
                initial = records[0]["mean_re"][label][level]
                final = records[-1]["mean_re"][label][level]
                row += [initial, final, final - initial]
                if i:
                    row.append(final - base_final)
            rows.append(row)
    return header, rows


def format_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()
