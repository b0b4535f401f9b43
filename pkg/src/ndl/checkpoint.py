"""Model + replay store checkpoints.

A checkpoint is an uncompressed ``.npz`` archive (zip of ``.npy`` arrays,
loaded with ``allow_pickle=False``):

``meta``
    UTF-8 JSON as a ``uint8`` array: ``format``, ``version``, ``depth``,
    ``input_dim``, ``widths``, the store's code width, class labels and
    sample counts, and a free-form ``extra`` mapping.
``enc{i}_w``, ``enc{i}_b``, ``dec{i}_w``, ``dec{i}_b``
    float64 weights ``(out, in)`` and biases for level ``i`` (1-based).
``store{label}_mean``, ``store{label}_chol``
    float64 class statistics.

Arrays are stored byte-for-byte, so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autoencoder import DenseLayer, StackedAutoencoder
from .errors import CheckpointError
from .replay import ClassStats, ReplayStore

FORMAT = "ndl-checkpoint"
VERSION = 1


def save_checkpoint(path, ae: StackedAutoencoder, store: ReplayStore | None = None, extra: dict | None = None) -> None:
    store = store if store is not None else ReplayStore(ae.code_width)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "depth": ae.depth,
        "input_dim": ae.input_dim,
        "widths": ae.widths,
        "store": {
            "model_code_width": store.model_code_width,
            "labels": store.labels,
            "counts": [store.stats[k].sample_count for k in store.labels],
        },
        "extra": extra or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, (enc, dec) in enumerate(zip(ae.encoders, ae.decoders), start=1):
        arrays[f"enc{i}_w"] = enc.weights
        arrays[f"enc{i}_b"] = enc.bias
        arrays[f"dec{i}_w"] = dec.weights
        arrays[f"dec{i}_b"] = dec.bias
    for label in store.labels:
        arrays[f"store{label}_mean"] = store.stats[label].mean
        arrays[f"store{label}_chol"] = store.stats[label].chol
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[StackedAutoencoder, ReplayStore, dict]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        meta = json.loads(archive["meta"].tobytes().decode())
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path} is not an ndl checkpoint")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        encoders, decoders = [], []
        for i in range(1, meta["depth"] + 1):
            encoders.append(DenseLayer(archive[f"enc{i}_w"], archive[f"enc{i}_b"]))
            decoders.append(DenseLayer(archive[f"dec{i}_w"], archive[f"dec{i}_b"]))
        ae = StackedAutoencoder(encoders, decoders)
        if ae.widths != meta["widths"] or ae.input_dim != meta["input_dim"]:
            raise CheckpointError("layer arrays disagree with recorded widths")
        smeta = meta["store"]
        stats = {
            label: ClassStats(label, archive[f"store{label}_mean"], archive[f"store{label}_chol"], count)
            for label, count in zip(smeta["labels"], smeta["counts"])
        }
    return ae, ReplayStore(smeta["model_code_width"], stats), meta["extra"]
