"""Versioned binary checkpoints.

Layout: ``FSKGCKPT`` magic, ``<u4`` version, ``<u8`` header length, a UTF-8
JSON header (sorted keys), then every array as raw little-endian float64 in
header order.  The bytes depend only on the saved values, so identical runs
produce identical files.  Writes go to a temporary sibling and are renamed
into place.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import HyperParams, ModelState
from .optim import AdamState

MAGIC = b"FSKGCKPT"
VERSION = 1


def save_checkpoint(path: str | Path, state: ModelState, adam: AdamState | None = None,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    arrays: list[tuple[str, np.ndarray]] = [(f"param/{k}", v) for k, v in sorted(state.params.items())]
    if adam is not None:
        arrays += [(f"adam.m/{k}", v) for k, v in sorted(adam.m.items())]
        arrays += [(f"adam.v/{k}", v) for k, v in sorted(adam.v.items())]
    header = {
        "variant": state.variant,
        "hp": asdict(state.hp),
        "n_relations": state.n_relations,
        "frozen": sorted(state.frozen),
        "adam_t": None if adam is None else adam.t,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", VERSION, len(blob)))
            fh.write(blob)
            for _, a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"could not write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelState, AdamState | None, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arrays[entry["name"]] = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    state = ModelState(header["variant"], HyperParams(**header["hp"]), params, header["n_relations"],
                       set(header["frozen"]))
    adam = None
    if header["adam_t"] is not None:
        adam = AdamState(
            {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam.m/")},
            {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam.v/")},
            header["adam_t"],
        )
    return state, adam, header["meta"]
