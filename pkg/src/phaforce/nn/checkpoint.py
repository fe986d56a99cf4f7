"""Checkpoint I/O: JSON manifest plus one little-endian f64 blob per parameter."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .layers import Parameter


def _blob_name(param_name: str) -> str:
    return param_name.replace("/", "__") + ".bin"


def save_checkpoint(path, params: dict[str, Parameter] | dict[str, np.ndarray],
                    hyperparameters: dict, seed: int,
                    extra_arrays: dict[str, np.ndarray] | None = None):
    """Write a checkpoint directory.

    `extra_arrays` carries non-trainable state (e.g. normalization constants);
    they share the blob format and are listed separately in the manifest.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "seed": seed,
        "hyperparameters": hyperparameters,
        "parameters": {},
        "extras": {},
    }
    for name, p in params.items():
        data = p.data if isinstance(p, Parameter) else np.asarray(p)
        manifest["parameters"][name] = {
            "shape": list(data.shape),
            "blob": _blob_name(name),
        }
        data.astype("<f8").tofile(path / _blob_name(name))
    for name, arr in (extra_arrays or {}).items():
        arr = np.asarray(arr, dtype=np.float64)
        manifest["extras"][name] = {
            "shape": list(arr.shape),
            "blob": _blob_name("extra." + name),
        }
        arr.astype("<f8").tofile(path / _blob_name("extra." + name))
    with open(path / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_checkpoint(path):
    """Read a checkpoint directory -> (arrays, extras, hyperparameters, seed)."""
    path = Path(path)
    with open(path / "manifest.json") as f:
        manifest = json.load(f)
    arrays = {}
    for name, meta in manifest["parameters"].items():
        arrays[name] = np.fromfile(path / meta["blob"],
                                   dtype="<f8").reshape(meta["shape"])
    extras = {}
    for name, meta in manifest.get("extras", {}).items():
        extras[name] = np.fromfile(path / meta["blob"],
                                   dtype="<f8").reshape(meta["shape"])
    return arrays, extras, manifest["hyperparameters"], manifest["seed"]


def load_into(module, arrays: dict[str, np.ndarray]):
    """Copy checkpoint arrays into a module's named parameters (strict)."""
    params = module.named_parameters()
    missing = set(params) - set(arrays)
    unexpected = set(arrays) - set(params)
    if missing or unexpected:
        raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} "
                       f"unexpected={sorted(unexpected)}")
    for name, p in params.items():
        if tuple(arrays[name].shape) != p.shape:
            raise ValueError(f"shape mismatch for {name}")
        p.data = arrays[name].astype(np.float64)
