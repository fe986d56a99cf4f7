"""Flat-file demonstration datasets.

Each episode lives in its own directory: a `manifest.json` (sorted keys, no
timestamps, so identical inputs produce identical bytes) plus raw
little-endian arrays. A dataset root holds episode directories and a
top-level manifest.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .env import make_env
from .expert import Episode, ExpertFailure, run_expert

_ARRAYS = (
    ("obs.bin", "images", "<f4"),
    ("actions.bin", "actions", "<f8"),
    ("proprio.bin", "proprio", "<f8"),
    ("wrenches.bin", "wrenches", "<f8"),
)


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def save_episode(root: Path, index: int, ep: Episode) -> Path:
    d = Path(root) / f"ep{index:05d}"
    d.mkdir(parents=True, exist_ok=True)
    for fname, attr, dtype in _ARRAYS:
        getattr(ep, attr).astype(dtype).tofile(d / fname)
    labels = np.stack([ep.contact, ep.phase], axis=1).astype(np.uint8)
    labels.tofile(d / "labels.bin")
    _write_json(d / "manifest.json", {
        "task": ep.task, "seed": ep.seed, "length": len(ep),
        "success": bool(ep.success), "info": ep.info})
    return d


def load_episode(path: Path) -> Episode:
    d = Path(path)
    meta = json.loads((d / "manifest.json").read_text())
    T = meta["length"]
    images = np.fromfile(d / "obs.bin", dtype="<f4").reshape(T, 3, 32, 32)
    actions = np.fromfile(d / "actions.bin", dtype="<f8").reshape(T, 8)
    proprio = np.fromfile(d / "proprio.bin", dtype="<f8").reshape(T, 8)
    wrenches = np.fromfile(d / "wrenches.bin", dtype="<f8").reshape(T, 6)
    labels = np.fromfile(d / "labels.bin", dtype=np.uint8).reshape(T, 2)
    return Episode(task=meta["task"], seed=meta["seed"], images=images,
                   actions=actions, proprio=proprio, wrenches=wrenches,
                   contact=labels[:, 0], phase=labels[:, 1],
                   success=meta["success"], info=meta["info"])


def generate_dataset(root: Path, task: str, n_episodes: int, seed: int,
                     jam_fraction: float = 0.2,
                     max_attempts_per_episode: int = 8) -> dict:
    """Roll out scripted demonstrations and persist them under `root`.

    Failed expert attempts are re-seeded deterministically and counted in
    the manifest; a fraction of peg episodes gets an injected jam so the
    recovery phase appears in the labels.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    episodes, seeds, failures = [], [], 0
    for i in range(n_episodes):
        kwargs = {}
        if task in ("charger", "usb") and jam_fraction > 0:
            kwargs["inject_jam"] = (i % max(1, round(1 / jam_fraction))) == 0
        ep = None
        for attempt in range(max_attempts_per_episode):
            ep_seed = seed + 1000 * i + attempt
            env = make_env(task)
            try:
                ep = run_expert(env, ep_seed, **kwargs)
                break
            except ExpertFailure:
                failures += 1
        if ep is None:
            raise ExpertFailure(
                f"episode {i}: no success in {max_attempts_per_episode} tries")
        seeds.append(ep.seed)
        episodes.append(save_episode(root, i, ep).name)
    manifest = {"task": task, "n_episodes": n_episodes, "base_seed": seed,
                "episodes": episodes, "seeds": seeds, "failures": failures,
                "jam_fraction": jam_fraction}
    _write_json(root / "manifest.json", manifest)
    return manifest


def load_dataset(root: Path) -> list[Episode]:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    return [load_episode(root / name) for name in manifest["episodes"]]
