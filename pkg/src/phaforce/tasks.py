"""Task-defined phase sets and per-phase corrective subspace masks.

Masks are binary flags over the 6 pose channels [x, y, z, roll, pitch, yaw].
Non-force-critical phases (approach, pick, done, recovery) get the zero mask;
recovery is handled by the slow planner, not by within-phase correction.
"""

from __future__ import annotations

import numpy as np

ZERO_MASK = (0, 0, 0, 0, 0, 0)

SUBSPACE_MASKS = {
    "search": (1, 1, 0, 0, 0, 1),
    "insert": (0, 0, 1, 0, 0, 1),
    "unlock": (1, 1, 0, 0, 0, 0),
    "pull":   (1, 1, 0, 1, 1, 0),
    "wiping": (0, 0, 1, 0, 0, 0),
}

TASK_PHASES = {
    "charger": ("approach", "search", "recovery", "insert", "done"),
    "usb":     ("approach", "search", "recovery", "insert", "done"),
    "wiping":  ("pick", "approach", "wiping", "done"),
    "drawer":  ("pick", "unlock", "pull", "done"),
}


def phase_names(task: str) -> tuple[str, ...]:
    if task not in TASK_PHASES:
        raise KeyError(f"unknown task {task!r}")
    return TASK_PHASES[task]


def phase_count(task: str) -> int:
    return len(phase_names(task))


def phase_index(task: str, phase: str) -> int:
    return phase_names(task).index(phase)


def task_masks(task: str) -> np.ndarray:
    """K x 6 binary mask matrix, row order = task phase order."""
    rows = [SUBSPACE_MASKS.get(name, ZERO_MASK) for name in phase_names(task)]
    return np.array(rows, dtype=np.float64)
