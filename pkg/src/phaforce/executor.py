"""Dual-rate executor.

The slow planner is queried every f_c/f_s control steps from a snapshot
observation; its chunk becomes available `latency_discard` steps later, so
the first rows of each chunk are never executed. The fast corrector runs at
every control step and its residual twist is integrated into a persistent
correction pose composed onto the slow command (admittance-style), so small
bounded per-step corrections can accumulate into a sustained offset.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, Twist, clamp_twist, compose, twist_to_delta_pose
from .sim.env import WORKSPACE_HI, WORKSPACE_LO, PegEnv, StepResult, WipingEnv

LIN_STEP_CAP = 5e-3
ANG_STEP_CAP = np.deg2rad(2.0)


class ChunkStarvation(RuntimeError):
    """No planned chunk rows remain and no replacement has arrived."""


@dataclass(frozen=True)
class RateConfig:
    f_s: float = 6.0
    f_c: float = 24.0
    horizon: int = 16
    latency_discard: int = 3

    def __post_init__(self):
        if self.f_c % self.f_s != 0:
            raise ValueError("control rate must be a multiple of plan rate")
        if self.latency_discard >= self.steps_per_plan + self.horizon:
            raise ValueError("latency exceeds the plan horizon")

    @property
    def steps_per_plan(self) -> int:
        return int(self.f_c / self.f_s)


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    trace: dict[str, np.ndarray]
    info: dict = field(default_factory=dict)


def _clamp_command(prev: Pose, target: Pose) -> Pose:
    """Limit per-step motion to the linear/angular caps (yaw-only poses)."""
    dp = target.position - prev.position
    n = np.linalg.norm(dp)
    if n > LIN_STEP_CAP:
        dp = dp * (LIN_STEP_CAP / n)
    dyaw = target.yaw() - prev.yaw()
    dyaw = (dyaw + np.pi) % (2 * np.pi) - np.pi
    yaw = prev.yaw() + float(np.clip(dyaw, -ANG_STEP_CAP, ANG_STEP_CAP))
    p = prev.position + dp
    return Pose(p, np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)]))


def _clip_workspace(pose: Pose) -> Pose:
    p = np.clip(pose.position, WORKSPACE_LO + 1e-6, WORKSPACE_HI - 1e-6)
    return Pose(p, pose.orientation)


def _wire_pose(row: np.ndarray) -> Pose:
    q = row[3:7]
    norm = np.linalg.norm(q)
    q = np.array([1.0, 0.0, 0.0, 0.0]) if norm < 1e-9 else q / norm
    return Pose(row[:3], q)


def run_episode(env, policy, seed: int, rates: RateConfig = RateConfig(),
                max_steps: int = 240, window: int = 36,
                trace_dir: Path | None = None) -> EpisodeResult:
    """Roll one episode of the dual-rate loop against a simulator.

    `policy` must provide:
      reset(result)                      -> None
      plan(obs: dict, seed: int)         -> chunk [horizon, 8] or None
      correct(obs: dict)                 -> Twist (zero twist to disable)
    where obs = {images, wrenches [window,6], proprio [8], slow_history,
    step}.
    """
    res: StepResult = env.reset(seed)
    policy.reset(res)
    spp = rates.steps_per_plan

    wrench_hist = [np.zeros(6)] * window
    slow_history = [np.concatenate([res.tcp.position, res.tcp.orientation,
                                    [res.gripper]])] * 4
    hold_pose, hold_grip = res.tcp, res.gripper
    chunk = None          # active chunk [horizon, 8]
    chunk_id = -1
    chunk_base = 0        # control step at which row index 0 is aligned
    pending = None        # (ready_step, chunk, chunk_id)
    starved = 0
    prev_slow = res.tcp
    delta_cum = Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    rows = {k: [] for k in ("step", "chunk", "row", "slow", "residual",
                            "executed", "wrench", "contact", "phase", "fn")}

    def obs_dict(t: int) -> dict:
        return {"images": res.images,
                "wrenches": np.stack(wrench_hist[-window:]),
                "proprio": np.concatenate([res.tcp.position,
                                           res.tcp.orientation,
                                           [res.gripper]]),
                "slow_history": np.stack(slow_history[-4:]),
                "step": t}

    success = False
    t = 0
    for t in range(max_steps):
        obs = obs_dict(t)
        if t % spp == 0:
            k = t // spp
            planned = policy.plan(obs, seed=seed * 100003 + k)
            if planned is not None:
                pending = (t + rates.latency_discard, np.asarray(planned), k)
        if pending is not None and t >= pending[0]:
            _, chunk, chunk_id = pending
            chunk_base = (chunk_id * spp)
            pending = None

        if chunk is None:
            row_idx = -1
            slow_pose, grip = hold_pose, hold_grip
        else:
            row_idx = t - chunk_base
            if row_idx >= rates.horizon:
                starved += 1
                row_idx = rates.horizon - 1
            slow_pose = _clamp_command(prev_slow, _wire_pose(chunk[row_idx]))
            grip = float(chunk[row_idx, 7])
        prev_slow = slow_pose

        residual = policy.correct(obs)
        residual = clamp_twist(residual, LIN_STEP_CAP, ANG_STEP_CAP)
        delta_cum = compose(delta_cum, twist_to_delta_pose(residual))
        executed = _clip_workspace(compose(slow_pose, delta_cum))

        res = env.step(executed, grip)
        wrench_hist.append(res.wrench)
        slow_history.append(np.concatenate([slow_pose.position,
                                            slow_pose.orientation, [grip]]))

        rows["step"].append(t)
        rows["chunk"].append(chunk_id if chunk is not None else -1)
        rows["row"].append(row_idx)
        rows["slow"].append(np.concatenate([slow_pose.position,
                                            slow_pose.orientation]))
        rows["residual"].append(residual.to_array())
        rows["executed"].append(np.concatenate([executed.position,
                                                executed.orientation]))
        rows["wrench"].append(res.wrench)
        rows["contact"].append(int(res.contact))
        rows["phase"].append(res.phase)
        rows["fn"].append(float(res.info.get("fn", max(0.0, -res.wrench[2]))))

        if isinstance(env, PegEnv) and env.seated():
            success = True
            break
        if isinstance(env, WipingEnv) and res.phase == 3:
            success = bool(env.wiped.all())
            break

    trace = {k: np.asarray(v) for k, v in rows.items()}
    info = {"starved_steps": starved}
    if isinstance(env, WipingEnv):
        info["wiped_cells"] = int(env.wiped.sum())
        info["n_cells"] = env.cfg.n_cells
    if isinstance(env, PegEnv):
        info["depth"] = env.depth()
        info["offset"] = float(np.linalg.norm(
            env.tcp.position[:2] - env.hole))
    result = EpisodeResult(success=success, steps=t + 1, trace=trace,
                           info=info)
    if trace_dir is not None:
        write_trace(Path(trace_dir), result)
    return result


_TRACE_COLS = (["step", "chunk", "row"]
               + [f"slow_{c}" for c in ("x", "y", "z", "qw", "qx", "qy", "qz")]
               + [f"res_{c}" for c in ("vx", "vy", "vz", "wx", "wy", "wz")]
               + [f"exec_{c}" for c in ("x", "y", "z", "qw", "qx", "qy", "qz")]
               + [f"F_{c}" for c in ("x", "y", "z")]
               + [f"T_{c}" for c in ("x", "y", "z")]
               + ["contact", "phase", "fn"])


def trace_matrix(result: EpisodeResult) -> np.ndarray:
    tr = result.trace
    return np.column_stack([
        tr["step"], tr["chunk"], tr["row"], tr["slow"], tr["residual"],
        tr["executed"], tr["wrench"], tr["contact"], tr["phase"],
        tr["fn"]]).astype(np.float64)


def write_trace(d: Path, result: EpisodeResult):
    d.mkdir(parents=True, exist_ok=True)
    mat = trace_matrix(result)
    mat.astype("<f8").tofile(d / "trace.bin")
    with open(d / "trace.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_TRACE_COLS)
        for row in mat:
            w.writerow([repr(float(v)) for v in row])


def compute_metrics(result: EpisodeResult, task: str) -> dict:
    """Per-episode metrics: success, wiping score, and force statistics."""
    tr = result.trace
    contact = tr["contact"].astype(bool)
    fn = tr["fn"][contact]
    metrics = {
        "success": bool(result.success),
        "steps": int(result.steps),
        "mean_Fn": float(fn.mean()) if fn.size else None,
        "over_ratio": float((fn > 25.0).mean()) if fn.size else 0.0,
        "under_ratio": float((fn < 2.5).mean()) if fn.size else 0.0,
    }
    if task == "wiping":
        wiped = result.info.get("wiped_cells", 0)
        total = result.info.get("n_cells", 6)
        if wiped == total:
            metrics["score"] = 1.0
        elif wiped > 0:
            metrics["score"] = 0.5
        else:
            metrics["score"] = 0.0
        metrics["success"] = metrics["score"] > 0.0
    else:
        metrics["score"] = 1.0 if result.success else 0.0
    return metrics


def batch_eval(env_factory, policy, n_trials: int = 20, base_seed: int = 0,
               task: str = "charger", rates: RateConfig = RateConfig(),
               max_steps: int = 240,
               out_dir: Path | None = None) -> dict:
    """Evaluate a policy over seeded trials; optionally persist CSV + JSON."""
    trials = []
    for i in range(n_trials):
        env = env_factory()
        result = run_episode(env, policy, seed=base_seed + i, rates=rates,
                             max_steps=max_steps)
        m = compute_metrics(result, task)
        m["seed"] = base_seed + i
        trials.append(m)
    fns = [m["mean_Fn"] for m in trials if m["mean_Fn"] is not None]
    summary = {
        "task": task, "n_trials": n_trials, "base_seed": base_seed,
        "SR": float(np.mean([m["success"] for m in trials])),
        "Score": float(np.mean([m["score"] for m in trials])),
        "mean_Fn": float(np.mean(fns)) if fns else None,
        "over": float(np.mean([m["over_ratio"] for m in trials])),
        "under": float(np.mean([m["under_ratio"] for m in trials])),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = ["seed", "success", "score", "steps", "mean_Fn",
                "over_ratio", "under_ratio"]
        with open(out / "trials.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(cols)
            for m in trials:
                w.writerow(["--" if m[c] is None else m[c] for c in cols])
        (out / "summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary
