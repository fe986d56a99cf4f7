"""Deterministic quasi-static contact simulator (peg-in-hole and wiping).

Sign convention: the reported wrench is the force/torque the tool applies to
the environment, expressed in a TCP frame aligned with the world axes.
Pressing down on a surface therefore reports F_z < 0, and lateral contact at
a positive offset reports a positive lateral force, so the admittance-style
teachers (-alpha * F) drive the tool back toward alignment.

Physics is quasi-static: the TCP tracks the commanded pose subject to
contact constraints; normal forces follow a spring-damper in penetration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..geometry import Pose, interpolate_pose
from .render import render_peg_views, render_wiping_views


class WorkspaceViolation(ValueError):
    pass


WORKSPACE_LO = np.array([-0.08, -0.08, 0.0])
WORKSPACE_HI = np.array([0.08, 0.08, 0.12])


@dataclass(frozen=True)
class PegConfig:
    task: str = "charger"
    hole_nominal: tuple[float, float] = (0.02, 0.0)
    hole_jitter: float = 4e-3
    plate_top: float = 0.02
    hole_depth: float = 0.014
    seat_depth: float = 0.010
    clearance: float = 1.5e-3
    capture_radius: float = 6e-3
    yaw_clearance: float = 0.10        # rad
    k_n: float = 5000.0                # N/m
    c_n: float = 50.0                  # N*s/m
    mu: float = 0.4
    rim_eta: float = 0.6               # lateral fraction of F_n at the rim
    yaw_eta: float = 0.5               # jamming torque per (N * rad)
    sensor_noise_F: float = 0.2        # N
    sensor_noise_T: float = 0.01       # N*m
    recovery_force: float = 20.0
    recovery_torque: float = 1.0
    recovery_steps: int = 3
    start_center: tuple[float, float, float] = (-0.01, -0.01, 0.05)
    start_jitter: float = 40e-3
    start_yaw_jitter: float = 0.05     # rad
    f_c: float = 24.0
    interp_substeps: int = 21


@dataclass(frozen=True)
class WipingConfig:
    task: str = "wiping"
    sponge_nominal: tuple[float, float] = (-0.04, -0.03)
    sponge_jitter: float = 3e-3
    sponge_length: float = 0.03
    grasp_radius: float = 10e-3
    grasp_width: float = 0.02
    board_x: tuple[float, float] = (-0.015, 0.055)
    board_y: tuple[float, float] = (-0.02, 0.02)
    board_top: float = 0.015
    ood_raise: float = 0.0             # +0.03 at OOD test time
    n_cells: int = 6
    cell_x: tuple[float, float] = (0.0, 0.045)
    cell_radius: float = 6e-3
    k_s: float = 800.0                 # sponge spring N/m
    c_s: float = 30.0
    mu: float = 0.3
    under_force: float = 2.5
    over_force: float = 25.0
    sensor_noise_F: float = 0.2
    sensor_noise_T: float = 0.01
    start_center: tuple[float, float, float] = (-0.04, 0.03, 0.06)
    start_jitter: float = 8e-3
    f_c: float = 24.0
    interp_substeps: int = 21


@dataclass
class StepResult:
    tcp: Pose
    gripper: float
    wrench: np.ndarray          # reported (with sensor noise)
    contact: bool
    phase: int
    images: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def _check_workspace(p: np.ndarray):
    if (p < WORKSPACE_LO - 1e-9).any() or (p > WORKSPACE_HI + 1e-9).any():
        raise WorkspaceViolation(f"command {p} outside workspace box")


class PegEnv:
    """Peg-in-hole: approach / search / recovery / insert / done."""

    PHASES = ("approach", "search", "recovery", "insert", "done")

    def __init__(self, cfg: PegConfig = PegConfig()):
        self.cfg = cfg

    def reset(self, seed: int) -> StepResult:
        cfg = self.cfg
        self.rng = np.random.default_rng(seed)
        self.hole = np.array(cfg.hole_nominal) + \
            self.rng.uniform(-cfg.hole_jitter, cfg.hole_jitter, 2)
        start = np.array(cfg.start_center) + np.concatenate([
            self.rng.uniform(-cfg.start_jitter, cfg.start_jitter, 2), [0.0]])
        self.yaw0 = self.rng.uniform(-cfg.start_yaw_jitter,
                                     cfg.start_yaw_jitter)
        self.cmd = self._pose(start, self.yaw0)
        self.tcp = self.cmd
        self.gripper = 0.03
        self.phase = 0
        self.contact = False
        self.prev_pen = 0.0
        self.recovery_counter = 0
        self.release_counter = 0
        self.step_count = 0
        self.last_wrench = np.zeros(6)
        return StepResult(self.tcp, self.gripper, np.zeros(6), False,
                          self.phase, self.render())

    @staticmethod
    def _pose(p: np.ndarray, yaw: float) -> Pose:
        return Pose(p, np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)]))

    def render(self) -> np.ndarray:
        # The socket housing is drawn at its nominal location: at this
        # resolution (5 mm/pixel) the camera cannot resolve the per-episode
        # bore jitter, so precise alignment must come from force feedback.
        return render_peg_views(self.tcp.position, self.tcp.yaw(),
                                np.array(self.cfg.hole_nominal), self.cfg)

    def step(self, command: Pose, gripper: float) -> StepResult:
        cfg = self.cfg
        _check_workspace(command.position)
        dt_sub = 1.0 / (cfg.f_c * cfg.interp_substeps)
        wrench = np.zeros(6)
        for i in range(1, cfg.interp_substeps + 1):
            sub = interpolate_pose(self.cmd, command,
                                   i / cfg.interp_substeps)
            wrench = self._resolve(sub, dt_sub)
        self.cmd = command
        self.gripper = gripper
        self.step_count += 1
        self._update_phase(wrench)
        noise = np.concatenate([
            self.rng.normal(0.0, cfg.sensor_noise_F, 3),
            self.rng.normal(0.0, cfg.sensor_noise_T, 3)])
        reported = wrench + noise
        self.last_wrench = reported
        return StepResult(self.tcp, self.gripper, reported, self.contact,
                          self.phase, self.render(),
                          info={"depth": self.depth(),
                                "offset": float(np.linalg.norm(
                                    self.tcp.position[:2] - self.hole))})

    def depth(self) -> float:
        return max(0.0, self.cfg.plate_top - self.tcp.position[2])

    def seated(self) -> bool:
        off = np.linalg.norm(self.tcp.position[:2] - self.hole)
        return self.depth() >= self.cfg.seat_depth and \
            off <= self.cfg.clearance + 1e-9

    def _resolve(self, sub: Pose, dt: float) -> np.ndarray:
        """One quasi-static substep: constrain TCP, return clean wrench."""
        cfg = self.cfg
        cmd_p = sub.position
        yaw = sub.yaw()
        offset = cmd_p[:2] - self.hole
        r = float(np.linalg.norm(offset))
        aligned = r <= cfg.clearance and abs(yaw) <= cfg.yaw_clearance
        prev_p = self.tcp.position
        wrench = np.zeros(6)
        actual_yaw = yaw
        in_hole_before = prev_p[2] < cfg.plate_top - 1e-12 and \
            np.linalg.norm(prev_p[:2] - self.hole) <= cfg.clearance + 1e-9

        if cmd_p[2] >= cfg.plate_top:
            # Free space above the plate.
            actual = cmd_p.copy()
            self.prev_pen = 0.0
            self.contact = False
        elif aligned or in_hole_before:
            # Inside the hole (or dropping in): walls clamp xy and yaw.
            actual = cmd_p.copy()
            if r > cfg.clearance:
                actual[:2] = self.hole + offset * (cfg.clearance / r)
            actual_yaw = float(np.clip(yaw, -cfg.yaw_clearance,
                                       cfg.yaw_clearance))
            bottom = cfg.plate_top - cfg.hole_depth
            pen = max(0.0, bottom - cmd_p[2])
            actual[2] = max(cmd_p[2], bottom)
            rate = (pen - self.prev_pen) / dt
            fn = max(0.0, cfg.k_n * pen + cfg.c_n * rate)
            self.prev_pen = pen
            wrench[2] = -fn
            # Wall reaction when the command presses past the clearance;
            # tool-on-env force points away from the hole center.
            if r > cfg.clearance:
                wall = cfg.k_n * (r - cfg.clearance)
                wrench[:2] = wall * offset / r
            wrench[5] = 1.0 * yaw    # wall grip torque, 1 N*m/rad
            self.contact = fn > 0.0 or r > cfg.clearance
        else:
            # Resting on the plate / rim.
            actual = cmd_p.copy()
            actual[2] = cfg.plate_top
            pen = cfg.plate_top - cmd_p[2]
            rate = (pen - self.prev_pen) / dt
            fn = max(0.0, cfg.k_n * pen + cfg.c_n * rate)
            self.prev_pen = pen
            wrench[2] = -fn
            if r <= cfg.capture_radius and r > 1e-12:
                # Rim force field: tool-on-env force away from the center,
                # growing with the offset, so -alpha*F pulls inward.
                wrench[:2] = cfg.rim_eta * fn * offset / cfg.capture_radius
            else:
                # Flat-plate friction opposes commanded sliding; tool-on-env
                # friction points along the motion.
                motion = cmd_p[:2] - prev_p[:2]
                m = np.linalg.norm(motion)
                if m > 1e-9:
                    wrench[:2] = cfg.mu * fn * motion / m
            wrench[5] = cfg.yaw_eta * fn * yaw
            self.contact = fn > 0.0
        self.tcp = self._pose(actual, actual_yaw)
        return wrench

    def _update_phase(self, wrench: np.ndarray):
        cfg = self.cfg
        if self.seated():
            self.phase = 4
            return
        big = np.linalg.norm(wrench[:3]) > cfg.recovery_force or \
            abs(wrench[5]) > cfg.recovery_torque
        if self.phase == 2:
            if not self.contact:
                self.release_counter += 1
                if self.release_counter >= cfg.recovery_steps:
                    self.phase = 0
                    self.release_counter = 0
                    self.recovery_counter = 0
            else:
                self.release_counter = 0
            return
        self.recovery_counter = self.recovery_counter + 1 if big else 0
        if self.recovery_counter >= cfg.recovery_steps:
            self.phase = 2
            return
        if self.depth() > 5e-4:
            self.phase = 3
        elif self.contact:
            self.phase = 1
        elif self.phase in (1, 3) and \
                self.tcp.position[2] < cfg.plate_top + 5e-3:
            self.phase = 1      # brief contact dropout near the plate
        else:
            self.phase = 0


class WipingEnv:
    """Wiping: pick / approach / wiping / done."""

    PHASES = ("pick", "approach", "wiping", "done")

    def __init__(self, cfg: WipingConfig = WipingConfig()):
        self.cfg = cfg

    def board_top(self) -> float:
        return self.cfg.board_top + self.cfg.ood_raise

    def cell_centers(self) -> np.ndarray:
        cfg = self.cfg
        xs = np.linspace(cfg.cell_x[0], cfg.cell_x[1], cfg.n_cells)
        return np.stack([xs, np.zeros(cfg.n_cells)], axis=1)

    def reset(self, seed: int) -> StepResult:
        cfg = self.cfg
        self.rng = np.random.default_rng(seed)
        self.sponge = np.array(cfg.sponge_nominal) + \
            self.rng.uniform(-cfg.sponge_jitter, cfg.sponge_jitter, 2)
        start = np.array(cfg.start_center) + np.concatenate([
            self.rng.uniform(-cfg.start_jitter, cfg.start_jitter, 2), [0.0]])
        self.cmd = Pose(start, np.array([1.0, 0.0, 0.0, 0.0]))
        self.tcp = self.cmd
        self.gripper = 0.04
        self.holding = False
        self.phase = 0
        self.contact = False
        self.prev_pen = 0.0
        self.ever_contact = False
        self.wiped = np.zeros(cfg.n_cells, dtype=bool)
        self.step_count = 0
        self.last_wrench = np.zeros(6)
        return StepResult(self.tcp, self.gripper, np.zeros(6), False,
                          self.phase, self.render())

    def render(self) -> np.ndarray:
        return render_wiping_views(self.tcp.position, self.sponge,
                                   self.holding, self.wiped, self)

    def over_board(self, xy: np.ndarray) -> bool:
        cfg = self.cfg
        return cfg.board_x[0] <= xy[0] <= cfg.board_x[1] and \
            cfg.board_y[0] <= xy[1] <= cfg.board_y[1]

    def step(self, command: Pose, gripper: float) -> StepResult:
        cfg = self.cfg
        _check_workspace(command.position)
        dt_sub = 1.0 / (cfg.f_c * cfg.interp_substeps)
        wrench = np.zeros(6)
        fn = 0.0
        for i in range(1, cfg.interp_substeps + 1):
            sub = interpolate_pose(self.cmd, command,
                                   i / cfg.interp_substeps)
            wrench, fn = self._resolve(sub, gripper, dt_sub)
        self.cmd = command
        self.gripper = gripper
        self.step_count += 1
        self._mark_cells(fn)
        self._update_phase()
        noise = np.concatenate([
            self.rng.normal(0.0, cfg.sensor_noise_F, 3),
            self.rng.normal(0.0, cfg.sensor_noise_T, 3)])
        reported = wrench + noise
        self.last_wrench = reported
        return StepResult(self.tcp, self.gripper, reported, self.contact,
                          self.phase, self.render(),
                          info={"fn": fn, "holding": self.holding,
                                "wiped": int(self.wiped.sum())})

    def _resolve(self, sub: Pose, gripper: float, dt: float):
        cfg = self.cfg
        cmd_p = sub.position
        prev_p = self.tcp.position
        wrench = np.zeros(6)
        fn = 0.0
        if not self.holding:
            near = np.linalg.norm(cmd_p[:2] - self.sponge) <= cfg.grasp_radius
            if near and cmd_p[2] <= 0.02 and gripper <= cfg.grasp_width:
                self.holding = True
            self.tcp = Pose(cmd_p.copy(), sub.orientation)
            self.contact = False
            self.prev_pen = 0.0
            return wrench, fn
        bottom_cmd = cmd_p[2] - cfg.sponge_length
        actual = cmd_p.copy()
        if self.over_board(cmd_p[:2]) and bottom_cmd < self.board_top():
            pen = self.board_top() - bottom_cmd
            rate = (pen - self.prev_pen) / dt
            fn = max(0.0, cfg.k_s * pen + cfg.c_s * rate)
            self.prev_pen = pen
            wrench[2] = -fn
            motion = cmd_p[:2] - prev_p[:2]
            m = np.linalg.norm(motion)
            if m > 1e-9:
                wrench[:2] = cfg.mu * fn * motion / m
            self.contact = fn > 0.0
            self.ever_contact = self.ever_contact or self.contact
        else:
            self.contact = False
            self.prev_pen = 0.0
        self.tcp = Pose(actual, sub.orientation)
        return wrench, fn

    def _mark_cells(self, fn: float):
        cfg = self.cfg
        if not self.contact or not (cfg.under_force <= fn <= cfg.over_force):
            return
        d = np.linalg.norm(self.cell_centers() - self.tcp.position[:2],
                           axis=1)
        self.wiped |= d <= cfg.cell_radius

    def _update_phase(self):
        if not self.holding:
            self.phase = 0
        elif self.contact:
            self.phase = 2
        elif self.ever_contact and self.tcp.position[2] - \
                self.cfg.sponge_length > self.board_top() + 0.01:
            self.phase = 3
        elif self.phase != 3:
            self.phase = 1


def make_env(task: str, ood: bool = False, noise: bool = True,
             **overrides):
    """Factory: task id -> configured environment instance."""
    if task in ("charger", "usb"):
        cfg = PegConfig(task=task, **overrides)
        if not noise:
            cfg = replace(cfg, sensor_noise_F=0.0, sensor_noise_T=0.0)
        return PegEnv(cfg)
    if task == "wiping":
        cfg = WipingConfig(ood_raise=0.03 if ood else 0.0, **overrides)
        if not noise:
            cfg = replace(cfg, sensor_noise_F=0.0, sensor_noise_T=0.0)
        return WipingEnv(cfg)
    raise KeyError(f"no simulator for task {task!r}")
