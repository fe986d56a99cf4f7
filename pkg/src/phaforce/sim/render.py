"""Orthographic 32x32 grayscale rasters of the simulator scene.

Three views (top x/y, front x/z, side y/z) with antialiased rectangles and
bilinear tent splats so that object positions remain recoverable at sub-pixel
resolution by a small CNN.
"""

from __future__ import annotations

import numpy as np

SIZE = 32
XY_EXTENT = (-0.08, 0.08)     # meters mapped onto 32 px
Z_EXTENT = (0.0, 0.12)


def _to_px(value: float, extent) -> float:
    lo, hi = extent
    return (value - lo) / (hi - lo) * (SIZE - 1)


def _splat(img: np.ndarray, u: float, v: float, intensity: float,
           radius: float = 1.6):
    """Additive tent splat centered at fractional pixel (u=row, v=col)."""
    r = int(np.ceil(radius))
    i0, j0 = int(np.floor(u)), int(np.floor(v))
    for i in range(i0 - r, i0 + r + 2):
        if not 0 <= i < SIZE:
            continue
        wi = max(0.0, 1.0 - abs(i - u) / radius)
        if wi == 0.0:
            continue
        for j in range(j0 - r, j0 + r + 2):
            if not 0 <= j < SIZE:
                continue
            wj = max(0.0, 1.0 - abs(j - v) / radius)
            if wj > 0.0:
                img[i, j] += intensity * wi * wj


def _rect(img: np.ndarray, u_lo: float, u_hi: float, v_lo: float,
          v_hi: float, intensity: float):
    """Antialiased axis-aligned rectangle in fractional pixel coordinates."""
    for i in range(max(0, int(np.floor(u_lo))),
                   min(SIZE, int(np.ceil(u_hi)) + 1)):
        cov_u = min(u_hi, i + 0.5) - max(u_lo, i - 0.5)
        if cov_u <= 0:
            continue
        cov_u = min(cov_u, 1.0)
        for j in range(max(0, int(np.floor(v_lo))),
                       min(SIZE, int(np.ceil(v_hi)) + 1)):
            cov_v = min(v_hi, j + 0.5) - max(v_lo, j - 0.5)
            if cov_v <= 0:
                continue
            img[i, j] += intensity * cov_u * min(cov_v, 1.0)


def _finish(views: list[np.ndarray]) -> np.ndarray:
    return np.clip(np.stack(views), 0.0, 1.0).astype(np.float32)


def render_peg_views(tcp: np.ndarray, yaw: float, hole: np.ndarray,
                     cfg) -> np.ndarray:
    top = np.zeros((SIZE, SIZE))
    front = np.zeros((SIZE, SIZE))
    side = np.zeros((SIZE, SIZE))

    plate_x = (hole[0] - 0.03, hole[0] + 0.04)
    plate_y = (hole[1] - 0.035, hole[1] + 0.035)
    _rect(top, _to_px(plate_y[0], XY_EXTENT), _to_px(plate_y[1], XY_EXTENT),
          _to_px(plate_x[0], XY_EXTENT), _to_px(plate_x[1], XY_EXTENT), 0.2)
    _splat(top, _to_px(hole[1], XY_EXTENT), _to_px(hole[0], XY_EXTENT), 0.9)
    _splat(top, _to_px(tcp[1], XY_EXTENT), _to_px(tcp[0], XY_EXTENT), 0.55)

    # Front (x horizontal, z vertical; row 0 = top of the workspace).
    zpx = SIZE - 1 - _to_px(cfg.plate_top, Z_EXTENT)
    _rect(front, zpx, zpx + 2.0, _to_px(plate_x[0], XY_EXTENT),
          _to_px(plate_x[1], XY_EXTENT), 0.25)
    _splat(front, zpx, _to_px(hole[0], XY_EXTENT), 0.9)
    _splat(front, SIZE - 1 - _to_px(tcp[2], Z_EXTENT),
           _to_px(tcp[0], XY_EXTENT), 0.55)

    _rect(side, zpx, zpx + 2.0, _to_px(plate_y[0], XY_EXTENT),
          _to_px(plate_y[1], XY_EXTENT), 0.25)
    _splat(side, zpx, _to_px(hole[1], XY_EXTENT), 0.9)
    _splat(side, SIZE - 1 - _to_px(tcp[2], Z_EXTENT),
           _to_px(tcp[1], XY_EXTENT), 0.55)
    # Encode yaw misalignment as a small secondary marker next to the TCP.
    _splat(top, _to_px(tcp[1] + 0.01 * np.sin(yaw), XY_EXTENT),
           _to_px(tcp[0] + 0.01 * np.cos(yaw), XY_EXTENT), 0.35, radius=1.2)
    return _finish([top, front, side])


def render_wiping_views(tcp: np.ndarray, sponge: np.ndarray, holding: bool,
                        wiped: np.ndarray, env) -> np.ndarray:
    cfg = env.cfg
    top = np.zeros((SIZE, SIZE))
    front = np.zeros((SIZE, SIZE))
    side = np.zeros((SIZE, SIZE))
    board_z = env.board_top()

    _rect(top, _to_px(cfg.board_y[0], XY_EXTENT),
          _to_px(cfg.board_y[1], XY_EXTENT),
          _to_px(cfg.board_x[0], XY_EXTENT),
          _to_px(cfg.board_x[1], XY_EXTENT), 0.2)
    for k, c in enumerate(env.cell_centers()):
        if not wiped[k]:
            _splat(top, _to_px(c[1], XY_EXTENT), _to_px(c[0], XY_EXTENT),
                   0.4, radius=1.2)
    if not holding:
        _splat(top, _to_px(sponge[1], XY_EXTENT),
               _to_px(sponge[0], XY_EXTENT), 0.9)
    _splat(top, _to_px(tcp[1], XY_EXTENT), _to_px(tcp[0], XY_EXTENT),
           0.55 if not holding else 0.75)

    zb = SIZE - 1 - _to_px(board_z, Z_EXTENT)
    _rect(front, zb, zb + 2.5, _to_px(cfg.board_x[0], XY_EXTENT),
          _to_px(cfg.board_x[1], XY_EXTENT), 0.3)
    _splat(front, SIZE - 1 - _to_px(tcp[2], Z_EXTENT),
           _to_px(tcp[0], XY_EXTENT), 0.55 if not holding else 0.75)
    if not holding:
        _splat(front, SIZE - 1 - _to_px(0.01, Z_EXTENT),
               _to_px(sponge[0], XY_EXTENT), 0.9)
    else:
        _splat(front, SIZE - 1 - _to_px(tcp[2] - cfg.sponge_length, Z_EXTENT),
               _to_px(tcp[0], XY_EXTENT), 0.9, radius=1.2)

    _rect(side, zb, zb + 2.5, _to_px(cfg.board_y[0], XY_EXTENT),
          _to_px(cfg.board_y[1], XY_EXTENT), 0.3)
    _splat(side, SIZE - 1 - _to_px(tcp[2], Z_EXTENT),
           _to_px(tcp[1], XY_EXTENT), 0.55 if not holding else 0.75)
    if not holding:
        _splat(side, SIZE - 1 - _to_px(0.01, Z_EXTENT),
               _to_px(sponge[1], XY_EXTENT), 0.9)
    return _finish([top, front, side])
