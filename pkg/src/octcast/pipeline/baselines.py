"""Non-learned baselines: constant-velocity Kalman filter and the center prior."""
from __future__ import annotations

import numpy as np

from ..errors import InsufficientObservations
from ..geometry import HandTrajectory
from ..synthdata import DEFAULT_HAND_POS, TrainingSample
from .inference import rasterize_heatmap

_F = np.array([[1.0, 0, 1, 0], [0, 1.0, 0, 1], [0, 0, 1.0, 0], [0, 0, 0, 1.0]])
_H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])


def _kalman_track(obs: np.ndarray, seen: np.ndarray, horizon: int, q: float, r: float) -> np.ndarray:
    first = int(np.argmax(seen))
    x = np.array([*obs[first], 0.0, 0.0])
    P = np.diag([r, r, 1.0, 1.0])
    Q = q * np.eye(4)
    R = r * np.eye(2)
    for t in range(first + 1, len(obs)):
        x = _F @ x
        P = _F @ P @ _F.T + Q
        if seen[t]:
            y = obs[t] - _H @ x
            S = _H @ P @ _H.T + R
            K = P @ _H.T @ np.linalg.inv(S)
            x = x + K @ y
            P = (np.eye(4) - K @ _H) @ P
    out = np.empty((horizon, 2))
    for t in range(horizon):
        x = _F @ x
        out[t] = x[:2]
    return out


def kalman_baseline(observed_centers, F: int, visible=None, q: float = 1e-4, r: float = 1e-2) -> HandTrajectory:
    """Constant-velocity Kalman filter over each hand's observed centers,
    then F open-loop predictions.

    ``observed_centers`` is (2, T, 2); ``visible`` (2, T) marks detections.
    A hand never observed is returned invisible at its default location; a
    hand observed exactly once raises ``InsufficientObservations``.
    """
    obs = np.asarray(observed_centers, float).reshape(2, -1, 2)
    seen = np.ones(obs.shape[:2], bool) if visible is None else np.asarray(visible, bool)
    points = np.repeat(DEFAULT_HAND_POS[None], F, axis=0)
    vis = np.zeros((F, 2), bool)
    for side in range(2):
        count = int(seen[side].sum())
        if count == 0:
            continue
        if count < 2:
            raise InsufficientObservations(f"hand {side} has {count} observation; need >= 2")
        points[:, side] = _kalman_track(obs[side], seen[side], F, q, r)
        vis[:, side] = True
    return HandTrajectory(points, vis)


def kalman_forecast(sample: TrainingSample, q: float = 1e-4, r: float = 1e-2) -> HandTrajectory:
    """Kalman baseline on a sample's observed hand box centers; a hand seen
    only once is held at that position."""
    b = sample.boxes["hand"]
    centers = (b[..., :2] + b[..., 2:]) / 2
    seen = sample.valid["hand"].copy()
    held = {}
    for side in range(2):
        if seen[side].sum() == 1:
            held[side] = centers[side, seen[side]][0]
            seen[side] = False
    traj = kalman_baseline(centers, sample.F, seen, q, r)
    for side, p in held.items():
        traj.points[:, side] = p
        traj.visible[:, side] = True
    return traj


def center_baseline(grid: tuple[int, int] = (32, 32), sigma: float = 0.05) -> np.ndarray:
    return rasterize_heatmap([(0.5, 0.5)], sigma, grid)
