"""Stochastic K-rollout forecasting and heatmap rasterization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import EmptyPoints
from ..geometry import HandTrajectory
from ..model import OCTModel
from ..synthdata import TrainingSample
from ..tokens import collate


def rasterize_heatmap(points, sigma: float = 0.05, grid: tuple[int, int] = (32, 32)) -> np.ndarray:
    """Sum of isotropic Gaussians (normalized units) at the cell centers of
    an (H, W) grid, normalized to sum 1."""
    pts = np.asarray(points, float).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyPoints("no points to rasterize")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    h, w = grid
    xs = (np.arange(w) + 0.5) / w
    ys = (np.arange(h) + 0.5) / h
    gx = np.exp(-((xs[None, :] - pts[:, :1]) ** 2) / (2 * sigma**2))  # (n, W)
    gy = np.exp(-((ys[None, :] - pts[:, 1:]) ** 2) / (2 * sigma**2))  # (n, H)
    heat = gy.T @ gx
    return heat / heat.sum()


@dataclass
class ForecastResult:
    trajectories: list[HandTrajectory]
    contacts: np.ndarray  # (K, N, 2)
    heatmap: np.ndarray

    def to_dict(self) -> dict:
        h, w = self.heatmap.shape
        return {
            "trajectories": [t.points.tolist() for t in self.trajectories],
            "contacts": self.contacts.tolist(),
            "heatmap": {"h": h, "w": w, "data": self.heatmap.ravel().tolist()},
        }


@torch.no_grad()
def forecast(
    sample: TrainingSample,
    model: OCTModel,
    k: int | None = None,
    seed: int = 0,
    sigma: float = 0.05,
    grid: tuple[int, int] = (32, 32),
    zero_noise: bool = False,
    n_contacts: int | None = None,
) -> ForecastResult:
    """K independent rollouts sharing one encoder pass.

    Each rollout feeds its own sampled hand locations back into the decoder;
    its contact points are sampled conditioned on that rollout's trajectory.
    Latent draws come from N(0, I) via ``numpy.random.default_rng(seed)``,
    or are all zero with ``zero_noise``.
    """
    model.eval()
    cfg = model.cfg
    k = k or cfg.K_samples
    n_c = n_contacts or cfg.N_contacts
    dtype = next(model.parameters()).dtype
    rng = np.random.default_rng(seed)

    def draw(*shape):
        if zero_noise:
            return torch.zeros(shape, dtype=dtype)
        return torch.as_tensor(rng.standard_normal(shape), dtype=dtype)

    batch = collate([sample], dtype=dtype)
    enc = model.encode(batch).repeat(k)
    h_T = batch["h_T"].repeat(k, 1, 1)
    history = h_T.reshape(k, 1, 4)
    steps = []
    for _ in range(cfg.F):
        feat = model.decoder.decode_step(history, enc)
        h = model.hand_head.sample(feat, draw(k, cfg.latent_dim))
        steps.append(h)
        history = torch.cat([history, h.reshape(k, 1, 4)], dim=1)
    traj = torch.stack(steps, dim=1)  # (K, F, 2, 2)
    traj_full = torch.cat([h_T[:, None], traj], dim=1)
    z = draw(k, n_c, cfg.latent_dim).reshape(k * n_c, cfg.latent_dim)
    contacts = model.obj_head.sample(
        enc.Z_gT.repeat_interleave(n_c, 0), traj_full.repeat_interleave(n_c, 0), cfg.conditioning, z
    ).reshape(k, n_c, 2)

    traj_np = traj.double().numpy()
    contacts_np = contacts.double().numpy()
    vis = np.ones((cfg.F, 2), bool)
    heat = rasterize_heatmap(np.clip(contacts_np.reshape(-1, 2), 0.0, 1.0), sigma, grid)
    return ForecastResult([HandTrajectory(t, vis) for t in traj_np], contacts_np, heat)
