"""Conditional VAE heads for hand locations and contact points, plus the
action-anticipation classifier."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ShapeMismatch, UnmappedAction
from .tokens import uniform_init_

NONE, H_GIVEN_O, O_GIVEN_H = "NONE", "H_GIVEN_O", "O_GIVEN_H"


def kl_loss(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)), summed over latent dims, averaged over
    the batch (all leading dims except the last)."""
    kl = 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(dim=-1)
    return kl.mean() if kl.dim() else kl


def reparameterize(mu: torch.Tensor, log_var: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    return mu + torch.exp(0.5 * log_var) * noise


class CVAE(nn.Module):
    """Single-layer encoder [x; c] -> (mu, log_var) and decoder [z; c] -> x."""

    def __init__(self, x_dim: int, c_dim: int, latent_dim: int):
        super().__init__()
        self.x_dim, self.c_dim, self.latent_dim = x_dim, c_dim, latent_dim
        self.enc = nn.Linear(x_dim + c_dim, 2 * latent_dim)
        self.dec = nn.Linear(latent_dim + c_dim, x_dim)
        uniform_init_(self)

    def encode(self, x: torch.Tensor, c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.shape[-1] != self.x_dim or c.shape[-1] != self.c_dim:
            raise ShapeMismatch(f"expected x dim {self.x_dim} and c dim {self.c_dim}, got {x.shape[-1]} and {c.shape[-1]}")
        mu, log_var = self.enc(torch.cat([x, c], dim=-1)).chunk(2, dim=-1)
        return mu, log_var

    def decode(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return self.dec(torch.cat([z, c], dim=-1))

    def forward(self, x, c, noise):
        mu, log_var = self.encode(x, c)
        return self.decode(reparameterize(mu, log_var, noise), c), mu, log_var


class HandHead(nn.Module):
    def __init__(self, D: int, latent_dim: int):
        super().__init__()
        self.cvae = CVAE(4, D, latent_dim)

    def loss(self, gt: torch.Tensor, visible: torch.Tensor, feats: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        """gt (B, F, 2, 2), visible (B, F, 2), feats (B, F, D), noise (B, F, latent).

        Reconstruction is summed over steps; at each step the squared error is
        averaged over the visible hands. The per-step KL terms are summed too.
        """
        if gt.shape[:2] != feats.shape[:2]:
            raise ShapeMismatch("trajectory horizon does not match decoder features")
        B, F_ = gt.shape[:2]
        x = gt.reshape(B, F_, 4)
        x_hat, mu, log_var = self.cvae(x, feats, noise)
        sq = (x_hat.reshape(B, F_, 2, 2) - gt).pow(2).sum(-1)
        vis = visible.to(sq.dtype)
        recon = (sq * vis).sum(-1) / vis.sum(-1).clamp(min=1.0)
        kl = 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(-1)
        return (recon.sum(-1) + kl.sum(-1)).mean()

    def sample(self, feat: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """Decode a prior draw: returns (..., 2, 2) left/right locations."""
        return self.cvae.decode(z, feat).reshape(feat.shape[:-1] + (2, 2))


class ObjectHead(nn.Module):
    """Contact-point C-VAE conditioned on the last global token and, in mode
    O_GIVEN_H, on a linear projection of the full hand trajectory h_T..h_{T+F}.
    In mode NONE the projection slot of the condition is zero."""

    def __init__(self, D: int, latent_dim: int, F: int):
        super().__init__()
        self.D = D
        self.traj_proj = nn.Linear(4 * (F + 1), D)
        self.cvae = CVAE(2, 2 * D, latent_dim)
        uniform_init_(self.traj_proj)

    def condition(self, z_gT: torch.Tensor, traj: torch.Tensor, mode: str) -> torch.Tensor:
        """traj (B, F+1, 2, 2) including h_T."""
        if mode == O_GIVEN_H:
            proj = self.traj_proj(traj.reshape(traj.shape[0], -1))
        elif mode == NONE:
            proj = torch.zeros_like(z_gT)
        else:
            raise ValueError(f"unsupported conditioning mode {mode!r}")
        return torch.cat([z_gT, proj], dim=-1)

    def loss(self, o: torch.Tensor, z_gT: torch.Tensor, traj: torch.Tensor, mode: str, noise: torch.Tensor) -> torch.Tensor:
        c = self.condition(z_gT, traj, mode)
        o_hat, mu, log_var = self.cvae(o, c, noise)
        recon = (o - o_hat).pow(2).sum(-1)
        kl = 0.5 * (mu.pow(2) + log_var.exp() - 1.0 - log_var).sum(-1)
        return (recon + kl).mean()

    def sample(self, z_gT: torch.Tensor, traj: torch.Tensor, mode: str, z: torch.Tensor) -> torch.Tensor:
        return self.cvae.decode(z, self.condition(z_gT, traj, mode))


class AnticipationHead(nn.Module):
    """Two-layer MLP on the last global token producing action logits."""

    def __init__(self, D: int, n_actions: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or D
        self.net = nn.Sequential(nn.Linear(D, hidden), nn.ReLU(), nn.Linear(hidden, n_actions))
        uniform_init_(self)

    def forward(self, z_gT: torch.Tensor) -> torch.Tensor:
        return self.net(z_gT)


def anticipation_logits(z_gT: torch.Tensor, head: AnticipationHead) -> torch.Tensor:
    return head(z_gT)


def marginalize(action_scores, verb_map: Sequence[int], noun_map: Sequence[int], n_verbs: int | None = None, n_nouns: int | None = None):
    """Softmax over action logits, then sum the mass per verb and per noun.

    ``verb_map[a]`` / ``noun_map[a]`` give the components of action ``a``.
    Works on a single score vector or a batch (..., n_actions).
    """
    scores = np.asarray(action_scores, float)
    n_actions = scores.shape[-1]
    if len(verb_map) != n_actions or len(noun_map) != n_actions:
        raise UnmappedAction(f"{n_actions} actions but {len(verb_map)} verb / {len(noun_map)} noun entries")
    verb_map = np.asarray(verb_map, int)
    noun_map = np.asarray(noun_map, int)
    if (verb_map < 0).any() or (noun_map < 0).any():
        raise UnmappedAction("negative verb/noun id")
    n_verbs = n_verbs or int(verb_map.max()) + 1
    n_nouns = n_nouns or int(noun_map.max()) + 1
    z = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    verbs = np.zeros(scores.shape[:-1] + (n_verbs,))
    nouns = np.zeros(scores.shape[:-1] + (n_nouns,))
    for a in range(n_actions):
        verbs[..., verb_map[a]] += p[..., a]
        nouns[..., noun_map[a]] += p[..., a]
    return verbs, nouns
