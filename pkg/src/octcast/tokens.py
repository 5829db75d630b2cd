"""Per-frame input tokens: two hands, two objects and one global token.

Token order along the category axis is fixed: handL, handR, obj1, obj2, global.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import OddDimension, ShapeMismatch
from .synthdata import DEFAULT_HAND_POS, TrainingSample

N_TOKENS = 5
CATEGORY = (0, 0, 1, 1, 2)  # hand, hand, object, object, global
SLOTS = {"hand": (0, 1), "object": (2, 3), "global": (4,)}
WAVELENGTH_BASE = 10000.0


def sinusoidal_embedding(t: int, D: int) -> np.ndarray:
    """Interleaved sin/cos position code: [sin(t w_0), cos(t w_0), sin(t w_1), ...]."""
    if D % 2:
        raise OddDimension(f"embedding width must be even, got {D}")
    if t < 0:
        raise ValueError("position must be non-negative")
    i = np.arange(D // 2)
    freq = 1.0 / WAVELENGTH_BASE ** (2 * i / D)
    out = np.empty(D)
    out[0::2] = np.sin(t * freq)
    out[1::2] = np.cos(t * freq)
    return out


def sinusoidal_table(n: int, D: int, dtype=torch.float32) -> torch.Tensor:
    if D % 2:
        raise OddDimension(f"embedding width must be even, got {D}")
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = WAVELENGTH_BASE ** (-torch.arange(0, D, 2, dtype=torch.float64) / D)
    out = torch.empty(n, D, dtype=torch.float64)
    out[:, 0::2] = torch.sin(pos * freq)
    out[:, 1::2] = torch.cos(pos * freq)
    return out.to(dtype)


def box_location(boxes: torch.Tensor) -> torch.Tensor:
    """(x1, y1, x2, y2) -> (cx, cy, w, h)."""
    xy1, xy2 = boxes[..., :2], boxes[..., 2:]
    return torch.cat([(xy1 + xy2) / 2, xy2 - xy1], dim=-1)


def uniform_init_(module: nn.Module) -> nn.Module:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every Linear weight and bias."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            bound = 1.0 / math.sqrt(m.in_features)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.uniform_(m.bias, -bound, bound)
    return module


class TokenEmbedder(nn.Module):
    """Affine hand/object/global projections plus the spatial embedding table."""

    def __init__(self, d_feat: int, D: int):
        super().__init__()
        self.d_feat = d_feat
        self.D = D
        self.hand = nn.Linear(d_feat + 4, D)
        self.object = nn.Linear(d_feat + 4, D)
        self.glob = nn.Linear(d_feat, D)
        self.spatial = nn.Parameter(torch.empty(3, D))
        uniform_init_(self)
        bound = 1.0 / math.sqrt(D)
        nn.init.uniform_(self.spatial, -bound, bound)

    def build_tokens(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns tokens (B, 5, T, D) and pad mask (B, 5, T), True = padded."""
        hf, of, gf = batch["hand_feat"], batch["obj_feat"], batch["glob_feat"]
        if hf.shape[-1] != self.d_feat or of.shape[-1] != self.d_feat or gf.shape[-1] != self.d_feat:
            raise ShapeMismatch(f"feature width must be {self.d_feat}")
        hand_valid, obj_valid = batch["hand_valid"], batch["obj_valid"]
        hand_in = torch.cat([box_location(batch["hand_box"]), hf], dim=-1)
        obj_in = torch.cat([box_location(batch["obj_box"]), of], dim=-1)
        hand_tok = self.hand(hand_in) * hand_valid[..., None]
        obj_tok = self.object(obj_in) * obj_valid[..., None]
        glob_tok = self.glob(gf)[:, None]
        tokens = torch.cat([hand_tok, obj_tok, glob_tok], dim=1)
        glob_pad = torch.zeros_like(hand_valid[:, :1])
        pad = torch.cat([~hand_valid, ~obj_valid, glob_pad], dim=1)
        return tokens, pad

    def apply_embeddings(self, tokens: torch.Tensor, pad: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        T = tokens.shape[-2]
        spatial = self.spatial[list(CATEGORY)][:, None, :]
        pos = sinusoidal_table(T, self.D, tokens.dtype)[None]
        return tokens + spatial + pos, pad

    def forward(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor]:
        return self.apply_embeddings(*self.build_tokens(batch))


def ablate_tokens(tokens: torch.Tensor, pad: torch.Tensor, ablate: Sequence[str]):
    """Zero whole token categories and mark them padded."""
    if not ablate:
        return tokens, pad
    slots = sorted({i for name in ablate for i in SLOTS[name]})
    keep = torch.ones(N_TOKENS, dtype=tokens.dtype)
    keep[slots] = 0
    tokens = tokens * keep[None, :, None, None]
    pad = pad.clone()
    pad[:, slots] = True
    return tokens, pad


def filled_trajectory(points: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Replace invisible hand entries with the default hand locations."""
    out = np.array(points, float, copy=True)
    vis = np.asarray(visible, bool)
    for side in range(2):
        out[..., side, :][~vis[..., side]] = DEFAULT_HAND_POS[side]
    return out


def collate(samples: Sequence[TrainingSample], dtype=torch.float32, n_contacts: int | None = None) -> dict:
    """Stack samples into the batch dictionary consumed by the model."""
    if not samples:
        raise ValueError("empty batch")
    T = samples[0].T
    if any(s.T != T for s in samples):
        raise ShapeMismatch("all samples in a batch need the same T")
    f = lambda a: torch.as_tensor(np.stack(a), dtype=dtype)  # noqa: E731
    b = lambda a: torch.as_tensor(np.stack(a), dtype=torch.bool)  # noqa: E731
    n_max = n_contacts or max(len(s.gt_contacts) for s in samples)
    contacts = np.zeros((len(samples), max(n_max, 1), 2))
    counts = np.zeros(len(samples), np.int64)
    for i, s in enumerate(samples):
        c = np.asarray(s.gt_contacts, float).reshape(-1, 2)[: max(n_max, 1)]
        contacts[i, : len(c)] = c
        counts[i] = len(c)
    return {
        "hand_feat": f([s.features["hand"] for s in samples]),
        "obj_feat": f([s.features["object"] for s in samples]),
        "glob_feat": f([s.features["global"] for s in samples]),
        "hand_box": f([s.boxes["hand"] for s in samples]),
        "obj_box": f([s.boxes["object"] for s in samples]),
        "hand_valid": b([s.valid["hand"] for s in samples]),
        "obj_valid": b([s.valid["object"] for s in samples]),
        "h_T": f([s.last_hand_location() for s in samples]),
        "gt_traj": f([filled_trajectory(s.gt_trajectory.points, s.gt_trajectory.visible) for s in samples]),
        "gt_vis": b([s.gt_trajectory.visible for s in samples]),
        "contacts": torch.as_tensor(contacts, dtype=dtype),
        "n_contacts": torch.as_tensor(counts),
    }
