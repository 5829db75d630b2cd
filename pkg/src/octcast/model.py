"""The full forecasting network: tokens -> encoder -> decoder -> C-VAE heads."""
from __future__ import annotations

import dataclasses

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, from_dict
from .errors import AllTokensAblated, SchemaError
from .heads import HandHead, ObjectHead
from .io import load_weights, save_weights
from .tokens import TokenEmbedder, ablate_tokens
from .transformer import Decoder, Encoder, EncoderOutput

ALL_CATEGORIES = {"hand", "object", "global"}


class OCTModel(nn.Module):
    def __init__(self, cfg: ModelConfig, ablate=()):
        super().__init__()
        self.cfg = cfg.validate()
        self.ablate = tuple(sorted(set(ablate)))
        if set(self.ablate) >= ALL_CATEGORIES:
            raise AllTokensAblated("every token category is ablated; nothing left to attend to")
        self.tokens = TokenEmbedder(cfg.d_feat, cfg.D)
        self.encoder = Encoder(cfg.D, cfg.heads, cfg.enc_blocks, cfg.dropout)
        self.decoder = Decoder(cfg.D, cfg.heads, cfg.dec_blocks, cfg.dropout)
        self.hand_head = HandHead(cfg.D, cfg.latent_dim)
        self.obj_head = ObjectHead(cfg.D, cfg.latent_dim, cfg.F)

    def encode(self, batch: dict) -> EncoderOutput:
        tokens, pad = self.tokens.build_tokens(batch)
        tokens, pad = ablate_tokens(tokens, pad, self.ablate)
        tokens, pad = self.tokens.apply_embeddings(tokens, pad)
        return self.encoder(tokens, pad)

    @staticmethod
    def teacher_history(batch: dict) -> torch.Tensor:
        """[h_T, h_{T+1}, ..., h_{T+F-1}] flattened to (B, F, 4)."""
        hist = torch.cat([batch["h_T"][:, None], batch["gt_traj"][:, :-1]], dim=1)
        return hist.reshape(hist.shape[0], hist.shape[1], 4)

    def losses(self, batch: dict, hand_noise: torch.Tensor, obj_noise: torch.Tensor, contact_idx: torch.Tensor):
        """Teacher-forced (L_H, L_O) for a batch."""
        enc = self.encode(batch)
        feats = self.decoder(self.teacher_history(batch), enc)
        l_h = self.hand_head.loss(batch["gt_traj"], batch["gt_vis"], feats, hand_noise)
        traj_full = torch.cat([batch["h_T"][:, None], batch["gt_traj"]], dim=1)
        o = batch["contacts"][torch.arange(len(contact_idx)), contact_idx]
        l_o = self.obj_head.loss(o, enc.Z_gT, traj_full, self.cfg.conditioning, obj_noise)
        return l_h, l_o

    # --- persistence ---

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in self.state_dict().items()}

    def save(self, path, meta: dict | None = None):
        meta = {**(meta or {}), "ablate": list(self.ablate)}
        save_weights(path, self.tensors(), dataclasses.asdict(self.cfg), meta)

    @classmethod
    def load(cls, path) -> "OCTModel":
        tensors, cfg, meta = load_weights(path)
        model = cls(from_dict(ModelConfig, cfg), meta.get("ablate", ()))
        state = model.state_dict()
        if set(state) != set(tensors):
            raise SchemaError(f"{path}: tensor names do not match the model layout")
        for k, v in tensors.items():
            if tuple(state[k].shape) != v.shape:
                raise SchemaError(f"{path}: tensor {k} has shape {v.shape}, expected {tuple(state[k].shape)}")
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in tensors.items()})
        model.eval()
        return model
