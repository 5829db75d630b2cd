"""Training loop: total loss, warmup + cosine schedule, Adam."""
from __future__ import annotations

import copy
import json
import logging
import math
from typing import Callable, Sequence

import numpy as np
import torch

from ..config import ModelConfig, TrainConfig
from ..errors import AllTokensAblated, NonFiniteLoss, SchemaError
from ..model import ALL_CATEGORIES, OCTModel
from ..synthdata import TrainingSample
from ..tokens import collate

log = logging.getLogger(__name__)


def total_loss(l_h, l_o, lam: float):
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return l_h + lam * l_o


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``cfg.lr``, then cosine decay to 0 at ``total_steps``.
    The warmup spans ``warmup_epochs / epochs`` of the run."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = round(total_steps * cfg.warmup_epochs / cfg.epochs)
    if warm and step <= warm:
        return cfg.lr * step / warm
    progress = (step - warm) / max(total_steps - warm, 1)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _index(batch: dict, idx: torch.Tensor) -> dict:
    return {k: v[idx] for k, v in batch.items()}


class NonFiniteLossError(NonFiniteLoss):
    """Carries the last finite model state so callers can keep a checkpoint."""

    def __init__(self, msg: str, last_good: OCTModel):
        super().__init__(msg)
        self.last_good = last_good


def check_dataset(samples: Sequence[TrainingSample], model_cfg: ModelConfig):
    if not samples:
        raise SchemaError("dataset is empty")
    for s in samples:
        if s.F != model_cfg.F:
            raise SchemaError(f"{s.id}: horizon F={s.F} but model expects F={model_cfg.F}")
        if s.features["global"].shape[-1] != model_cfg.d_feat:
            raise SchemaError(f"{s.id}: feature width {s.features['global'].shape[-1]} != d_feat={model_cfg.d_feat}")
        if len(s.gt_contacts) == 0:
            raise SchemaError(f"{s.id}: no ground-truth contact points")


def train(
    dataset: Sequence[TrainingSample],
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    log_path=None,
    model: OCTModel | None = None,
    on_epoch: Callable[[int, OCTModel], None] | None = None,
) -> tuple[OCTModel, list[dict]]:
    """Train with teacher forcing; returns the model (in eval mode) and the
    per-epoch log. Deterministic for a given ``cfg.seed``.

    ``on_epoch(epoch, model)`` runs after every epoch; it must not touch the
    torch global RNG if runs are to stay reproducible.
    """
    cfg.validate()
    if set(cfg.ablate) >= ALL_CATEGORIES:
        raise AllTokensAblated("every token category is ablated")
    check_dataset(dataset, model_cfg)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    if model is None:
        model = OCTModel(model_cfg, cfg.ablate)
    data = collate(dataset, n_contacts=model_cfg.N_contacts)
    n = len(dataset)
    per_epoch = math.ceil(n / cfg.batch)
    total = per_epoch * cfg.epochs
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=cfg.weight_decay)
    latent = model_cfg.latent_dim
    history: list[dict] = []
    fh = open(log_path, "w") if log_path else None
    last_good = copy.deepcopy(model.state_dict())
    step = 0
    try:
        for epoch in range(cfg.epochs):
            model.train()
            perm = torch.randperm(n, generator=gen)
            sums = np.zeros(3)
            for b in range(per_epoch):
                idx = perm[b * cfg.batch : (b + 1) * cfg.batch]
                batch = _index(data, idx)
                B = len(idx)
                hand_noise = torch.randn(B, model_cfg.F, latent, generator=gen)
                obj_noise = torch.randn(B, latent, generator=gen)
                pick = torch.floor(torch.rand(B, generator=gen) * batch["n_contacts"]).long()
                l_h, l_o = model.losses(batch, hand_noise, obj_noise, pick)
                loss = total_loss(l_h, l_o, cfg.lambda_obj)
                if not torch.isfinite(loss):
                    model.load_state_dict(last_good)
                    model.eval()
                    raise NonFiniteLossError(
                        f"non-finite loss at epoch {epoch} step {step} (L_H={l_h.item()}, L_O={l_o.item()})", model
                    )
                step += 1
                lr = lr_at(step, total, cfg)
                for g in opt.param_groups:
                    g["lr"] = lr
                opt.zero_grad()
                loss.backward()
                opt.step()
                sums += [l_h.item() * B, l_o.item() * B, loss.item() * B]
            means = sums / n
            row = {"epoch": epoch, "lr": lr, "L_H": float(means[0]), "L_O": float(means[1]), "total": float(means[2])}
            history.append(row)
            if fh:
                fh.write(json.dumps(row) + "\n")
                fh.flush()
            log.debug("epoch %d %s", epoch, row)
            last_good = copy.deepcopy(model.state_dict())
            if on_epoch is not None:
                on_epoch(epoch, model)
    finally:
        if fh:
            fh.close()
    model.eval()
    return model, history
