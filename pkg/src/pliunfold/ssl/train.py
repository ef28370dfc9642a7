"""Contrastive training loop (Adam on InfoNCE with early stopping)."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from ..signal import ParameterMaps
from .encoder import Encoder, EncoderConfig, build_encoder, parameter_checksum
from .loss import projected_loss
from .patches import (
    AugmentConfig,
    Normalization,
    augment_batch,
    channel_names,
    extended_size,
    extract_windows,
    fit_normalization,
    modality_channels,
)
from .sampling import PairSamplerConfig, sample_pairs

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_pairs: int = 128
    lr: float = 1e-3
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tau: float = 0.5
    val_sections: int = 4  # most anterior sections held out
    max_steps: int = 400
    eval_every: int = 20
    patience: int = 5  # evaluations without validation improvement
    val_batches: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.batch_pairs < 2:
            raise ValueError("need at least 2 pairs per batch")
        if self.tau <= 0 or self.lr < 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("tau, eps must be positive; lr, weight decay non-negative")
        if self.eval_every < 1 or self.patience < 1 or self.val_batches < 1:
            raise ValueError("eval_every, patience and val_batches must be >= 1")


@dataclass
class TrainResult:
    model: Encoder
    normalization: Normalization
    modality: str
    history: list = field(default_factory=list)  # (step, train_loss, val_loss)
    best_step: int = 0
    best_val: float = math.inf

    @property
    def checksum(self) -> str:
        return parameter_checksum(self.model)


def split_sections(n_sections: int, val_sections: int) -> tuple[np.ndarray, np.ndarray]:
    """(train, validation) section indices; validation is the first ``val_sections``."""
    if not 0 <= val_sections < n_sections:
        raise ValueError("validation split must leave training sections")
    idx = np.arange(n_sections)
    return idx[val_sections:], idx[:val_sections]


class PairBatcher:
    """Samples location pairs, cuts windows and augments both views independently."""

    def __init__(self, channels: np.ndarray, names: tuple, sampler: PairSamplerConfig,
                 patch_px: int, augment_cfg: AugmentConfig = AugmentConfig()):
        self.channels = channels
        self.names = names
        self.patch_px = patch_px
        self.window = extended_size(patch_px)
        self.sampler = replace(sampler, window_px=self.window,
                               volume_shape=(channels.shape[2], channels.shape[0], channels.shape[3]))
        self.augment_cfg = augment_cfg

    def batch(self, n_pairs: int, rng: np.random.Generator, sections) -> np.ndarray:
        anchors, positives = sample_pairs(self.sampler, n_pairs, rng, sections)
        locs = np.empty((2 * n_pairs, 3))
        locs[0::2], locs[1::2] = anchors, positives
        windows = extract_windows(self.channels, locs, self.window)
        a = self.augment_cfg
        thetas = rng.uniform(0.0, 360.0, size=len(locs))
        sigmas = rng.uniform(0.0, a.max_blur_sigma, size=len(locs))
        contrasts = rng.uniform(*a.contrast_range, size=len(locs))
        return augment_batch(windows, self.names, self.patch_px, thetas, sigmas, contrasts)


def _mean_loss(model, batches, tau) -> float:
    with torch.no_grad():
        return float(np.mean([projected_loss(model, b, tau).item() for b in batches]))


def train(maps: ParameterMaps, modality: str, cfg: TrainConfig = TrainConfig(),
          sampler: PairSamplerConfig = PairSamplerConfig(), encoder_cfg: EncoderConfig | None = None,
          augment_cfg: AugmentConfig = AugmentConfig()) -> TrainResult:
    """Train an encoder on a ``(Y, X, Z)`` map volume.

    Parameters at the best validation loss are returned; training stops
    after ``cfg.patience`` evaluations without improvement or at
    ``cfg.max_steps``.
    """
    names = channel_names(modality)
    encoder_cfg = encoder_cfg or EncoderConfig(in_channels=len(names))
    if encoder_cfg.in_channels != len(names):
        raise ValueError(f"encoder expects {encoder_cfg.in_channels} channels, modality {modality!r} has {len(names)}")
    Y = maps.shape[0]
    train_idx, val_idx = split_sections(Y, cfg.val_sections)
    norm = fit_normalization(maps, train_idx)
    channels = modality_channels(maps, modality, norm)
    batcher = PairBatcher(channels, names, sampler, encoder_cfg.patch_px, augment_cfg)

    ss = np.random.SeedSequence(cfg.seed)
    train_rng, val_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    val_sets = val_idx if len(val_idx) else train_idx
    val = [torch.from_numpy(batcher.batch(cfg.batch_pairs, val_rng, val_sets)) for _ in range(cfg.val_batches)]

    model = build_encoder(encoder_cfg, seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                           weight_decay=cfg.weight_decay)
    result = TrainResult(model, norm, modality)
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    for step in range(cfg.max_steps + 1):
        val_loss = math.nan
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            model.eval()
            val_loss = _mean_loss(model, val, cfg.tau)
            if val_loss < result.best_val:
                result.best_val, result.best_step = val_loss, step
                best_state = copy.deepcopy(model.state_dict())
                stale = 0
            else:
                stale += 1
        if step == cfg.max_steps or stale >= cfg.patience:
            result.history.append((step, math.nan, val_loss))
            break
        model.train()
        x = torch.from_numpy(batcher.batch(cfg.batch_pairs, train_rng, train_idx))
        loss = projected_loss(model, x, cfg.tau)
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"loss is {loss.item()} at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.history.append((step, loss.item(), val_loss))
    model.load_state_dict(best_state)
    model.eval()
    log.info("trained %s encoder: best val %.4f at step %d", modality, result.best_val, result.best_step)
    return result
