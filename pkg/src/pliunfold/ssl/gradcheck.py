"""Finite-difference check of backpropagated InfoNCE gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .encoder import Encoder, EncoderConfig, build_encoder, n_parameters
from .loss import projected_loss

TINY_CONFIG = EncoderConfig(
    in_channels=2, patch_px=6, stem_channels=2, stage_channels=(3, 3), blocks_per_stage=1,
    feature_dim=5, projection_dim=4,
)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_parameters: int
    analytic: np.ndarray
    numeric: np.ndarray


def check_gradients(cfg: EncoderConfig = TINY_CONFIG, batch: np.ndarray | None = None, *,
                    model: Encoder | None = None, tau: float = 0.5, step: float = 1e-4,
                    seed: int = 0, n_pairs: int = 3, floor: float = 1e-7,
                    extrapolate: bool = False) -> GradCheckResult:
    """Compare autograd and central-difference gradients of the full loss in float64.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, floor)``.
    With ``extrapolate`` the differences at ``step`` and ``step / 2`` are
    Richardson-combined, cancelling the second-order truncation term.
    """
    if model is None:
        model = randomize_parameters(build_encoder(cfg, seed=seed, dtype=torch.float64), seed)
    else:
        model = model.to(torch.float64)
    n = n_parameters(model)
    if n > 1000:
        raise ValueError(f"gradient check is meant for tiny nets (<= 1000 parameters, got {n})")
    if batch is None:
        rng = np.random.default_rng(seed)
        batch = rng.normal(size=(2 * n_pairs, cfg.in_channels, cfg.patch_px, cfg.patch_px))
    x = torch.as_tensor(np.asarray(batch), dtype=torch.float64)

    model.zero_grad()
    projected_loss(model, x, tau).backward()
    analytic = np.concatenate([p.grad.detach().numpy().ravel() for p in model.parameters()])

    numeric = _central_differences(model, x, tau, step)
    if extrapolate:
        numeric = (4.0 * _central_differences(model, x, tau, 0.5 * step) - numeric) / 3.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    return GradCheckResult(float(rel.max()), n, analytic, numeric)


def _central_differences(model, x, tau, step) -> np.ndarray:
    out = []
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                fp = projected_loss(model, x, tau).item()
                flat[i] = orig - step
                fm = projected_loss(model, x, tau).item()
                flat[i] = orig
                out.append((fp - fm) / (2 * step))
    return np.array(out)


def randomize_parameters(model: Encoder, seed: int = 0) -> Encoder:
    """LeCun-normal weights and N(0, 0.1^2) biases, so every layer carries signal."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("weight"):
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) / np.sqrt(fan_in))
            else:
                p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model


def zero_weight_encoder(cfg: EncoderConfig = TINY_CONFIG, seed: int = 0) -> Encoder:
    """Encoder with all weight tensors zeroed and random biases."""
    model = build_encoder(cfg, seed=seed, dtype=torch.float64)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("weight"):
                p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model
