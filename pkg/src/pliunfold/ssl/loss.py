"""InfoNCE over a batch of positive pairs with in-batch negatives."""
from __future__ import annotations

import torch
import torch.nn.functional as F

NORM_TOL = 1e-4


def info_nce(z: torch.Tensor, tau: float = 0.5) -> torch.Tensor:
    """Mean InfoNCE loss of ``2N`` L2-normalized vectors.

    Pairs are consecutive rows, ``(z[0], z[1]), (z[2], z[3]), ...``.  Each
    row is an anchor whose positive is its partner; the other ``2N - 2``
    rows are negatives.  All-zero rows (an encoder with no bias fed an
    all-zero patch) are accepted and have zero similarity to every row.
    """
    if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] < 4:
        raise ValueError("need 2N vectors with N >= 2")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    norms = z.detach().norm(dim=1)
    if torch.any(((norms - 1).abs() > NORM_TOL) & (norms != 0)):
        raise ValueError("inputs must be L2-normalized")
    n2 = z.shape[0]
    logits = (z @ z.T) / tau
    self_mask = torch.eye(n2, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(self_mask, float("-inf"))
    partner = torch.arange(n2, device=z.device) ^ 1
    return F.cross_entropy(logits, partner)


def projected_loss(model, batch: torch.Tensor, tau: float = 0.5) -> torch.Tensor:
    """``info_nce(normalize(project(encode(batch))))``."""
    z = F.normalize(model(batch), dim=1)
    return info_nce(z, tau)
