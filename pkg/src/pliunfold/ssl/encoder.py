"""Small residual CNN encoder with a two-layer MLP projection head."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

ACTIVATIONS = {"gelu": nn.GELU, "relu": nn.ReLU, "identity": nn.Identity}


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 4
    patch_px: int = 16
    stem_channels: int = 16
    stage_channels: tuple = (16, 24, 32, 48)  # one stride-2 stage each
    blocks_per_stage: int = 1
    feature_dim: int = 64
    projection_dim: int = 32
    activation: str = "gelu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {tuple(ACTIVATIONS)}")
        if min(self.stage_channels, default=1) < 1 or self.feature_dim < 1 or self.projection_dim < 1:
            raise ValueError("channel and feature sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int, act: type):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)
        self.act = act()

    def forward(self, x):
        return self.act(x + self.conv2(self.act(self.conv1(x))))


class Encoder(nn.Module):
    """``encode`` maps a ``[B, C, S, S]`` batch to ``h``; ``project`` maps ``h`` to ``z``."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        act = ACTIVATIONS[cfg.activation]
        layers: list[nn.Module] = [nn.Conv2d(cfg.in_channels, cfg.stem_channels, 3, padding=1), act()]
        ch = cfg.stem_channels
        for out_ch in cfg.stage_channels:
            layers += [nn.Conv2d(ch, out_ch, 3, stride=2, padding=1), act()]
            layers += [ResidualBlock(out_ch, act) for _ in range(cfg.blocks_per_stage)]
            ch = out_ch
        self.body = nn.Sequential(*layers)
        self.fc = nn.Linear(ch, cfg.feature_dim)
        self.head = nn.Sequential(
            nn.Linear(cfg.feature_dim, cfg.feature_dim), act(), nn.Linear(cfg.feature_dim, cfg.projection_dim)
        )
        self._init_weights()

    def _init_weights(self):
        # He init keeps activations from shrinking through the stack; residual
        # branches start at zero so each block begins as the identity.
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
                nn.init.zeros_(m.bias)
        for m in self.modules():
            if isinstance(m, ResidualBlock):
                nn.init.zeros_(m.conv2.weight)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        expected = (self.cfg.in_channels, self.cfg.patch_px, self.cfg.patch_px)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"patch shape {tuple(x.shape[1:])} does not match encoder input {expected}")
        return self.fc(self.body(x).mean(dim=(2, 3)))

    def project(self, h: torch.Tensor) -> torch.Tensor:
        return self.head(h)

    def forward(self, x):
        return self.project(self.encode(x))


def build_encoder(cfg: EncoderConfig, seed: int = 0, dtype=torch.float32) -> Encoder:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    model = Encoder(cfg).to(dtype)
    torch.random.set_rng_state(gen_state)
    return model


def n_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def parameter_checksum(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, arr in parameter_arrays(model).items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@torch.no_grad()
def encode_numpy(model: Encoder, patches: np.ndarray, batch: int = 2048) -> np.ndarray:
    """Features ``h`` for a ``[B, C, S, S]`` array, processed in fixed-size chunks."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(patches), batch):
        x = torch.from_numpy(np.ascontiguousarray(patches[i : i + batch])).to(dtype)
        out.append(model.encode(x).numpy())
    if not out:
        return np.zeros((0, model.cfg.feature_dim), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)
