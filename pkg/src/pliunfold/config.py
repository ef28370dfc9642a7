"""Pipeline configuration as plain ``section.key=value`` text.

Every key has a default, so an empty file is a valid configuration.  Lines
starting with ``#`` are comments.  Band appearances are written as
``phantom.bands=off,incl,kappa,it,it_sd; ...``.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields, replace

from .phantom import BandAppearance, PhantomSpec
from .signal import InclinationModel
from .ssl.encoder import EncoderConfig
from .ssl.patches import MODALITY_CHANNELS, AugmentConfig
from .ssl.sampling import MODES
from .ssl.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SignalConfig:
    delta0: float = InclinationModel.delta0
    i_ref: float = InclinationModel.i_ref
    i_min: float = InclinationModel.i_min
    n_angles: int = 18
    noise_sd: float = 2.0

    @property
    def model(self) -> InclinationModel:
        return InclinationModel(self.delta0, self.i_ref, self.i_min)


@dataclass(frozen=True)
class SamplerSection:
    radius_um: float = 118.0
    modes: tuple = MODES[::-1]  # CL3D first, as reported


@dataclass(frozen=True)
class FeatmapConfig:
    overlap: float = 0.5


@dataclass(frozen=True)
class BaselineConfig:
    patch_px: int = 8
    stride_px: int = 0  # 0: non-overlapping tiles


@dataclass(frozen=True)
class SurfaceConfig:
    depths: int = 17
    smooth_iters: int = 3
    include_self: bool = True
    raster_width: int = 64
    raster_height: int = 128


@dataclass(frozen=True)
class ReduceConfig:
    pca_threshold: float = 0.8


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 6
    runs: int = 100
    fraction: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    modalities: tuple = tuple(MODALITY_CHANNELS)


DESK_PHANTOM = PhantomSpec()


@dataclass(frozen=True)
class PipelineConfig:
    phantom: PhantomSpec = DESK_PHANTOM
    signal: SignalConfig = SignalConfig()
    sampler: SamplerSection = SamplerSection()
    encoder: EncoderConfig = EncoderConfig()
    augment: AugmentConfig = AugmentConfig()
    train: TrainConfig = TrainConfig()
    featmap: FeatmapConfig = FeatmapConfig()
    baseline: BaselineConfig = BaselineConfig()
    surface: SurfaceConfig = SurfaceConfig()
    reduce: ReduceConfig = ReduceConfig()
    cluster: ClusterConfig = ClusterConfig()
    run: RunConfig = RunConfig()

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))

    @property
    def seed(self) -> int:
        return self.run.seed

    def phantom_spec(self) -> PhantomSpec:
        return replace(self.phantom, seed=self.seed, signal_model=self.signal.model)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()


# keys filled in from elsewhere and therefore not settable
_DERIVED = {
    "phantom": {"signal_model", "seed"},
    "encoder": {"in_channels"},
    "train": {"seed"},
}


def _settable(section_obj, section: str):
    return [f for f in fields(section_obj) if f.name not in _DERIVED.get(section, set())]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], BandAppearance):
            return "; ".join(",".join(_format(float(x)) for x in dataclasses.astuple(b)) for b in value)
        return ",".join(_format(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _parse_scalar(text: str, like):
    t = text.strip()
    if isinstance(like, bool):
        if t.lower() in ("true", "1", "yes"):
            return True
        if t.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {t!r}")
    if isinstance(like, int):
        return int(t)
    if isinstance(like, float):
        return float(t)
    return t


def _parse_value(text: str, default, key: str):
    t = text.strip()
    if key == "phantom.bands":
        bands = []
        for chunk in t.split(";"):
            parts = [float(p) for p in chunk.split(",")]
            if len(parts) != 5:
                raise ValueError("each band needs 5 numbers: offset, inclination, kappa, it, it_sd")
            bands.append(BandAppearance(*parts))
        return tuple(bands)
    if key == "phantom.band_edges":
        return None if t.lower() == "none" else tuple(float(p) for p in t.split(","))
    if isinstance(default, tuple):
        like = default[0] if default else ""
        return tuple(_parse_scalar(p, like) for p in t.split(",") if p.strip())
    return _parse_scalar(t, default)


def serialize(cfg: PipelineConfig) -> str:
    lines = []
    for sec in fields(cfg):
        obj = getattr(cfg, sec.name)
        for f in _settable(obj, sec.name):
            lines.append(f"{sec.name}.{f.name}={_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def parse(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse and validate; unknown keys and bad values raise ``ConfigError``."""
    cfg = base or PipelineConfig()
    updates: dict[str, dict] = {}
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {n}: key {key!r} lacks a section prefix")
        sec, name = key.split(".", 1)
        if sec not in sections:
            raise ConfigError(f"line {n}: unknown section {sec!r}")
        allowed = {f.name: f for f in _settable(sections[sec], sec)}
        if name not in allowed:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        try:
            updates.setdefault(sec, {})[name] = _parse_value(value, getattr(sections[sec], name), key)
        except ValueError as e:
            raise ConfigError(f"line {n}: {key}: {e}") from None
    try:
        new = {sec: replace(sections[sec], **kv) for sec, kv in updates.items()}
        cfg = replace(cfg, **new)
        validate(cfg)
    except (ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None
    return cfg


def validate(cfg: PipelineConfig) -> None:
    cfg.phantom_spec().validate()
    cfg.signal.model
    if cfg.signal.n_angles < 3:
        raise ConfigError("signal.n_angles must be >= 3")
    if cfg.signal.noise_sd < 0:
        raise ConfigError("signal.noise_sd must be >= 0")
    if not cfg.sampler.modes or any(m not in MODES for m in cfg.sampler.modes):
        raise ConfigError(f"sampler.modes must be drawn from {MODES}")
    if cfg.sampler.radius_um <= 0:
        raise ConfigError("sampler.radius_um must be positive")
    if not cfg.run.modalities or any(m not in MODALITY_CHANNELS for m in cfg.run.modalities):
        raise ConfigError(f"run.modalities must be drawn from {tuple(MODALITY_CHANNELS)}")
    if cfg.run.seed < 0 or cfg.run.seed >= 2**64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")
    stride = cfg.encoder.patch_px * (1 - cfg.featmap.overlap)
    if not 0 <= cfg.featmap.overlap < 1 or abs(stride - round(stride)) > 1e-9:
        raise ConfigError("featmap.overlap must give an integral stride")
    if cfg.baseline.patch_px < 1 or cfg.baseline.stride_px < 0:
        raise ConfigError("baseline.patch_px must be >= 1 and stride_px >= 0")
    s = cfg.surface
    if s.depths < 2 or s.smooth_iters < 0 or s.raster_width < 1 or s.raster_height < 1:
        raise ConfigError("surface: depths >= 2, smooth_iters >= 0, raster size >= 1")
    if not 0 < cfg.reduce.pca_threshold <= 1:
        raise ConfigError("reduce.pca_threshold must be in (0, 1]")
    c = cfg.cluster
    if c.k < 1 or c.runs < 1 or not 0 < c.fraction <= 1:
        raise ConfigError("cluster: k >= 1, runs >= 1, fraction in (0, 1]")
    if cfg.train.val_sections >= cfg.phantom.shape[1]:
        raise ConfigError("train.val_sections must leave training sections")


def load(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse(text)
