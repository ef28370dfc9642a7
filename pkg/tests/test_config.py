import pytest

from pliunfold.config import DESK_PHANTOM, ConfigError, PipelineConfig, load, parse, serialize
from pliunfold.phantom import BandAppearance


def test_defaults():
    cfg = parse("")
    assert cfg == PipelineConfig()
    assert cfg.phantom == DESK_PHANTOM
    assert cfg.encoder.patch_px == 16 and cfg.featmap.overlap == 0.5
    assert cfg.cluster.k == 6 and cfg.reduce.pca_threshold == 0.8
    assert cfg.surface.depths == 17 and cfg.surface.smooth_iters == 3


def test_roundtrip():
    cfg = parse("run.seed=42\nphantom.bands=0,20,10,50,2; 30,40,5,60,4.5\ntrain.lr=0.0005\n"
                "sampler.modes=CL3D\nsurface.include_self=false\n")
    assert cfg.seed == 42 and cfg.phantom_spec().seed == 42 and cfg.train_config().seed == 42
    assert cfg.phantom.bands[1] == BandAppearance(30.0, 40.0, 5.0, 60.0, 4.5)
    assert cfg.sampler.modes == ("CL3D",) and cfg.surface.include_self is False
    assert parse(serialize(cfg)) == cfg
    assert cfg.digest() == parse(serialize(cfg)).digest() != PipelineConfig().digest()


def test_comments_and_blank_lines():
    assert parse("# comment\n\n  cluster.runs = 7  \n").cluster.runs == 7


@pytest.mark.parametrize("text, msg", [
    ("cluster.colour=3", "unknown key"),
    ("nosuch.key=1", "unknown section"),
    ("phantom.seed=3", "unknown key"),  # derived from run.seed
    ("seed=3", "section prefix"),
    ("cluster.runs", "key=value"),
    ("cluster.runs=many", "cluster.runs"),
    ("cluster.k=0", "cluster"),
    ("reduce.pca_threshold=1.5", "pca_threshold"),
    ("featmap.overlap=0.3", "integral stride"),
    ("sampler.modes=CL4D", "sampler.modes"),
    ("run.modalities=rgb", "run.modalities"),
    ("surface.include_self=maybe", "boolean"),
    ("phantom.bands=1,2,3", "5 numbers"),
    ("train.val_sections=64", "val_sections"),
    ("signal.noise_sd=-1", "noise_sd"),
])
def test_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse(text)


def test_load(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("cluster.runs=5\n")
    assert load(p).cluster.runs == 5
    with pytest.raises(ConfigError, match="cannot read"):
        load(tmp_path / "missing.cfg")
