"""Stage runners with content-hashed manifests.

Each stage writes into ``<out>/<stage>/`` and finishes with a
``manifest.json`` listing SHA-256 digests of its inputs and outputs, the
configuration digest and the seed.  Nothing time-dependent is recorded, so
re-running a stage with the same configuration reproduces every byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import replace

import numpy as np
import torch

from . import report
from .baseline import baseline_feature_maps
from .cluster import MetricsReport, assign_nearest, evaluate_protocol, kmeans, run_seed, write_runs_csv
from .config import ConfigError, PipelineConfig
from .featmap import FeatureVolume, feature_maps, stack_volume
from .mesh import read_surface, write_surface
from .phantom import PhantomTruth, generate_phantom, render_stack
from .reduce import PcaModel, pca_fit, pca_transform, confound_regress
from .signal import ParameterMaps, derive_maps, fom_color, rotation_angles
from .ssl.encoder import Encoder, EncoderConfig, build_encoder
from .ssl.patches import Normalization, channel_names, modality_channels
from .ssl.sampling import PairSamplerConfig
from .ssl.train import train
from .surface import VertexFeatures, build_vertex_features, graph_smooth, rasterize_unfolded
from .tensorio import read_tensor, write_image_rgb, write_tensor

log = logging.getLogger(__name__)

STAGES = ("phantom", "signal", "train", "featmap", "baseline", "surface", "reduce", "cluster", "table1")
PREREQUISITES = {
    "phantom": (),
    "signal": ("phantom",),
    "train": ("signal",),
    "featmap": ("signal", "train"),
    "baseline": ("signal",),
    "surface": ("phantom", "featmap", "baseline"),
    "reduce": ("surface",),
    "cluster": ("phantom", "reduce"),
    "table1": ("cluster",),
}
PRODUCT = {
    "phantom": "phantom truth",
    "signal": "parameter maps",
    "train": "trained encoders",
    "featmap": "feature volumes",
    "baseline": "baseline features",
    "surface": "vertex features",
    "reduce": "pca scores",
    "cluster": "cluster metrics",
    "table1": "table",
}

MODALITY_LABEL = {"full": "full", "it_only": "I_T", "phir_only": "phi+r"}
MODE_LABEL = {"CL3D": "CL-3D", "CL2D": "CL-2D"}
# (key, input label, channel indices of the baseline volume)
BASELINE_ROWS = (("baseline_fa_it", "FA+mean_I_T", (0, 1)), ("baseline_it", "mean_I_T", (1,)),
                 ("baseline_fa", "FA", (0,)))


class MissingPrerequisite(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workspace:
    """Output tree of one run plus manifest bookkeeping."""

    def __init__(self, root, cfg: PipelineConfig):
        self.root = os.fspath(root)
        self.cfg = cfg

    def dir(self, stage: str) -> str:
        d = os.path.join(self.root, stage)
        os.makedirs(d, exist_ok=True)
        return d

    def path(self, stage: str, name: str) -> str:
        return os.path.join(self.root, stage, name)

    def rel(self, path: str) -> str:
        return os.path.relpath(path, self.root).replace(os.sep, "/")

    def manifest_path(self, stage: str) -> str:
        return self.path(stage, "manifest.json")

    def read_manifest(self, stage: str) -> dict | None:
        try:
            with open(self.manifest_path(stage), encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, ValueError):
            return None

    def require(self, stage: str) -> dict:
        m = self.read_manifest(stage)
        if m is None:
            raise MissingPrerequisite(f"missing prerequisite: {PRODUCT[stage]}")
        for rel, digest in m["outputs"].items():
            p = os.path.join(self.root, rel)
            if not os.path.exists(p):
                raise MissingPrerequisite(f"missing prerequisite: {PRODUCT[stage]} ({rel})")
            if sha256_file(p) != digest:
                raise MissingPrerequisite(f"checksum mismatch: {rel}")
        return m

    def is_current(self, stage: str) -> bool:
        """Manifest present, outputs intact and written under the same configuration."""
        try:
            m = self.require(stage)
        except MissingPrerequisite:
            return False
        return m.get("config_sha256") == self.cfg.digest()

    def write_manifest(self, stage: str, outputs: list[str]) -> dict:
        inputs = {}
        for pre in PREREQUISITES[stage]:
            inputs.update(self.require(pre)["outputs"])
        m = {
            "stage": stage,
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "inputs": dict(sorted(inputs.items())),
            "outputs": {self.rel(p): sha256_file(p) for p in sorted(outputs)},
        }
        with open(self.manifest_path(stage), "w", encoding="utf-8") as fh:
            json.dump(m, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return m


# -- loaders shared by stages -------------------------------------------------

def _maps_from_array(arr) -> ParameterMaps:
    return ParameterMaps(*(np.asarray(a, dtype=np.float64) for a in arr))


def load_truth(ws: Workspace) -> PhantomTruth:
    ws.require("phantom")
    maps = _maps_from_array(read_tensor(ws.path("phantom", "truth_maps.plt")))
    labels = read_tensor(ws.path("phantom", "labels.plt"))
    surfaces = read_surface(ws.path("phantom", "surfaces.plsurf"))
    gain = read_tensor(ws.path("phantom", "section_gain.plt"))
    return PhantomTruth(ws.cfg.phantom_spec(), maps, labels, surfaces, gain)


def load_maps(ws: Workspace) -> ParameterMaps:
    ws.require("signal")
    return _maps_from_array(read_tensor(ws.path("signal", "maps.plt")))


def encoder_keys(cfg: PipelineConfig) -> list[tuple[str, str]]:
    return [(mode, mod) for mode in cfg.sampler.modes for mod in cfg.run.modalities]


def save_encoder(model: Encoder, norm: Normalization, path: str) -> list[str]:
    """Write one f32 tensor per parameter under ``path/`` plus ``path/manifest.txt``.

    The manifest lists the encoder configuration, the transmittance
    normalization and every parameter as ``param.<name>=<file>:<shape>``.
    """
    os.makedirs(path, exist_ok=True)
    outs = []
    lines = [f"encoder.{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}"
             for k, v in model.cfg.to_dict().items()]
    lines += [f"norm.it_min={norm.it_min!r}", f"norm.it_max={norm.it_max!r}"]
    for name, v in model.state_dict().items():
        fname = f"{name}.plt"
        write_tensor(v.detach().numpy().astype(np.float32), os.path.join(path, fname))
        outs.append(os.path.join(path, fname))
        lines.append(f"param.{name}={fname}:{','.join(map(str, v.shape))}")
    man = os.path.join(path, "manifest.txt")
    with open(man, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return outs + [man]


def load_encoder(path: str) -> tuple[Encoder, Normalization]:
    meta = {}
    with open(os.path.join(path, "manifest.txt"), encoding="ascii") as fh:
        for line in fh:
            k, v = line.rstrip("\n").split("=", 1)
            meta[k] = v
    kw = {}
    for f in EncoderConfig.__dataclass_fields__.values():
        raw = meta[f"encoder.{f.name}"]
        if f.name == "stage_channels":
            kw[f.name] = tuple(int(x) for x in raw.split(",") if x)
        elif f.name == "activation":
            kw[f.name] = raw
        else:
            kw[f.name] = int(raw)
    model = build_encoder(EncoderConfig(**kw))
    state = model.state_dict()
    listed = {k[len("param."):]: v for k, v in meta.items() if k.startswith("param.")}
    if set(listed) != set(state):
        raise ValueError(f"checkpoint {path} parameters do not match the encoder")
    for name, ref in state.items():
        fname, shape = listed[name].split(":")
        arr = read_tensor(os.path.join(path, fname))
        if tuple(arr.shape) != tuple(ref.shape) or shape != ",".join(map(str, ref.shape)):
            raise ValueError(f"checkpoint {path}: {name} has shape {arr.shape}, expected {tuple(ref.shape)}")
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, Normalization(float(meta["norm.it_min"]), float(meta["norm.it_max"]))


def method_rows(cfg: PipelineConfig) -> list[tuple[str, str, str]]:
    """(key, method label, input label) in reporting order."""
    rows = [(f"{mode}_{mod}", MODE_LABEL[mode], MODALITY_LABEL[mod]) for mode, mod in encoder_keys(cfg)]
    rows += [(key, "baseline", lab) for key, lab, _ in BASELINE_ROWS]
    return rows


# -- stages ---------------------------------------------------------------------

def stage_phantom(ws: Workspace) -> dict:
    d = ws.dir("phantom")
    truth = generate_phantom(ws.cfg.phantom_spec())
    outs = [os.path.join(d, n) for n in ("truth_maps.plt", "labels.plt", "surfaces.plsurf", "section_gain.plt",
                                         "fom_mid.ppm", "phantom.png")]
    write_tensor(truth.maps.to_array(np.float64), outs[0])
    write_tensor(truth.labels, outs[1])
    write_surface(truth.surfaces, outs[2])
    write_tensor(np.asarray(truth.section_gain, dtype=np.float64), outs[3])
    mid = truth.maps.shape[0] // 2
    m = truth.maps.section(mid)
    write_image_rgb(fom_color(m.direction, m.inclination), outs[4])
    report.phantom_figure(truth, mid, outs[5])
    return ws.write_manifest("phantom", outs)


def stage_signal(ws: Workspace) -> dict:
    truth = load_truth(ws)
    d = ws.dir("signal")
    sc = ws.cfg.signal
    angles = rotation_angles(sc.n_angles)
    secs = [derive_maps(render_stack(truth, y, sc.n_angles, sc.noise_sd), sc.model, angles)
            for y in range(truth.maps.shape[0])]
    maps = ParameterMaps(*(np.stack([getattr(s, c) for s in secs]) for c in ParameterMaps.CHANNELS))
    outs = [os.path.join(d, n) for n in ("maps.plt", "fom_mid.ppm", "signal.png")]
    write_tensor(maps.to_array(np.float32), outs[0])
    mid = len(secs) // 2
    write_image_rgb(fom_color(secs[mid].direction, secs[mid].inclination), outs[1])
    report.maps_figure(secs[mid], truth.maps.section(mid), outs[2])
    return ws.write_manifest("signal", outs)


def stage_train(ws: Workspace) -> dict:
    maps = load_maps(ws)
    d = ws.dir("train")
    cfg = ws.cfg
    spec = cfg.phantom
    outs, histories = [], {}
    for mode, mod in encoder_keys(cfg):
        sampler = PairSamplerConfig(mode=mode, radius_um=cfg.sampler.radius_um, pixel_um=spec.pixel_um,
                                    section_um=spec.section_um)
        enc = replace(cfg.encoder, in_channels=len(channel_names(mod)))
        res = train(maps, mod, cfg.train_config(), sampler, enc, cfg.augment)
        key = f"{mode}_{mod}"
        outs += save_encoder(res.model, res.normalization, os.path.join(d, f"encoder_{key}"))
        logp = os.path.join(d, f"log_{key}.csv")
        with open(logp, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "train_loss", "val_loss"])
            for step, tl, vl in res.history:
                w.writerow([step, "" if np.isnan(tl) else f"{tl:.8f}", "" if np.isnan(vl) else f"{vl:.8f}"])
        outs.append(logp)
        histories[key] = res.history
    fig = os.path.join(d, "training_curves.png")
    report.training_curves(histories, fig)
    outs.append(fig)
    return ws.write_manifest("train", outs)


def stage_featmap(ws: Workspace) -> dict:
    maps = load_maps(ws)
    ws.require("train")
    d = ws.dir("featmap")
    cfg = ws.cfg
    outs = []
    for mode, mod in encoder_keys(cfg):
        key = f"{mode}_{mod}"
        model, norm = load_encoder(ws.path("train", f"encoder_{key}"))
        ch = modality_channels(maps, mod, norm)
        P = model.cfg.patch_px
        grids = [feature_maps(model, ch[y], P, cfg.featmap.overlap) for y in range(ch.shape[0])]
        stride = int(round(P * (1 - cfg.featmap.overlap)))
        vol = stack_volume(grids, P, stride, cfg.phantom.pixel_um, cfg.phantom.section_um)
        p = os.path.join(d, f"volume_{key}.plt")
        vol.save(p)
        outs += [p, p + ".meta"]
    return ws.write_manifest("featmap", outs)


def stage_baseline(ws: Workspace) -> dict:
    maps = load_maps(ws)
    d = ws.dir("baseline")
    b = ws.cfg.baseline
    stride = b.stride_px or b.patch_px
    per = [baseline_feature_maps(maps.section(y), b.patch_px, stride) for y in range(maps.shape[0])]
    vol = stack_volume([np.moveaxis(s, 0, -1) for s in per], b.patch_px, stride,
                       ws.cfg.phantom.pixel_um, ws.cfg.phantom.section_um)
    p = os.path.join(d, "volume_baseline.plt")
    vol.save(p)
    return ws.write_manifest("baseline", [p, p + ".meta"])


def _volumes(ws: Workspace):
    for mode, mod in encoder_keys(ws.cfg):
        key = f"{mode}_{mod}"
        yield key, FeatureVolume.load(ws.path("featmap", f"volume_{key}.plt"))
    base = FeatureVolume.load(ws.path("baseline", "volume_baseline.plt"))
    for key, _, ch in BASELINE_ROWS:
        yield key, replace(base, values=np.ascontiguousarray(base.values[..., list(ch)]))


def stage_surface(ws: Workspace) -> dict:
    ws.require("featmap")
    ws.require("baseline")
    truth = load_truth(ws)
    d = ws.dir("surface")
    sc = ws.cfg.surface
    edges = truth.surfaces.edges()
    outs = []
    for key, vol in _volumes(ws):
        vf = build_vertex_features(vol, truth.surfaces, sc.depths)
        vf.values = graph_smooth(vf.values, edges, sc.smooth_iters, vf.missing, sc.include_self)
        p = os.path.join(d, f"vertices_{key}.plt")
        vf.save(p)
        outs += [p, p + ".csv"]
    return ws.write_manifest("surface", outs)


def stage_reduce(ws: Workspace) -> dict:
    ws.require("surface")
    d = ws.dir("reduce")
    outs, spectra = [], {}
    for key, _, _ in method_rows(ws.cfg):
        vf = VertexFeatures.load(ws.path("surface", f"vertices_{key}.plt"))
        keep = ~vf.missing
        resid = confound_regress(vf.values[keep], vf.confound[keep])
        model = pca_fit(resid, threshold=ws.cfg.reduce.pca_threshold)
        scores = np.zeros((len(vf.values), model.k))
        scores[keep] = pca_transform(model, resid)
        p = os.path.join(d, f"scores_{key}.plt")
        write_tensor(scores, p)
        outs.append(p)
        outs += model.save(os.path.join(d, f"pca_{key}"))
        spectra[key] = model.eigenvalues / max(model.eigenvalues.sum(), 1e-300)
    fig = os.path.join(d, "scree.png")
    report.scree(spectra, ws.cfg.reduce.pca_threshold, fig)
    outs.append(fig)
    return ws.write_manifest("reduce", outs)


def cluster_method(ws: Workspace, key: str) -> tuple[MetricsReport, np.ndarray, VertexFeatures]:
    scores = read_tensor(ws.path("reduce", f"scores_{key}.plt"))
    vf = VertexFeatures.load(ws.path("surface", f"vertices_{key}.plt"))
    keep = ~vf.missing
    c = ws.cfg.cluster
    rep = evaluate_protocol(scores[keep], vf.labels[keep], c.runs, c.fraction, c.k, ws.cfg.seed)
    # map of a full-data clustering for display
    fit = kmeans(scores[keep], c.k, seed=run_seed(ws.cfg.seed, c.runs))
    assign = np.full(len(scores), -1)
    assign[keep], _ = assign_nearest(scores[keep], fit.centroids)
    return rep, assign, vf


def stage_cluster(ws: Workspace) -> dict:
    ws.require("reduce")
    d = ws.dir("cluster")
    sc = ws.cfg.surface
    outs, rows, rasters = [], [], {}
    truth_raster = None
    for key, method, inp in method_rows(ws.cfg):
        rep, assign, vf = cluster_method(ws, key)
        rows.append((method, inp, rep))
        raster = rasterize_unfolded(np.maximum(assign, 0), vf.uv, sc.raster_width, sc.raster_height, vf.missing)
        p = os.path.join(d, f"clusters_{key}.ppm")
        write_image_rgb(raster, p)
        outs.append(p)
        rasters[f"{method} {inp}"] = raster
        if truth_raster is None:
            truth_raster = rasterize_unfolded(vf.labels, vf.uv, sc.raster_width, sc.raster_height)
    p = os.path.join(d, "labels.ppm")
    write_image_rgb(truth_raster, p)
    outs.append(p)
    runs = os.path.join(d, "metrics_runs.csv")
    write_runs_csv(rows, runs)
    summary = os.path.join(d, "metrics.csv")
    write_summary_csv(rows, summary)
    fig = os.path.join(d, "cluster_maps.png")
    report.cluster_maps(truth_raster, rasters, fig)
    outs += [runs, summary, fig]
    return ws.write_manifest("cluster", outs)


def write_summary_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "input", "purity", "ari", "mi"])
        for method, inp, rep in rows:
            m = rep.mean
            w.writerow([method, inp, f"{m['purity']:.6f}", f"{m['ari']:.6f}", f"{m['mi']:.6f}"])


def read_summary_csv(path) -> list[dict]:
    with open(path, encoding="ascii") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("purity", "ari", "mi"):
            r[k] = float(r[k])
    return rows


def stage_table1(ws: Workspace) -> dict:
    cfg = ws.cfg
    if set(cfg.sampler.modes) != {"CL3D", "CL2D"} or set(cfg.run.modalities) != set(MODALITY_LABEL):
        raise ConfigError("table1 needs both sampling modes and all three modalities")
    for stage in STAGES[:-1]:
        if not ws.is_current(stage):
            log.info("running stage %s", stage)
            RUNNERS[stage](ws)
    d = ws.dir("table1")
    rows = read_summary_csv(ws.path("cluster", "metrics.csv"))
    order = {(MODE_LABEL[m], MODALITY_LABEL[x]): i for i, (m, x) in enumerate(
        [(m, x) for m in ("CL3D", "CL2D") for x in ("full", "it_only", "phir_only")])}
    order.update({("baseline", lab): 6 + i for i, (_, lab, _) in enumerate(BASELINE_ROWS)})
    rows.sort(key=lambda r: order[(r["method"], r["input"])])
    table = os.path.join(d, "table1.csv")
    with open(table, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "input", "purity", "ari", "mi"])
        for r in rows:
            w.writerow([r["method"], r["input"], f"{r['purity']:.6f}", f"{r['ari']:.6f}", f"{r['mi']:.6f}"])
    fig = os.path.join(d, "table1.png")
    report.table1_bars(rows, fig)
    return ws.write_manifest("table1", [table, fig])


RUNNERS = {
    "phantom": stage_phantom,
    "signal": stage_signal,
    "train": stage_train,
    "featmap": stage_featmap,
    "baseline": stage_baseline,
    "surface": stage_surface,
    "reduce": stage_reduce,
    "cluster": stage_cluster,
    "table1": stage_table1,
}


def run_stage(stage: str, cfg: PipelineConfig, out, threads: int | None = None) -> dict:
    if stage not in RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    if threads:
        torch.set_num_threads(int(threads))
    ws = Workspace(out, cfg)
    for pre in PREREQUISITES[stage]:
        if stage != "table1":
            ws.require(pre)
    return RUNNERS[stage](ws)
