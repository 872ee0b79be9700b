"""End-to-end experiment runner.

For every image in a dataset directory, every degradation setting and every
mode, the runner degrades the image, asks the backend for a prediction,
scores it and writes the artifacts:

* ``everything``: unprompted candidates, best one picked against the gt;
* ``box``: one prediction from the exact gt bounding box;
* ``multibox``: M jittered boxes, mean-fused, plus the three uncertainty maps.

Reports go to ``out_dir``: ``runs.csv`` (one row per image x cell),
``failed.csv``, ``aggregate.csv`` / ``aggregate.json`` (means per cell plus
difference rows against the weakest mode present) and ``aggregate.png``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .degradation import (
    STANDARD_CODES,
    STANDARD_SIGMAS,
    DegradationCode,
    DegradationParams,
    add_gaussian_noise,
    degrade,
)
from .errors import DimensionMismatch, EmptyDataset, IoFailure, MultiboxError
from .fusion import PredictionSet, fuse_mean
from .imaging import Image, load_image, load_mask, save_raster_f32
from .metrics import MetricReport, evaluate
from .prompts import PromptConfig, gt_bounding_box, jitter_boxes, write_boxes_csv
from .segmenter import OracleConfig, SyntheticOracle, select_best_mask
from .uncertainty import all_maps

log = logging.getLogger(__name__)

MODES = ("everything", "box", "multibox")
RUNS_HEADER = ("image_id", "mode", "degradation", "dice", "ece", "sm", "wfm", "m_used", "wall_time_s")
METRICS = ("dice", "ece", "sm", "wfm")
MASK_SUFFIX = "_mask.pgm"

# tags separating the per-image random streams
_STREAM_DEGRADE, _STREAM_PROMPTS, _STREAM_ORACLE = 1, 2, 3


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class Degradation:
    """One degradation setting: ``clean``, ``gaussian`` noise, or a ``coded`` variant."""

    kind: str = "clean"
    sigma: float = 0.0
    code: str = "000"

    def __post_init__(self):
        if self.kind not in ("clean", "gaussian", "coded"):
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "Degradation":
        """``clean``, ``gaussian:0.05`` / ``sigma:0.05``, or ``coded:101`` / ``code:101``."""
        text = str(text).strip()
        if text == "clean":
            return cls()
        kind, _, arg = text.partition(":")
        if kind in ("gaussian", "sigma"):
            return cls("gaussian", sigma=float(arg))
        if kind in ("coded", "code"):
            return cls("coded", code=str(DegradationCode.parse(arg)))
        raise ValueError(f"cannot parse degradation {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian_{self.sigma:g}"
        if self.kind == "coded":
            return f"coded_{self.code}"
        return "clean"

    def apply(self, img: Image, seed: int, params: DegradationParams | None = None) -> Image:
        if self.kind == "gaussian":
            return add_gaussian_noise(img, self.sigma, seed)
        if self.kind == "coded":
            params = replace(params or DegradationParams(), seed=seed)
            return degrade(img, self.code, params)
        return img


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "synthetic"
    command: str = ""
    # free text recorded in reports, e.g. the model backbone behind the process
    label: str = ""
    blur_sigma: float = 1.5
    gain: float = 4.0
    shift_common: float = 1.0
    shift_prompt: float = 1.0
    looseness: bool = True
    binary: bool = True

    def __post_init__(self):
        if self.kind not in ("synthetic", "external"):
            raise ValueError(f"backend kind must be synthetic or external, got {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise ValueError("external backend needs a command")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_dir: str
    out_dir: str
    modes: tuple = MODES
    degradations: tuple = (Degradation(),)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    seed: int = 0
    degradation_params: DegradationParams = field(default_factory=DegradationParams)
    threshold: float = 0.5
    n_bins: int = 10
    # wall-clock timing makes runs.csv differ between reruns, so it is opt-in
    record_timing: bool = False
    artifacts: bool = True
    figures: bool = True
    # per-image input/fused/entropy panels; slow, so off unless asked for
    panels: bool = False
    workers: int = 1

    def __post_init__(self):
        modes = tuple(self.modes)
        bad = [m for m in modes if m not in MODES]
        if bad or not modes:
            raise ValueError(f"modes must be a non-empty subset of {MODES}, got {modes}")
        degs = tuple(d if isinstance(d, Degradation) else Degradation.parse(d) for d in self.degradations)
        if not degs:
            raise ValueError("need at least one degradation setting")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "degradations", degs)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class RunRecord:
    image_id: str
    mode: str
    degradation: str
    metrics: MetricReport
    m_used: int
    wall_time_s: float | None = None

    def row(self) -> list[str]:
        m = self.metrics
        t = "" if self.wall_time_s is None else f"{self.wall_time_s:.6f}"
        return [self.image_id, self.mode, self.degradation,
                *(f"{getattr(m, k):.8f}" for k in METRICS), str(self.m_used), t]


@dataclass(frozen=True)
class Failure:
    image_id: str
    mode: str
    degradation: str
    error: str


# ------------------------------------------------------------------ dataset

def list_dataset(dataset_dir) -> list[str]:
    """Sorted stems with both ``<stem>.png`` and ``<stem>_mask.pgm`` present."""
    if not os.path.isdir(dataset_dir):
        raise EmptyDataset(f"{dataset_dir} is not a directory")
    names = set(os.listdir(dataset_dir))
    stems = sorted(
        n[:-4] for n in names
        if n.endswith(".png") and f"{n[:-4]}{MASK_SUFFIX}" in names
    )
    if not stems:
        raise EmptyDataset(f"no <stem>.png + <stem>{MASK_SUFFIX} pairs in {dataset_dir}")
    return stems


def load_pair(dataset_dir, stem) -> tuple[Image, np.ndarray]:
    img = load_image(os.path.join(dataset_dir, f"{stem}.png"))
    gt = load_mask(os.path.join(dataset_dir, f"{stem}{MASK_SUFFIX}"))
    _check_pair(img, gt)
    return img, gt


def _check_pair(img: Image, gt):
    if img.shape2d != np.shape(gt):
        raise DimensionMismatch(f"image is {img.shape2d} but mask is {np.shape(gt)}")


def stream_seed(seed: int, image_id: str, tag: int) -> int:
    """Seed of one per-image random stream, independent of processing order."""
    ss = np.random.SeedSequence([seed, zlib.crc32(image_id.encode("utf-8")), tag])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ------------------------------------------------------------------ backends

_EXTERNAL = {}


def _external_backend(command):
    # one live process per worker, reused across images
    from .protocol import ExternalBackend

    be = _EXTERNAL.get(command)
    if be is None:
        be = _EXTERNAL[command] = ExternalBackend(command)
    return be


def close_backends():
    while _EXTERNAL:
        _, be = _EXTERNAL.popitem()
        be.close()


def make_backend(cfg: ExperimentConfig, image_id: str, gt):
    b = cfg.backend
    if b.kind == "external":
        return _external_backend(b.command)
    oc = OracleConfig(
        gt, blur_sigma=b.blur_sigma, gain=b.gain, seed=stream_seed(cfg.seed, image_id, _STREAM_ORACLE),
        shift_common=b.shift_common, shift_prompt=b.shift_prompt, looseness=b.looseness, binary=b.binary,
    )
    return SyntheticOracle(oc)


# ------------------------------------------------------------------- running

@dataclass
class ImageResult:
    """Everything one (image, mode, degradation) run produced."""

    record: RunRecord
    prob: np.ndarray
    boxes: tuple = ()
    uncertainty: dict = field(default_factory=dict)
    selected: int | None = None
    image: Image | None = None


def run_image(cfg: ExperimentConfig, image_id: str, image: Image, gt, mode: str,
              degradation: Degradation, backend=None) -> ImageResult:
    """Run one mode on one (already loaded, not yet degraded) image."""
    gt = np.asarray(gt, dtype=np.float64)
    _check_pair(image, gt)
    backend = backend if backend is not None else make_backend(cfg, image_id, gt)
    t0 = time.perf_counter()
    img = degradation.apply(image, stream_seed(cfg.seed, image_id, _STREAM_DEGRADE), cfg.degradation_params)
    out = ImageResult(record=None, prob=None, image=img)
    if mode == "everything":
        cands = backend.predict_everything(img)
        sel = select_best_mask(cands, gt, cfg.threshold)
        out.prob, out.selected, m_used = np.asarray(cands[sel.index], dtype=np.float64), sel.index, len(cands)
    elif mode == "box":
        box = gt_bounding_box(gt)
        out.prob, out.boxes, m_used = backend.predict(img, box), (box,), 1
    elif mode == "multibox":
        base = gt_bounding_box(gt)
        pc = replace(cfg.prompts, seed=stream_seed(cfg.seed, image_id, _STREAM_PROMPTS))
        boxes = jitter_boxes(base, pc, img.width, img.height)
        pset = PredictionSet(tuple(backend.predict(img, b) for b in boxes), tuple(boxes))
        out.prob, out.boxes, m_used = fuse_mean(pset), tuple(boxes), pset.m
        out.uncertainty = {k: u.values for k, u in all_maps(pset).items()}
    else:
        raise ValueError(f"unknown mode {mode!r}")
    report = evaluate(out.prob, gt, threshold=cfg.threshold, n_bins=cfg.n_bins)
    elapsed = time.perf_counter() - t0 if cfg.record_timing else None
    out.record = RunRecord(image_id, mode, degradation.label, report, m_used, elapsed)
    return out


def write_artifacts(cfg: ExperimentConfig, res: ImageResult, gt=None):
    """Rasters under ``out_dir/<image_id>/<degradation>/``."""
    from .plotting import save_colormap_png

    rec = res.record
    d = os.path.join(cfg.out_dir, rec.image_id, rec.degradation)
    os.makedirs(d, exist_ok=True)
    name = {"everything": "everything_selected", "box": "box", "multibox": "multibox_fused"}[rec.mode]
    save_raster_f32(res.prob, os.path.join(d, f"{name}.pmap"))
    if rec.mode == "multibox":
        write_boxes_csv(res.boxes, os.path.join(d, "multibox_boxes.csv"))
        for kind, values in res.uncertainty.items():
            save_raster_f32(values, os.path.join(d, f"multibox_{kind}.pmap"))
            save_colormap_png(values, os.path.join(d, f"multibox_{kind}.png"))
        if cfg.panels and res.image is not None and gt is not None:
            from .plotting import plot_uncertainty_panel

            plot_uncertainty_panel(res.image.data, res.prob, res.uncertainty["predictive_entropy"], gt,
                                   os.path.join(d, "multibox_panel.png"))


def _run_stem(cfg: ExperimentConfig, stem: str):
    """All cells for one image; failures are caught per cell."""
    records, failures = [], []
    try:
        image, gt = load_pair(cfg.dataset_dir, stem)
    except MultiboxError as exc:
        failures.append(Failure(stem, "*", "*", f"{type(exc).__name__}: {exc}"))
        return records, failures
    backend = None
    for deg in cfg.degradations:
        for mode in cfg.modes:
            try:
                if backend is None:
                    backend = make_backend(cfg, stem, gt)
                res = run_image(cfg, stem, image, gt, mode, deg, backend)
                if cfg.artifacts:
                    write_artifacts(cfg, res, gt)
                records.append(res.record)
            except (MultiboxError, ValueError, OSError) as exc:
                log.warning("%s %s %s failed: %s", stem, mode, deg.label, exc)
                failures.append(Failure(stem, mode, deg.label, f"{type(exc).__name__}: {exc}"))
    return records, failures


def _run_stem_worker(args):
    return _run_stem(*args)


@dataclass
class ExperimentResult:
    records: list
    failures: list
    aggregate: dict


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run the full mode x degradation grid and write the reports."""
    stems = list_dataset(cfg.dataset_dir)
    os.makedirs(cfg.out_dir, exist_ok=True)
    results = {}
    try:
        if cfg.workers == 1:
            for stem in stems:
                results[stem] = _run_stem(cfg, stem)
        else:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                for stem, res in zip(stems, pool.map(_run_stem_worker, [(cfg, s) for s in stems])):
                    results[stem] = res
    finally:
        close_backends()
    records = [r for s in stems for r in results[s][0]]
    failures = [f for s in stems for f in results[s][1]]
    agg = aggregate(records, cfg.modes, [d.label for d in cfg.degradations])
    agg["backend"] = cfg.backend.label or cfg.backend.kind
    agg["n_images"] = len(stems)
    agg["n_failed"] = len(failures)
    write_reports(cfg.out_dir, records, failures, agg)
    if cfg.figures and agg["cells"]:
        from .plotting import plot_aggregate

        plot_aggregate(agg["cells"], os.path.join(cfg.out_dir, "aggregate.png"))
    return ExperimentResult(records, failures, agg)


# ---------------------------------------------------------------- reporting

def aggregate(records, modes=MODES, degradations=None) -> dict:
    """Per-cell means and difference rows.

    Difference rows compare each mode against the first mode present in the
    order everything < box < multibox. A negative ECE difference is a
    reduction and is displayed in parentheses.
    """
    modes = [m for m in MODES if m in modes]
    if degradations is None:
        degradations = list(dict.fromkeys(r.degradation for r in records))
    cells, deltas = [], []
    for deg in degradations:
        means = {}
        for mode in modes:
            rows = [r for r in records if r.degradation == deg and r.mode == mode]
            if not rows:
                continue
            m = {k: float(np.mean([getattr(r.metrics, k) for r in rows])) for k in METRICS}
            means[mode] = m
            cells.append({"degradation": deg, "mode": mode, "n": len(rows), **m})
        present = [m for m in modes if m in means]
        if len(present) < 2:
            continue
        base = present[0]
        for mode in present[1:]:
            diff = {k: means[mode][k] - means[base][k] for k in METRICS}
            deltas.append({
                "degradation": deg, "mode": mode, "baseline": base, **diff,
                "display": {k: format_delta(k, v) for k, v in diff.items()},
            })
    return {"cells": cells, "deltas": deltas}


def format_delta(metric: str, value: float, ndigits: int = 4) -> str:
    if metric == "ece" and value < 0:
        return f"({-value:.{ndigits}f})"
    return f"{value:+.{ndigits}f}"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def runs_csv(records) -> str:
    return _csv_text(RUNS_HEADER, [r.row() for r in records])


def aggregate_csv(agg) -> str:
    rows = [[c["degradation"], c["mode"], c["n"], *(f"{c[k]:.6f}" for k in METRICS)] for c in agg["cells"]]
    for d in agg["deltas"]:
        rows.append([d["degradation"], f"delta({d['mode']}-{d['baseline']})", "",
                     *(d["display"][k] for k in METRICS)])
    return _csv_text(("degradation", "mode", "n", *METRICS), rows)


def write_reports(out_dir, records, failures, agg):
    _write_text(os.path.join(out_dir, "runs.csv"), runs_csv(records))
    _write_text(os.path.join(out_dir, "failed.csv"),
                _csv_text(("image_id", "mode", "degradation", "error"),
                          [[f.image_id, f.mode, f.degradation, f.error] for f in failures]))
    _write_text(os.path.join(out_dir, "aggregate.csv"), aggregate_csv(agg))
    _write_text(os.path.join(out_dir, "aggregate.json"), json.dumps(agg, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------ band analysis

def boundary_band(gt, width: int = 3) -> np.ndarray:
    """Pixels within a ``width``-pixel band straddling the gt boundary."""
    g = np.asarray(gt) > 0
    outer = width // 2
    # iterations=0 would mean "until stable" in scipy
    grown = binary_dilation(g, iterations=outer) if outer else g
    return grown & ~binary_erosion(g, iterations=width - outer)


def interior(gt, erode: int = 6) -> np.ndarray:
    return binary_erosion(np.asarray(gt) > 0, iterations=erode)


# ------------------------------------------------------------------ config io

def _resolve(base_dir, path):
    if path is None or os.path.isabs(path) or base_dir is None:
        return path
    return os.path.join(base_dir, path)


def default_degradations() -> tuple:
    return (Degradation(),) + tuple(Degradation("gaussian", sigma=s) for s in STANDARD_SIGMAS) \
        + tuple(Degradation("coded", code=c) for c in STANDARD_CODES)


def config_from_mapping(d: dict, base_dir=None, **overrides) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from parsed TOML.

    Relative paths are taken relative to ``base_dir`` (the config file's
    directory). Keyword ``overrides`` whose value is not None win over the file.
    """
    ds = d.get("dataset", {})
    pr = d.get("prompts", {})
    dg = d.get("degradation", {})
    be = d.get("backend", {})
    out = d.get("output", {})

    if "settings" in dg:
        degs = tuple(Degradation.parse(s) for s in dg["settings"])
    elif any(k in dg for k in ("clean", "sigmas", "codes")):
        degs = ((Degradation(),) if dg.get("clean", True) else ()) \
            + tuple(Degradation("gaussian", sigma=float(s)) for s in dg.get("sigmas", ())) \
            + tuple(Degradation("coded", code=str(c)) for c in dg.get("codes", ()))
    else:
        degs = default_degradations()
    params = DegradationParams(
        sigma_noise=float(dg.get("sigma_noise", 0.05)),
        blur_radius=float(dg.get("blur_radius", 0.01)),
        illum_strength=float(dg.get("illum_strength", 0.6)),
    )
    kw = dict(
        dataset_dir=_resolve(base_dir, ds.get("dir")),
        out_dir=_resolve(base_dir, out.get("dir", "out")),
        modes=tuple(d.get("modes", MODES)),
        degradations=degs,
        prompts=PromptConfig(m=int(pr.get("m", 8)), jitter_ratio=float(pr.get("jitter_ratio", 0.1))),
        backend=None,
        seed=int(d.get("seed", 0)),
        degradation_params=params,
        threshold=float(d.get("threshold", 0.5)),
        n_bins=int(d.get("n_bins", 10)),
        record_timing=bool(out.get("record_timing", False)),
        artifacts=bool(out.get("artifacts", True)),
        figures=bool(out.get("figures", True)),
        panels=bool(out.get("panels", False)),
        workers=int(out.get("workers", 1)),
    )
    bkw = {k: be[k] for k in ("kind", "command", "label", "blur_sigma", "gain", "shift_common",
                              "shift_prompt", "looseness", "binary") if k in be}
    for key in ("kind", "command", "label"):
        v = overrides.pop(f"backend_{key}", None)
        if v is not None:
            bkw[key] = v
    for key in ("m", "jitter_ratio"):
        v = overrides.pop(key, None)
        if v is not None:
            kw["prompts"] = replace(kw["prompts"], **{key: v})
    kw["backend"] = BackendConfig(**bkw)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    if kw["dataset_dir"] is None:
        raise ValueError("no dataset directory given ([dataset] dir or --dataset)")
    return ExperimentConfig(**kw)


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(d, os.path.dirname(os.path.abspath(path)), **overrides)
