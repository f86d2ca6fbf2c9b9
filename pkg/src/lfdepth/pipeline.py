"""segment -> init -> refine -> fuse -> eval, with persisted artifacts per stage.

Every stage writes its outputs under ``cfg.out`` with fixed names and can be
re-run alone from the artifacts of its predecessors.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data_io
from .config import STAGE_ID, STAGES, PipelineConfig, dump_config
from .data_io import DataError, DatasetDescriptor, EvalMask, MultiViewSet
from .evaluation import (bad_pixel_rate, covisible_mask, discontinuity_mask, error_overlay,
                         inverse_depth_rms)
from .fusion import fuse_view
from .refine import EnergyModel, refine_iteration
from .stack import PlaneMap, ViewStack
from .superpixel import SuperpixelGrid, grid_dims, rgb_to_lab, slic_segment, write_stats
from .sweep import plane_sweep_init

log = logging.getLogger(__name__)

THRESHOLDS = (1.0, 0.5)
REGIONS = ("nocc", "all", "disc")


class StageError(RuntimeError):
    """First failure inside a stage, tagged with the stage name and view id."""

    def __init__(self, stage: str, view, cause: BaseException):
        where = f"stage {stage}" + (f", view {view}" if view is not None else "")
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.view = view
        self.cause = cause


# -- artifact names -----------------------------------------------------------

def depth_name(view: int, stage: str, ext: str = "pfm") -> str:
    return f"depth_v{view}_stage{STAGE_ID[stage]}.{ext}"


def planes_name(view: int, stage: str) -> str:
    return f"planes_v{view}_stage{STAGE_ID[stage]}.npy"


def labels_name(view: int) -> str:
    return f"labels_v{view}.png"


def iter_name(view: int, l: int, ext: str = "pfm") -> str:
    return f"depth_v{view}_stage{STAGE_ID['refine']}_iter{l}.{ext}"


@dataclass
class PipelineResult:
    out: Path
    grids: list | None = None
    init: PlaneMap | None = None
    refined: PlaneMap | None = None
    fused: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)


class _Run:
    def __init__(self, cfg: PipelineConfig, desc: DatasetDescriptor, mvs: MultiViewSet):
        self.cfg = cfg
        self.desc = desc
        self.mvs = mvs
        self.out = Path(cfg.out)
        self.V = mvs.n_views
        self._lab = None
        self._stack = None
        self.res = PipelineResult(self.out)

    @property
    def lab(self) -> np.ndarray:
        if self._lab is None:
            self._lab = np.stack([rgb_to_lab(im) for im in self.mvs.images])
        return self._lab

    def path(self, name: str) -> Path:
        return self.out / name

    def time(self, stage: str, view, ms: float) -> None:
        self.res.timings.append((stage, view, ms))

    def stats(self, stage: str, records: list[dict]) -> None:
        with open(self.path(f"stats_{stage}.jsonl"), "w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    def need(self, stage: str, names: list[str]) -> None:
        missing = [n for n in names if not self.path(n).exists()]
        if missing:
            raise DataError(f"stage {stage} artifacts missing in {self.out}: {', '.join(missing)}")

    def have(self, names: list[str]) -> bool:
        return all(self.path(n).exists() for n in names)

    def stack(self) -> ViewStack:
        if self._stack is None:
            self._stack = ViewStack.build(self.mvs, self.res.grids, self.cfg.max_neighbors, self.lab)
        return self._stack

    def write_depth(self, depth: np.ndarray, name_pfm: str) -> None:
        data_io.write_pfm(depth.astype(np.float32), self.path(name_pfm))
        data_io.write_depth_png(depth, self.mvs.depth_range,
                                self.path(name_pfm[:-4] + ".png"))

    def write_planes(self, pm: PlaneMap, stage: str) -> None:
        for v in range(self.V):
            np.save(self.path(planes_name(v, stage)),
                    np.column_stack([pm.depth[v], pm.normal[v]]), allow_pickle=False)
            self.write_depth(pm.raster[v], depth_name(v, stage))

    def read_planes(self, stage: str) -> PlaneMap:
        names = [planes_name(v, stage) for v in range(self.V)]
        self.need(stage, names)
        tabs = [np.load(self.path(n), allow_pickle=False) for n in names]
        n = self.stack().n_sp
        if any(t.shape != (n, 4) for t in tabs):
            raise DataError(f"stage {stage} plane tables do not match the superpixel grid")
        tab = np.stack(tabs)
        return PlaneMap.from_planes(self.stack(), tab[:, :, 0], tab[:, :, 1:])


# -- stages -------------------------------------------------------------------

def _segment_names(v: int) -> list[str]:
    return [labels_name(v), f"superpixels_v{v}.txt", f"centroids_v{v}.npy"]


def _run_segment(run: _Run) -> None:
    records = []
    for v in range(run.V):
        t0 = time.perf_counter()
        try:
            grid = slic_segment(run.mvs.images[v], run.cfg.slic, lab=run.lab[v])
            data_io.write_label_png(grid.labels, run.path(labels_name(v)))
            write_stats(grid, run.path(f"superpixels_v{v}.txt"))
            np.save(run.path(f"centroids_v{v}.npy"), grid.centroids, allow_pickle=False)
        except Exception as exc:
            raise StageError("segment", v, exc) from exc
        run.time("segment", v, 1e3 * (time.perf_counter() - t0))
        run.res.grids.append(grid)
        records.append({"stage": "segment", "view": v, "superpixels": int(grid.n),
                        "grid": [grid.grid_w, grid.grid_h],
                        "empty": int((grid.counts == 0).sum()),
                        "mean_pixels": float(grid.counts.mean())})
    run.stats("segment", records)


def _load_segment(run: _Run) -> None:
    W, H, S = run.mvs.width, run.mvs.height, run.cfg.slic.size
    gw, gh = grid_dims(W, H, S)
    for v in range(run.V):
        run.need("segment", _segment_names(v))
        labels = data_io.read_label_png(run.path(labels_name(v)))
        cen = np.load(run.path(f"centroids_v{v}.npy"), allow_pickle=False)
        if labels.shape != (H, W) or cen.shape != (gw * gh, 2):
            raise DataError(f"persisted segmentation of view {v} does not match "
                            f"{W}x{H} images with superpixel size {S}")
        run.res.grids.append(SuperpixelGrid.from_labels(labels, run.lab[v], gw, gh, S,
                                                        fallback_centers=cen))


def _plane_stats(stage: str, pm: PlaneMap, V: int) -> list[dict]:
    out = []
    for v in range(V):
        d = pm.raster[v]
        ok = d > 0
        out.append({"stage": stage, "view": v, "valid_fraction": float(ok.mean()),
                    "depth_min": float(d[ok].min()) if ok.any() else 0.0,
                    "depth_max": float(d[ok].max()) if ok.any() else 0.0,
                    "depth_mean": float(d[ok].mean()) if ok.any() else 0.0})
    return out


def _run_init(run: _Run) -> None:
    t0 = time.perf_counter()
    try:
        pm = plane_sweep_init(run.stack(), run.cfg.sweep, run.cfg.seed, run.cfg.workers)
        run.write_planes(pm, "init")
    except Exception as exc:
        raise StageError("init", None, exc) from exc
    ms = 1e3 * (time.perf_counter() - t0)
    # the sweep runs all views in one parallel pass; time is split evenly
    for v in range(run.V):
        run.time("init", v, ms / run.V)
    run.res.init = pm
    run.stats("init", _plane_stats("init", pm, run.V))


def _run_refine(run: _Run) -> None:
    cfg = run.cfg
    t0 = time.perf_counter()
    records = []
    try:
        model = EnergyModel(run.stack(), cfg.energy, levels=cfg.sweep.levels)
        state = run.res.init
        for l in range(1, model.params.iterations + 1):
            nxt = refine_iteration(model, state, l, cfg.workers)
            changed = (nxt.depth != state.depth) | np.any(nxt.normal != state.normal, axis=2)
            for v in range(run.V):
                records.append({"stage": "refine", "view": v, "iteration": l,
                                "changed_planes": int(changed[v].sum())})
            state = nxt
            if cfg.dump_every and l % cfg.dump_every == 0:
                for v in range(run.V):
                    run.write_depth(state.raster[v], iter_name(v, l))
        run.write_planes(state, "refine")
    except Exception as exc:
        raise StageError("refine", None, exc) from exc
    ms = 1e3 * (time.perf_counter() - t0)
    for v in range(run.V):
        run.time("refine", v, ms / run.V)
    run.res.refined = state
    run.stats("refine", records + _plane_stats("refine", state, run.V))


def fusion_epsilon(cfg: PipelineConfig, depth_range) -> float:
    if cfg.fusion_epsilon is not None:
        return cfg.fusion_epsilon
    return depth_range.inverse_step(cfg.sweep.levels)


def _run_fuse(run: _Run) -> None:
    eps = fusion_epsilon(run.cfg, run.mvs.depth_range)
    # fuse exactly what the refine stage persisted (float32 PFM precision)
    maps = run.res.refined.raster.astype(np.float32).astype(np.float64)
    fused = np.zeros_like(maps)
    records = []
    for v in range(run.V):
        t0 = time.perf_counter()
        try:
            fused[v] = fuse_view(v, maps, run.mvs.cameras, eps)
            run.write_depth(fused[v], depth_name(v, "fuse"))
        except Exception as exc:
            raise StageError("fuse", v, exc) from exc
        run.time("fuse", v, 1e3 * (time.perf_counter() - t0))
        records.append({"stage": "fuse", "view": v, "epsilon": eps,
                        "valid_fraction": float((fused[v] > 0).mean())})
    run.res.fused = fused
    run.stats("fuse", records)


def _load_fuse(run: _Run) -> None:
    names = [depth_name(v, "fuse") for v in range(run.V)]
    run.need("fuse", names)
    run.res.fused = np.stack([data_io.read_pfm(run.path(n)).astype(np.float64) for n in names])


def eval_masks(desc: DatasetDescriptor, v: int, gt_disp: np.ndarray,
               covisible: np.ndarray | None = None) -> EvalMask:
    """Evaluation regions of view ``v``: shipped masks where present, else derived.

    Without a shipped ``nocc`` mask the co-visible pixels are used when known,
    otherwise ``nocc`` falls back to ``all``.
    """
    shipped = data_io.load_masks(desc, v)
    valid = gt_disp > 0
    all_m = valid & shipped["all"] if "all" in shipped else valid
    if "nocc" in shipped:
        nocc = shipped["nocc"] & all_m
    elif covisible is not None:
        nocc = covisible & all_m
    else:
        nocc = all_m.copy()
    if "disc" in shipped:
        disc = shipped["disc"] & all_m
    else:
        disc = discontinuity_mask(gt_disp, valid) & all_m
    return EvalMask(all_m, nocc, disc)


def evaluate_view(desc: DatasetDescriptor, v: int, depth: np.ndarray,
                  gt_disp: np.ndarray | None = None, masks: EvalMask | None = None,
                  covisible: np.ndarray | None = None) -> dict | None:
    """Bad-pixel rates (region x threshold) of one depth map in disparity units."""
    if desc.rig is None:
        return None
    if gt_disp is None:
        gt_disp = data_io.load_gt_disparity(desc, v)
        if gt_disp is None:
            return None
    if masks is None:
        masks = eval_masks(desc, v, gt_disp, covisible)
    est = data_io.depth_to_disparity(depth, desc)
    out = {}
    for region in REGIONS:
        if not masks.region(region).any():
            continue
        for t in THRESHOLDS:
            out[f"{region}@{t:g}"] = bad_pixel_rate(est, gt_disp, masks, region, t)
    return out


def _run_eval(run: _Run) -> None:
    desc = run.desc
    metrics = {}
    records = []
    maps = {"refine": run.res.refined.raster if run.res.refined is not None else None,
            "fuse": run.res.fused}
    gt_depths = [data_io.load_gt_depth(desc, v) for v in range(run.V)]
    all_depth = all(g is not None for g in gt_depths)
    for v in range(run.V):
        t0 = time.perf_counter()
        try:
            gt_disp = data_io.load_gt_disparity(desc, v) if desc.rig is not None else None
            gt_depth = gt_depths[v]
            covis = covisible_mask(gt_depths, run.mvs.cameras, v) if all_depth else None
            if gt_disp is None and gt_depth is None:
                continue
            masks = eval_masks(desc, v, gt_disp, covis) if gt_disp is not None else None
            for stage, m in maps.items():
                if m is None:
                    continue
                rec = {"stage": "eval", "view": v, "map": stage}
                if gt_disp is not None:
                    rec["bad_pixel"] = evaluate_view(desc, v, m[v], gt_disp, masks)
                    overlay = error_overlay(data_io.depth_to_disparity(m[v], desc), gt_disp,
                                            masks.all, 1.0)
                    data_io.write_image(overlay, run.path(f"error_v{v}_stage{STAGE_ID[stage]}.png"))
                if gt_depth is not None:
                    # scored where the truth is seen by at least two cameras
                    rms, cov = inverse_depth_rms(m[v], gt_depth, run.mvs.depth_range, covis)
                    rec["inverse_depth_rms_over_range"] = rms
                    rec["coverage"] = cov
                records.append(rec)
                metrics.setdefault(f"view{v}", {})[stage] = {k: rec[k] for k in rec
                                                             if k not in ("stage", "view", "map")}
        except Exception as exc:
            raise StageError("eval", v, exc) from exc
        run.time("eval", v, 1e3 * (time.perf_counter() - t0))
    run.res.metrics = metrics
    with open(run.path("metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.stats("eval", records)


# -- driver -------------------------------------------------------------------

_OUTPUTS = {
    "segment": lambda run: [n for v in range(run.V) for n in _segment_names(v)],
    "init": lambda run: [planes_name(v, "init") for v in range(run.V)],
    "refine": lambda run: [planes_name(v, "refine") for v in range(run.V)],
    "fuse": lambda run: [depth_name(v, "fuse") for v in range(run.V)],
    "eval": lambda run: ["metrics.json"],
}


# inputs each stage consumes; eval's are optional (scored when present)
_DEPS = {"segment": (), "init": ("segment",), "refine": ("segment", "init"),
         "fuse": ("segment", "refine"), "eval": ("segment", "refine", "fuse")}


def run_pipeline(cfg: PipelineConfig, dataset=None) -> PipelineResult:
    """Run the selected stages in order.

    Inputs of a selected stage that are not themselves selected are loaded
    from ``cfg.out``; with ``cfg.resume`` a selected stage whose outputs already
    exist is loaded instead of recomputed. ``dataset`` may pass a preloaded
    (descriptor, views) pair.
    """
    if dataset is None:
        if cfg.manifest is None:
            raise DataError("no dataset manifest configured")
        desc, mvs = data_io.load_dataset(cfg.manifest)
    else:
        desc, mvs = dataset
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    run = _Run(cfg, desc, mvs)
    run.res.grids = []

    to_run = {s for s in cfg.stages if not (cfg.resume and run.have(_OUTPUTS[s](run)))}
    wanted = set(cfg.stages)
    for s in reversed(STAGES):
        if s in wanted:
            wanted.update(_DEPS[s])
    optional = set()
    if "eval" in wanted and not {"refine", "fuse"} & set(cfg.stages):
        # eval alone scores whichever maps were persisted
        optional = {"refine", "fuse"}

    runners = {"segment": _run_segment, "init": _run_init, "refine": _run_refine,
               "fuse": _run_fuse, "eval": _run_eval}
    loaders = {"segment": _load_segment,
               "init": lambda r: setattr(r.res, "init", r.read_planes("init")),
               "refine": lambda r: setattr(r.res, "refined", r.read_planes("refine")),
               "fuse": _load_fuse, "eval": lambda r: None}
    for stage in STAGES:
        if stage not in wanted:
            continue
        if stage in to_run:
            log.info("running %s", stage)
            runners[stage](run)
            continue
        if stage == "init" and "refine" not in to_run:
            continue  # only refine consumes the initial planes
        if stage in optional and not run.have(_OUTPUTS[stage](run)):
            continue
        log.info("loading %s", stage)
        try:
            loaders[stage](run)
        except DataError:
            raise
        except Exception as exc:
            raise StageError(stage, None, exc) from exc
    _write_timings(out, run.res.timings)
    return run.res


def _write_timings(out: Path, rows) -> None:
    with open(out / "timings.tsv", "w") as fh:
        fh.write("stage\tview\tms\n")
        for stage, view, ms in rows:
            fh.write(f"{stage}\t{view}\t{ms:.3f}\n")
