"""Command implementations: generate, train, calibrate, infer, evaluate, ablate, baseline.

Work over a split is cut into fixed chunks of ``config.batch`` samples. Chunks
run in a process pool when ``workers > 1`` and results are reassembled in
sample order, so outputs do not depend on the worker count. With the oracle
backend every sample carries its own predictor and is swept alone; with a
trained checkpoint a chunk is swept as one batch.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..denoiser.model import ArchitectureMismatch, CheckpointError, TinyDenoiser, load_checkpoint, save_checkpoint
from ..denoiser.train import train
from ..forward import NumericFailure, Storage, sweep_multi
from ..metrics import EvalReport, UndefinedMetricError, accuracy, pearson, setup_scores
from ..numerics import connected_component_filter, median_filter
from ..phantom import SPLITS, UNHEALTHY, DatasetManifest, FormatError, PhantomSample, generate_dataset
from ..schedule import ConfigurationError
from ..score import Condition, NoisePredictor, OracleBackend
from ..segmentation import SamMode, SegmentOptions, reconstruction_baseline, segment_batch
from ..selection import SelectionCalibration, cosine_score, select_end_step, select_guidance
from . import analysis
from .artifacts import (
    EmptyInputError,
    PrerequisiteError,
    read_json,
    read_npz,
    sha256_file,
    write_csv,
    write_json,
    write_map_pgm,
    write_mask_pgm,
    write_npz,
)
from .config import ExperimentConfig

log = logging.getLogger("fpdm.harness")

ABLATION_AXES = ("w", "t_e-multiplier", "fixed-threshold", "sam-mode")


def sweep_seed(master_seed: int, split: str, index: int) -> int:
    """Noise seed of one sample's forward sweep; distinct from its phantom seed."""
    ss = np.random.SeedSequence([int(master_seed), 0x5EED, SPLITS.index(split), int(index)])
    return int(ss.generate_state(1)[0])


# locations

def data_dir(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "data"


def model_path(cfg: ExperimentConfig) -> Path:
    return cfg.checkpoint_path or cfg.out_dir / "model.ckpt"


def calibration_path(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "calibration.json"


def infer_dir(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "infer"


# prerequisites

def load_manifest(cfg: ExperimentConfig) -> DatasetManifest:
    path = data_dir(cfg) / "manifest.json"
    if not path.exists():
        raise PrerequisiteError(f"no dataset at {path}; run 'generate' first")
    try:
        manifest = DatasetManifest.load(path)
    except (FormatError, KeyError, ValueError) as exc:
        raise PrerequisiteError(f"corrupt manifest {path}: {exc}") from exc
    if manifest.generator_hash != cfg.phantom_config().digest() or manifest.master_seed != cfg.seed:
        raise PrerequisiteError(f"dataset at {path} was generated with a different phantom config or seed")
    return manifest


_MODELS: dict[tuple, TinyDenoiser] = {}


def load_model(cfg: ExperimentConfig) -> TinyDenoiser:
    """EMA weights when the checkpoint has them, else the raw weights; cached per process."""
    path = cfg.checkpoint_path
    if path is None:
        raise ConfigurationError("backend is 'oracle'; no checkpoint to load")
    if not path.exists():
        raise PrerequisiteError(f"missing checkpoint {path}; run 'train' first")
    st = path.stat()
    key = (str(path), st.st_mtime_ns, st.st_size)
    if key not in _MODELS:
        try:
            model, ema = load_checkpoint(path)
        except CheckpointError as exc:
            raise PrerequisiteError(f"corrupt checkpoint {path}: {exc}") from exc
        if model.arch != cfg.arch_spec():
            raise ArchitectureMismatch(f"checkpoint {path} has architecture {model.arch}, config wants {cfg.arch_spec()}")
        _MODELS.clear()
        _MODELS[key] = ema if ema is not None else model
    return _MODELS[key]


def load_calibration(cfg: ExperimentConfig) -> tuple[SelectionCalibration, dict]:
    doc = read_json(calibration_path(cfg), cfg.digest(), "calibration (run 'calibrate' first)")
    calib = SelectionCalibration(**doc["calibration"])
    if calib.schedule_fingerprint != cfg.schedule().fingerprint():
        raise PrerequisiteError("calibration was made under a different noise schedule")
    return calib, doc


def _split_indices(manifest: DatasetManifest, split: str, unhealthy_only: bool = False) -> list[int]:
    entries = manifest.entries(split)
    idx = [i for i, e in enumerate(entries) if not unhealthy_only or e["label"] == UNHEALTHY]
    if not idx:
        what = "unhealthy samples in" if unhealthy_only else "samples in"
        raise EmptyInputError(f"no {what} split {split!r}")
    return idx


# chunked execution

def _chunks(indices: Sequence[int], size: int) -> list[list[int]]:
    return [list(indices[i:i + size]) for i in range(0, len(indices), size)]


def run_chunks(cfg: ExperimentConfig, fn: Callable, split: str, indices: Sequence[int], payload=None) -> list:
    """Apply ``fn((cfg_dict, split, chunk, payload))`` over fixed chunks; flatten in sample order."""
    jobs = [(cfg.to_dict(), split, chunk, payload) for chunk in _chunks(indices, cfg.batch)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            parts = list(pool.map(fn, jobs))
    else:
        parts = [fn(job) for job in jobs]
    return [item for part in parts for item in part]


def _unpack(job):
    cfg_dict, split, chunk, payload = job
    cfg = ExperimentConfig.from_dict(cfg_dict)
    manifest = load_manifest(cfg)
    oracle = cfg.backend == "oracle"
    samples = [manifest.sample(split, i, with_components=oracle) for i in chunk]
    return cfg, split, chunk, payload, samples


def _groups(cfg: ExperimentConfig, samples: Sequence[PhantomSample]):
    """Yield ``(predictor, positions)``: one group per sample for the oracle, one per chunk otherwise."""
    if cfg.backend == "oracle":
        sch = cfg.schedule()
        for k, s in enumerate(samples):
            oracle = s.oracle(cfg.oracle_prior, cfg.oracle_location_weight, cfg.oracle_location_blur)
            yield OracleBackend(oracle, sch), [k]
    else:
        yield load_model(cfg), list(range(len(samples)))


def _context(split: str, chunk: Sequence[int], pos: Sequence[int]) -> str:
    ids = [chunk[p] for p in pos]
    return f"{split}[{ids[0]}]" if len(ids) == 1 else f"{split}[{ids[0]}..{ids[-1]}]"


def _sweep(cfg, pred: NoisePredictor, x0, seeds, ws, storage, where: str):
    try:
        return sweep_multi(x0, pred, cfg.schedule(), ws, seeds, cfg.encoding, cfg.stride, storage,
                           cfg.max_step, cfg.drift)
    except NumericFailure as exc:
        raise NumericFailure(exc.step, f"sample {where}: non-finite value") from exc


def _stack(samples, pos) -> np.ndarray:
    return np.stack([samples[p].image for p in pos]).astype(np.float64)


def segment_options(cfg: ExperimentConfig, mode: SamMode | None = None, storage: str | None = None) -> SegmentOptions:
    return SegmentOptions(encoding=cfg.encoding, stride=cfg.stride, mode=SamMode(mode or cfg.sam_mode),
                          storage=Storage(storage or cfg.storage), max_step=cfg.max_step,
                          median_kernel=cfg.median_kernel, min_size=cfg.min_size, drift=cfg.drift)


# generate

def cmd_generate(cfg: ExperimentConfig) -> Path:
    root = data_dir(cfg)
    manifest = generate_dataset(cfg.phantom_config(), cfg.counts, cfg.seed, root)
    write_json(root / "generate.json", {"manifest_hash": manifest.digest(), "counts": cfg.counts}, cfg.digest())
    log.info("generated %s samples under %s", {k: manifest.count(k) for k in manifest.splits}, root)
    return root / "manifest.json"


# train

def cmd_train(cfg: ExperimentConfig) -> Path:
    manifest = load_manifest(cfg)
    idx = _split_indices(manifest, "train")
    samples = [manifest.sample("train", i) for i in idx]
    images = np.stack([s.image for s in samples]).astype(np.float64)
    labels = np.array([int(Condition.UNHEALTHY if s.label == UNHEALTHY else Condition.HEALTHY) for s in samples])
    arch = cfg.arch_spec()
    half = 2 ** (arch.levels - 1)
    if images.shape[1] % half or images.shape[2] % half:
        raise ConfigurationError(f"phantom size {images.shape[1]} is not divisible by {half}")
    tc = cfg.train_config()
    if cfg.train_steps:
        # a step budget overrides the epoch count
        per_epoch = -(-len(samples) // tc.batch_size)
        tc = dataclasses.replace(tc, epochs=max(tc.epochs, -(-cfg.train_steps // per_epoch)))
    model = TinyDenoiser.initialize(arch, seed=tc.seed)
    ema = model.copy()
    history: list[tuple[int, float]] = []
    t0 = time.perf_counter()

    def progress(step, loss):
        history.append((step, loss))
        if step % 50 == 0:
            recent = np.mean([v for _, v in history[-50:]])
            log.info("step %d loss %.5f (%.0fs)", step, recent, time.perf_counter() - t0)

    train(model, images, labels, cfg.schedule(), tc, ema, progress, cfg.train_steps or None)
    path = model_path(cfg)
    save_checkpoint(path, model, ema)
    h = cfg.digest()
    write_csv(cfg.out_dir / "train_log.csv", ["step", "loss"], history, h)
    tail = [v for _, v in history[-50:]]
    write_json(cfg.out_dir / "model.json", {
        "checkpoint": str(path), "checkpoint_sha256": sha256_file(path), "steps": len(history),
        "final_loss": float(np.mean(tail)) if tail else None, "n_train": len(samples),
    }, h)
    return path


# calibrate

def _calibrate_chunk(job):
    cfg, split, chunk, _, samples = _unpack(job)
    out = []
    for pred, pos in _groups(cfg, samples):
        seeds = [sweep_seed(cfg.seed, split, chunk[p]) for p in pos]
        traces = _sweep(cfg, pred, _stack(samples, pos), seeds, cfg.guidance, Storage.TWO_PASS,
                        _context(split, chunk, pos))
        for p, row in zip(pos, traces):
            out.append({"label": samples[p].label,
                        "scores": [cosine_score(tr) for tr in row],
                        "m_te": [select_end_step(tr)[1] for tr in row]})
    return out


def cmd_calibrate(cfg: ExperimentConfig) -> Path:
    manifest = load_manifest(cfg)
    idx = _split_indices(manifest, "val")
    rows = run_chunks(cfg, _calibrate_chunk, "val", idx)
    labels = [r["label"] for r in rows]
    per_w = [[r["scores"][j] for r in rows] for j in range(len(cfg.guidance))]
    curve = select_guidance(cfg.guidance, per_w, labels, cfg.rho)
    m_max_by_w = [max(r["m_te"][j] for r in rows) for j in range(len(cfg.guidance))]
    j_star = list(cfg.guidance).index(curve.w_star)
    calib = SelectionCalibration(curve.w_star, curve.cos_threshold, m_max_by_w[j_star], cfg.a, cfg.b,
                                 cfg.rho, cfg.schedule().fingerprint())
    h = cfg.digest()
    write_csv(cfg.out_dir / "guidance_curve.csv", ["w", "threshold", "accuracy", "m_max", "chosen"],
              [(w, thr, acc, mm, int(w == curve.w_star))
               for w, thr, acc, mm in zip(curve.candidates, curve.thresholds, curve.accuracies, m_max_by_w)], h)
    return write_json(calibration_path(cfg), {
        "calibration": asdict(calib),
        "curve": {"candidates": list(curve.candidates), "thresholds": list(curve.thresholds),
                  "accuracies": list(curve.accuracies), "m_max": m_max_by_w},
        "n_val": len(rows),
    }, h)


# infer

def _infer_chunk(job):
    cfg, split, chunk, calib_dict, samples = _unpack(job)
    calib = SelectionCalibration(**calib_dict)
    opts = segment_options(cfg)
    out = []
    for pred, pos in _groups(cfg, samples):
        seeds = [sweep_seed(cfg.seed, split, chunk[p]) for p in pos]
        try:
            results = segment_batch(_stack(samples, pos), pred, cfg.schedule(), calib, opts, seeds, gate=False)
        except NumericFailure as exc:
            raise NumericFailure(exc.step, f"sample {_context(split, chunk, pos)}: non-finite value") from exc
        for p, res in zip(pos, results):
            out.append({
                "index": chunk[p], "verdict": res.verdict, "score": res.score, "t_e": res.t_e,
                "m_te": res.m_te, "q_star": res.q_star, "aam": res.aam, "filtered": res.filtered,
                "mask": res.mask, "trace": list(res.trace.rows()),
            })
    return out


def cmd_infer(cfg: ExperimentConfig) -> Path:
    calib, _ = load_calibration(cfg)
    manifest = load_manifest(cfg)
    idx = _split_indices(manifest, "test")
    rows = run_chunks(cfg, _infer_chunk, "test", idx, asdict(calib))
    h = cfg.digest()
    root = infer_dir(cfg)
    records = []
    gated = []
    for r in rows:
        i = r["index"]
        mask = r["mask"] if r["verdict"] == UNHEALTHY else np.zeros_like(r["mask"])
        gated.append(mask)
        write_map_pgm(root / "aam" / f"{i:05d}.pgm", r["aam"], h)
        write_mask_pgm(root / "mask" / f"{i:05d}.pgm", mask, h)
        write_csv(root / "trace" / f"{i:05d}.csv", ["t", "M_t", "MSE_h", "MSE_null"], r["trace"], h)
        records.append({k: r[k] for k in ("index", "verdict", "score", "t_e", "m_te", "q_star")})
    write_npz(root / "arrays.npz", h,
              index=np.array([r["index"] for r in rows]),
              aam=np.stack([r["aam"] for r in rows]),
              filtered=np.stack([r["filtered"] for r in rows]),
              mask_ungated=np.stack([r["mask"] for r in rows]),
              mask=np.stack(gated))
    ckpt = None if cfg.backend == "oracle" else sha256_file(cfg.checkpoint_path)
    return write_json(root / "results.json", {"samples": records, "n": len(records),
                                              "checkpoint_sha256": ckpt,
                                              "calibration": asdict(calib)}, h)


# evaluate

def _safe_pearson(x, y) -> float | None:
    try:
        return pearson(x, y)
    except (UndefinedMetricError, ValueError):
        return None


def cmd_evaluate(cfg: ExperimentConfig) -> Path:
    h = cfg.digest()
    root = infer_dir(cfg)
    manifest = load_manifest(cfg)
    _split_indices(manifest, "test")  # an empty split is its own error, not a missing artifact
    doc = read_json(root / "results.json", h, "inference results (run 'infer' first)")
    if not doc["samples"]:
        raise EmptyInputError("inference results hold no test samples")
    arrays = read_npz(root / "arrays.npz", h, "inference arrays")
    recs = doc["samples"]
    truths = [manifest.sample("test", r["index"]) for r in recs]
    labels = [s.label for s in truths]
    verdicts = [r["verdict"] for r in recs]
    fg = [s.foreground for s in truths]
    lesions = [s.lesion_mask for s in truths]
    mixed_scores = [f if v == UNHEALTHY else np.zeros_like(f) for f, v in zip(arrays["filtered"], verdicts)]
    mixed = setup_scores(list(arrays["mask"]), lesions, mixed_scores, fg)
    un = [k for k, lab in enumerate(labels) if lab == UNHEALTHY]
    unhealthy = setup_scores([arrays["mask_ungated"][k] for k in un], [lesions[k] for k in un],
                             [arrays["filtered"][k] for k in un], [fg[k] for k in un])
    r = _safe_pearson([truths[k].lesion_area for k in un], [recs[k]["m_te"] for k in un]) if len(un) > 1 else None
    report = EvalReport(mixed, unhealthy, accuracy(verdicts, labels), r, len(recs), len(un), h)
    _write_report(cfg.out_dir / "report", report)
    return cfg.out_dir / "report.json"


def _write_report(stem: Path, report: EvalReport) -> None:
    h = report.config_hash
    write_json(stem.with_suffix(".json"), report.to_dict(), h)
    rows = [(name, getattr(report, name).dice, getattr(report, name).iou, getattr(report, name).auprc,
             getattr(report, name).n) for name in ("mixed", "unhealthy")]
    rows.append(("accuracy", report.accuracy, "", "", report.n_samples))
    rows.append(("pearson_size_m", report.pearson_size_m, "", "", report.n_unhealthy))
    write_csv(stem.with_suffix(".csv"), ["setup", "dice", "iou", "auprc", "n"], rows, h)


# ablate

def cohort(cfg: ExperimentConfig, split: str, chunk: Sequence[int], samples, ws) -> list[list[analysis.CohortItem]]:
    """Store-all traces for each sample at each guidance strength: ``items[k][j]``."""
    items = []
    for pred, pos in _groups(cfg, samples):
        seeds = [sweep_seed(cfg.seed, split, chunk[p]) for p in pos]
        traces = _sweep(cfg, pred, _stack(samples, pos), seeds, ws, Storage.STORE_ALL, _context(split, chunk, pos))
        for p, row in zip(pos, traces):
            s = samples[p]
            items.append([analysis.CohortItem(chunk[p], tr, s.lesion_mask, s.foreground) for tr in row])
    return items


def _ablate_chunk(job):
    cfg, split, chunk, payload, samples = _unpack(job)
    axis, calib_dict, m_max_by_w = payload
    calib = SelectionCalibration(**calib_dict)
    sch = cfg.schedule()
    k, ms = cfg.median_kernel, cfg.min_size
    ws = list(cfg.guidance) if axis == "w" else [calib.w_star]
    out = []
    for row in cohort(cfg, split, chunk, samples, ws):
        rec = {"index": row[0].index, "area": row[0].area, "m_te": row[0].end_step[1]}
        if axis == "w":
            rec["dice"] = []
            for j, item in enumerate(row):
                cal_w = SelectionCalibration(ws[j], calib.cos_threshold, m_max_by_w[j], calib.a, calib.b)
                aam = analysis.cohort_maps([item], sch, SamMode(cfg.sam_mode))
                rec["dice"].append(float(analysis.dynamic_dice([item], aam, cal_w, k, ms)[0]))
        elif axis == "t_e-multiplier":
            rec["dice"] = [float(analysis.dynamic_dice(row, analysis.cohort_maps(row, sch, SamMode(cfg.sam_mode), mult),
                                                       calib, k, ms)[0]) for mult in cfg.te_multipliers]
        elif axis == "fixed-threshold":
            aam = analysis.cohort_maps(row, sch, SamMode(cfg.sam_mode))[0]
            rec["filtered"] = median_filter(aam, k)
            rec["dynamic"] = float(analysis.dynamic_dice(row, [aam], calib, k, ms)[0])
            rec["lesion"] = row[0].lesion
        else:
            rec["filtered"], rec["masks"] = [], []
            for mode in SamMode:
                aam = analysis.cohort_maps(row, sch, mode)[0]
                filtered, mask = analysis.dynamic_mask(aam, rec["m_te"], calib, k, ms)
                rec["filtered"].append(filtered)
                rec["masks"].append(mask)
            rec["lesion"], rec["foreground"] = row[0].lesion, row[0].foreground
        out.append(rec)
    return out


def cmd_ablate(cfg: ExperimentConfig, axis: str) -> Path:
    if axis not in ABLATION_AXES:
        raise ConfigurationError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    calib, cdoc = load_calibration(cfg)
    manifest = load_manifest(cfg)
    idx = _split_indices(manifest, "test", unhealthy_only=True)
    rows = run_chunks(cfg, _ablate_chunk, "test", idx, (axis, asdict(calib), cdoc["curve"]["m_max"]))
    h = cfg.digest()
    stem = cfg.out_dir / f"ablate_{axis}"
    summary: dict = {"axis": axis, "n": len(rows), "w_star": calib.w_star}
    if axis in ("w", "t_e-multiplier"):
        xs = list(cfg.guidance) if axis == "w" else list(cfg.te_multipliers)
        d = np.array([r["dice"] for r in rows])
        table = [(x, float(d[:, j].mean()), float(np.median(d[:, j]))) for j, x in enumerate(xs)]
        write_csv(stem.with_suffix(".csv"), [axis, "mean_dice", "median_dice"], table, h)
        summary["curve"] = [{"x": x, "mean_dice": m, "median_dice": md} for x, m, md in table]
    elif axis == "fixed-threshold":
        filtered = [r["filtered"] for r in rows]
        lesions = [r["lesion"] for r in rows]
        grid = analysis.threshold_grid(filtered, cfg.fixed_grid)
        curve = analysis.fixed_threshold_curve(filtered, lesions, grid, cfg.min_size)
        write_csv(stem.with_suffix(".csv"), ["threshold", "mean_dice"], zip(grid, curve), h)
        summary.update(dynamic_dice=float(np.mean([r["dynamic"] for r in rows])),
                       best_fixed_dice=float(curve.max()), best_fixed_threshold=float(grid[int(np.argmax(curve))]))
    else:
        table = []
        for j, mode in enumerate(SamMode):
            sc = setup_scores([r["masks"][j] for r in rows], [r["lesion"] for r in rows],
                              [r["filtered"][j] for r in rows], [r["foreground"] for r in rows])
            table.append((mode.value, sc.dice, sc.iou, sc.auprc))
        write_csv(stem.with_suffix(".csv"), ["mode", "dice", "iou", "auprc"], table, h)
        summary["modes"] = {m: {"dice": d, "iou": i, "auprc": a} for m, d, i, a in table}
    return write_json(stem.with_suffix(".json"), summary, h)


# baseline

def _baseline_chunk(job):
    cfg, split, chunk, lam, samples = _unpack(job)
    sch = cfg.schedule()
    out = []
    for pred, pos in _groups(cfg, samples):
        rng = np.random.default_rng([cfg.seed, 0xBA5E, int(lam), *(chunk[p] for p in pos)])
        maps = reconstruction_baseline(_stack(samples, pos), pred, sch, int(lam), rng)
        if not np.all(np.isfinite(maps)):
            raise NumericFailure(0, f"baseline at sample {_context(split, chunk, pos)}: non-finite value")
        for p, m in zip(pos, maps):
            out.append(median_filter(m, cfg.median_kernel))
    return out


def cmd_baseline(cfg: ExperimentConfig) -> Path:
    """Reconstruction baseline over the lambda grid.

    Each lambda gets the single global threshold that maximizes its
    unhealthy-setup DICE on the test split itself, so the reported numbers are
    an upper bound for the baseline.
    """
    manifest = load_manifest(cfg)
    idx = _split_indices(manifest, "test")
    truths = [manifest.sample("test", i) for i in idx]
    un = [k for k, s in enumerate(truths) if s.label == UNHEALTHY]
    if not un:
        raise EmptyInputError("baseline needs unhealthy test samples")
    h = cfg.digest()
    per_lambda = []
    for lam in cfg.baseline_lambdas:
        filtered = run_chunks(cfg, _baseline_chunk, "test", idx, lam)
        f_un = [filtered[k] for k in un]
        l_un = [truths[k].lesion_mask for k in un]
        grid = analysis.threshold_grid(f_un, cfg.fixed_grid)
        curve = analysis.fixed_threshold_curve(f_un, l_un, grid, cfg.min_size)
        thr = float(grid[int(np.argmax(curve))])
        masks = [connected_component_filter(f >= thr, cfg.min_size) for f in filtered]
        fg = [s.foreground for s in truths]
        lesions = [s.lesion_mask for s in truths]
        mixed = setup_scores(masks, lesions, filtered, fg)
        unhealthy = setup_scores([masks[k] for k in un], l_un, f_un, [fg[k] for k in un])
        per_lambda.append({"lambda": int(lam), "threshold": thr, "mixed": asdict(mixed),
                           "unhealthy": asdict(unhealthy)})
        log.info("baseline lambda=%d unhealthy dice %.4f", lam, unhealthy.dice)
    best = max(per_lambda, key=lambda r: r["unhealthy"]["dice"])
    write_csv(cfg.out_dir / "baseline.csv", ["lambda", "threshold", "unhealthy_dice", "unhealthy_iou",
                                             "unhealthy_auprc", "mixed_dice", "mixed_iou", "mixed_auprc"],
              [(r["lambda"], r["threshold"], r["unhealthy"]["dice"], r["unhealthy"]["iou"], r["unhealthy"]["auprc"],
                r["mixed"]["dice"], r["mixed"]["iou"], r["mixed"]["auprc"]) for r in per_lambda], h)
    return write_json(cfg.out_dir / "baseline.json", {"per_lambda": per_lambda, "best_lambda": best["lambda"],
                                                      "best": best, "n": len(idx), "n_unhealthy": len(un)}, h)
